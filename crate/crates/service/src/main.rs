use eqcredit_service::{router, AppState, DEFAULT_CACHE_CAPACITY};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let addr = std::env::var("EQCREDIT_ADDR").unwrap_or_else(|_| "127.0.0.1:8080".into());
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(DEFAULT_CACHE_CAPACITY))).await
}
