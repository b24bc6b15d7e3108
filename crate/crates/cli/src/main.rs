fn main() {
    std::process::exit(eqcredit_cli::run(std::env::args_os()));
}
