//! Pinned numeric formatting for CSV output.
//!
//! Every number is written as a plain decimal with 10 significant digits so
//! reruns produce byte-identical files.

const SIG_DIGITS: i32 = 10;

/// Formats `v` as a fixed decimal with 10 significant digits.
///
/// Non-finite values are written as `inf`, `-inf` or `nan`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return format!("{:.*}", (SIG_DIGITS - 1) as usize, 0.0);
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (SIG_DIGITS - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // -0.000... after rounding
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Writes a header and rows of numbers.
pub fn write_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_num).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
