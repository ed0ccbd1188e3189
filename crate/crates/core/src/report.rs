//! Fixed-format number rendering shared by every CSV writer.

/// Formats a value with 17 significant digits (`d.dddddddddddddddde±x`).
///
/// Non-finite values are written as `NaN`, `inf` or `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Like [`fmt_f64`] but renders `None` as an empty field.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
