//! Small text-output helpers shared by dump writers and the CLI.

/// Render a float either at the fixed six-decimal default or at full
/// round-trip precision.
pub(crate) fn fmt_f64(x: f64, full_precision: bool) -> String {
    if full_precision {
        format!("{x}")
    } else {
        format!("{x:.6}")
    }
}

/// Quote a CSV field only when it needs it.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
