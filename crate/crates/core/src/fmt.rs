/// Fixed-point decimal with at least `sig` significant digits.
pub(crate) fn decimal(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i64;
    let prec = (sig as i64 - 1 - exp).clamp(0, 340) as usize;
    format!("{x:.prec$}")
}
