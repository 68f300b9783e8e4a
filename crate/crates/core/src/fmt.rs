//! Numeric text formatting shared by every CSV writer.

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalise -0
        return "0".to_string();
    }
    format!("{v:.16e}")
}
