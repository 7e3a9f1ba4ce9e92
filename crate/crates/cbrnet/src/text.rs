//! Float formatting shared by every file writer.

use anyhow::{anyhow, Result};

/// 17 significant digits, enough for a bit-exact round trip.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Shortest representation that parses back to the same bits. Used for
/// configuration values echoed into tables.
pub fn short(v: f64) -> String {
    format!("{v}")
}

pub fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("NA"), short)
}

pub fn parse_float(s: &str, what: impl FnOnce() -> String) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| anyhow!("{}: `{s}` is not a number", what()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0] {
            let back: f64 = float(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
            let back: f64 = short(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert_eq!(float(0.5), "5.0000000000000000e-1");
        assert_eq!(optional(None), "NA");
    }
}
