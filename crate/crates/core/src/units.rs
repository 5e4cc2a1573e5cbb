//! Decibel and speed conversions.

/// `10·log10` of a power ratio.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn mps_to_kmh(v: f64) -> f64 {
    v * 3.6
}
