//! Simulated time. Timestamps and durations are integer microseconds
//! internally so event ordering never depends on float ties; user-facing
//! values are milliseconds.

/// Simulated timestamp or duration in microseconds.
pub type Micros = i64;

/// Convert a millisecond duration to microseconds, rounding to nearest.
pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1000.0).round() as Micros
}

/// Convert microseconds to milliseconds.
pub fn us_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}

/// Convert a second duration to microseconds, rounding to nearest.
pub fn secs_to_us(secs: f64) -> Micros {
    (secs * 1_000_000.0).round() as Micros
}
