//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use mbpetc::certificates::CertifiedConstants;

/// Benchmark constants from a grid-200 certification, rounded up so the
/// derived sampling period stays conservative without re-certifying.
pub fn pendulum_constants() -> CertifiedConstants {
    CertifiedConstants::from_estimates(0.258, 0.35, 1.7019, 2.7606, 11.5534, Some(0.688_600_499_191_429_6), 200).unwrap()
}
