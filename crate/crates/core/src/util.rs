//! Small internal helpers.

/// Ceiling of `fraction * n`, guarded against the binary representation of
/// decimal fractions: `0.2 * 160` evaluates to slightly above 32 in `f64`,
/// but the intended count is 32, not 33.
pub(crate) fn guarded_ceil_fraction(fraction: f64, n: usize) -> usize {
    libm::ceil(fraction * n as f64 - 1e-9) as usize
}
