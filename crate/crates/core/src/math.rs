//! Float intrinsics routed through `std` or `libm` depending on features.

#[cfg(feature = "std")]
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Exact 2^k for the small exponents used by the learning-rate grid.
#[inline]
pub(crate) fn pow2(k: i32) -> f64 {
    if k >= 0 {
        (1u64 << k.min(62)) as f64
    } else {
        1.0 / (1u64 << (-k).min(62)) as f64
    }
}
