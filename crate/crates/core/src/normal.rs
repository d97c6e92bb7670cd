//! Standard normal distribution helpers.

use statrs::function::erf;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// `Φ(x)`, accurate in both tails.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ^{-1}(p)` for `p` in `(0, 1)`; returns `±∞` at the end points.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut q = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // Halley refinement against the accurate cdf.
    for _ in 0..2 {
        let e = cdf(q) - p;
        let u = e * SQRT_2PI * (0.5 * q * q).exp();
        q -= u / (1.0 + 0.5 * q * u);
    }
    q
}
