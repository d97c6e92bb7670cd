//! Gaussian orthant probabilities `ℙ[X <= b]`, `X ~ N(μ, Σ)`.
//!
//! One dimension is closed form. Higher dimensions use Genz's
//! separation-of-variables transform integrated with randomly shifted
//! Richtmyer lattice rules; the spread across shifts gives the standard error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, psd_cholesky};
use crate::normal;
use crate::rng::Substreams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QmcConfig {
    /// Largest lattice size per shift. Sizes double from 128 until the
    /// standard error reaches `tolerance` or this cap.
    pub points: usize,
    /// Independent random shifts.
    pub shifts: usize,
    pub seed: u64,
    /// Target standard error, absolute.
    pub tolerance: f64,
    /// Target standard error relative to the estimate.
    pub rel_tolerance: f64,
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self {
            points: 4096,
            shifts: 16,
            seed: 0,
            tolerance: 1e-10,
            rel_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthantEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut k = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= k).all(|&p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

pub fn orthant_probability(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    upper: &DVector<f64>,
    config: &QmcConfig,
) -> Result<OrthantEstimate> {
    let n = mean.len();
    if cov.shape() != (n, n) || upper.len() != n {
        return Err(Error::invalid("orthant probability dimensions disagree"));
    }
    if n == 0 {
        return Ok(OrthantEstimate {
            value: 1.0,
            std_error: 0.0,
        });
    }
    let chol = psd_cholesky(cov, 1e-12)
        .map_err(|_| Error::numerical("asset covariance is not positive semi-definite"))?;
    let b = upper - mean;
    if n == 1 {
        let s = chol[(0, 0)];
        let value = if s > 0.0 {
            normal::cdf(b[0] / s)
        } else if b[0] >= 0.0 {
            1.0
        } else {
            0.0
        };
        return Ok(OrthantEstimate {
            value,
            std_error: 0.0,
        });
    }
    if config.points == 0 || config.shifts < 2 {
        return Err(Error::invalid(
            "QMC needs points >= 1 and at least 2 shifts",
        ));
    }
    // A single coordinate uses the equally spaced lattice, which the tent
    // transform makes second-order accurate.
    let gens: Option<Vec<f64>> = (n > 2).then(|| {
        primes(n - 1)
            .iter()
            .map(|&p| (p as f64).sqrt().fract())
            .collect()
    });
    let streams = Substreams::new(config.seed);
    let shifts: Vec<Vec<f64>> = (0..config.shifts)
        .map(|r| {
            let mut rng = streams.stream(r as u64);
            (0..n - 1).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    let mut points = 128.min(config.points);
    loop {
        let estimates: Vec<f64> = shifts
            .iter()
            .map(|shift| {
                let vals: Vec<f64> = (1..=points)
                    .map(|k| {
                        let w: Vec<f64> = (0..n - 1)
                            .map(|i| {
                                let g = gens.as_ref().map_or(1.0 / points as f64, |g| g[i]);
                                let u = (k as f64 * g + shift[i]).fract();
                                (2.0 * u - 1.0).abs()
                            })
                            .collect();
                        genz_integrand(&chol, &b, &w)
                    })
                    .collect();
                pairwise_sum(&vals) / points as f64
            })
            .collect();
        let r = config.shifts as f64;
        let value = pairwise_sum(&estimates) / r;
        // Scaled so tiny probabilities do not underflow when squared.
        let scale = estimates.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let std_error = if scale > 0.0 {
            let var = estimates
                .iter()
                .map(|e| ((e - value) / scale).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            scale * (var / r).sqrt()
        } else {
            0.0
        };
        if std_error <= config.tolerance.max(config.rel_tolerance * value.abs())
            || points >= config.points
        {
            return Ok(OrthantEstimate {
                value: value.clamp(0.0, 1.0),
                std_error,
            });
        }
        points = (2 * points).min(config.points);
    }
}

/// `∏_i e_i` along one point `w ∈ [0,1)^{n−1}`.
fn genz_integrand(chol: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> f64 {
    let n = b.len();
    let mut y = vec![0.0; n];
    let mut f = 1.0;
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= chol[(i, j)] * y[j];
        }
        let lii = chol[(i, i)];
        let e = if lii > 0.0 {
            normal::cdf(s / lii)
        } else if s >= 0.0 {
            1.0
        } else {
            0.0
        };
        f *= e;
        if f == 0.0 {
            return 0.0;
        }
        if i + 1 < n {
            let q = (w[i] * e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            y[i] = normal::quantile(q);
        }
    }
    f
}
