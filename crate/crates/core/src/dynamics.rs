//! Physical and risk-neutral VAR(1) dynamics of the stacked state
//! `x_β = (Ṽ_β', r̃_β)'` along a fixed regime path, with conditional moments,
//! the forward-measure shift and the zero-coupon bond price.
//!
//! The VAR(1) form is `Q_0 x_β = ν_β + Q_1 x_{β−1} + 𝖦_β ξ_β`, `ξ_β ~ N(0, Σ_{s_β})`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::linearization::LinearizationSchedule;
use crate::params::ModelParams;
use crate::regime::RegimePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Physical,
    RiskNeutral,
    Forward,
}

/// Coefficients for `β = t+1..=T`, stored at index `β − t − 1`.
#[derive(Debug, Clone)]
pub struct PathDynamics {
    pub measure: Measure,
    /// Valuation time `t`.
    pub start: usize,
    pub n: usize,
    pub path: RegimePath,
    pub q0: Vec<DMatrix<f64>>,
    pub q0_inv: Vec<DMatrix<f64>>,
    pub q1: Vec<DMatrix<f64>>,
    pub intercept: Vec<DVector<f64>>,
    /// `𝖦_β = blockdiag(G_β, 1)`.
    pub loading: Vec<DMatrix<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    /// `F_β` (risk-neutral only).
    pub rate_scale: Option<Vec<f64>>,
}

impl PathDynamics {
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    /// Maturity `T`.
    pub fn end(&self) -> usize {
        self.start + self.q0.len()
    }

    pub fn steps(&self) -> usize {
        self.q0.len()
    }

    fn idx(&self, beta: usize) -> usize {
        assert!(beta > self.start && beta <= self.end(), "β outside t+1..=T");
        beta - self.start - 1
    }

    /// `Q_{0,β}^{−1} Q_{1,β}`.
    pub fn companion(&self, beta: usize) -> DMatrix<f64> {
        let k = self.idx(beta);
        &self.q0_inv[k] * &self.q1[k]
    }

    /// `Q_{0,β}^{−1} 𝖦_β Σ_{s_β} 𝖦_β' Q_{0,β}^{−1}'`.
    pub fn shock_cov(&self, beta: usize) -> DMatrix<f64> {
        let k = self.idx(beta);
        let b = &self.q0_inv[k] * &self.loading[k];
        symmetrize(&(&b * &self.cov[k] * b.transpose()))
    }

    /// One transition `x_β = Q_0^{−1}(ν_β + Q_1 x_{β−1} + 𝖦_β ξ)`.
    pub fn step(&self, beta: usize, prev: &DVector<f64>, shock: &DVector<f64>) -> DVector<f64> {
        let k = self.idx(beta);
        &self.q0_inv[k] * (&self.intercept[k] + &self.q1[k] * prev + &self.loading[k] * shock)
    }
}

fn delta(n: usize) -> DVector<f64> {
    DVector::from_fn(2 * n, |i, _| if i >= n { 1.0 } else { 0.0 })
}

fn loading(g: &DVector<f64>) -> DMatrix<f64> {
    let m = g.len();
    let mut l = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        l[(i, i)] = g[i];
    }
    l[(m, m)] = 1.0;
    l
}

fn check_path(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &RegimePath,
    t: usize,
) -> Result<usize> {
    let end = t + path.len();
    if path.is_empty() {
        return Err(Error::invalid(
            "regime path must cover at least one future date",
        ));
    }
    if end > sched.horizon() {
        return Err(Error::invalid(format!(
            "maturity {end} exceeds the schedule horizon {}",
            sched.horizon()
        )));
    }
    if sched.n != params.n {
        return Err(Error::invalid("schedule and parameters disagree on n"));
    }
    if path.as_slice().iter().any(|&s| s >= params.n_regimes()) {
        return Err(Error::invalid("regime index out of range"));
    }
    Ok(end)
}

/// `Σ_vu Σ_uu^{−1}` as a `2n` vector; zero when `Σ_vu = 0` even if `Σ_uu` is singular.
pub fn rate_projection(params: &ModelParams, regime: usize) -> Result<DVector<f64>> {
    let suu = params.sigma_uu(regime);
    let svu = params.sigma_vu(regime);
    if svu.iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(svu.len()));
    }
    let chol =
        nalgebra::Cholesky::new(suu).ok_or(Error::SingularCovariance { regime: regime + 1 })?;
    Ok(chol.solve(&svu))
}

/// Girsanov kernel `θ = Θ((i − δ) r̃ − C_k ψ_β − ½ 𝒟[Σ_uu])`, `Θ = [G_β ; Σ_vu Σ_uu^{−1}]`.
pub fn girsanov_kernel(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    regime: usize,
    beta: usize,
    rate: f64,
) -> Result<DVector<f64>> {
    let n = params.n;
    let suu = params.sigma_uu(regime);
    nalgebra::Cholesky::new(suu.clone()).ok_or(Error::SingularCovariance { regime: regime + 1 })?;
    let proj = rate_projection(params, regime)?;
    let ones_minus_delta = DVector::from_fn(2 * n, |i, _| if i < n { 1.0 } else { 0.0 });
    let core =
        ones_minus_delta * rate - params.c_k(regime) * sched.psi(beta) - suu.diagonal() * 0.5;
    let mut theta = DVector::zeros(2 * n + 1);
    theta
        .rows_mut(0, 2 * n)
        .copy_from(&sched.g[beta].component_mul(&core));
    theta[2 * n] = proj.dot(&core);
    Ok(theta)
}

/// Physical-measure coefficients along `path` (`s_{t+1..T}`).
pub fn build_p_dynamics(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &RegimePath,
    t: usize,
) -> Result<PathDynamics> {
    let end = check_path(params, sched, path, t)?;
    let n = params.n;
    let m = 2 * n;
    let del = delta(n);
    let steps = end - t;
    let mut dynamics = empty(Measure::Physical, t, n, path, steps);
    for beta in t + 1..=end {
        let j = path.as_slice()[beta - t - 1];
        let g = &sched.g[beta];
        let gd = g.component_mul(&del);
        let mut q0 = DMatrix::identity(m + 1, m + 1);
        let mut q0_inv = DMatrix::identity(m + 1, m + 1);
        for i in 0..m {
            q0[(i, m)] = -gd[i];
            q0_inv[(i, m)] = gd[i];
        }
        let mut q1 = loading(g);
        q1[(m, m)] = 1.0;
        let psi = sched.psi(beta);
        let p = &sched.log_payments[beta];
        let nu_v = g.component_mul(&(params.c_k(j) * psi))
            - (g - DVector::from_element(m, 1.0)).component_mul(p)
            - &sched.h[beta];
        let mut nu = DVector::zeros(m + 1);
        nu.rows_mut(0, m).copy_from(&nu_v);
        nu[m] = params.c_r(j).dot(psi);
        dynamics.q0.push(q0);
        dynamics.q0_inv.push(q0_inv);
        dynamics.q1.push(q1);
        dynamics.intercept.push(nu);
        dynamics.loading.push(loading(g));
        dynamics.cov.push(params.sigma(j).clone());
    }
    Ok(dynamics)
}

/// Risk-neutral coefficients along `path`.
pub fn build_q_dynamics(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &RegimePath,
    t: usize,
) -> Result<PathDynamics> {
    let end = check_path(params, sched, path, t)?;
    let n = params.n;
    let m = 2 * n;
    let del = delta(n);
    let ones = DVector::from_element(m, 1.0);
    let steps = end - t;
    let mut dynamics = empty(Measure::RiskNeutral, t, n, path, steps);
    let mut scales = Vec::with_capacity(steps);
    for beta in t + 1..=end {
        let j = path.as_slice()[beta - t - 1];
        let g = &sched.g[beta];
        let proj = rate_projection(params, j)?;
        let f = 1.0 - proj.dot(&(&ones - &del));
        if f.abs() < 1e-12 {
            return Err(Error::numerical(format!(
                "risk-neutral rate coefficient F vanishes at β={beta} (regime {})",
                j + 1
            )));
        }
        let mut q0 = DMatrix::identity(m + 1, m + 1);
        q0[(m, m)] = f;
        let mut q0_inv = DMatrix::identity(m + 1, m + 1);
        q0_inv[(m, m)] = 1.0 / f;
        let mut q1 = loading(g);
        for i in 0..m {
            q1[(i, m)] = g[i];
        }
        let psi = sched.psi(beta);
        let half_var = params.sigma_uu(j).diagonal() * 0.5;
        let nu_v = -(g - &ones).component_mul(&sched.log_payments[beta])
            - g.component_mul(&half_var)
            - &sched.h[beta];
        let mut nu = DVector::zeros(m + 1);
        nu.rows_mut(0, m).copy_from(&nu_v);
        nu[m] = params.c_r(j).dot(psi) - proj.dot(&(params.c_k(j) * psi + half_var));
        dynamics.q0.push(q0);
        dynamics.q0_inv.push(q0_inv);
        dynamics.q1.push(q1);
        dynamics.intercept.push(nu);
        dynamics.loading.push(loading(g));
        dynamics.cov.push(params.sigma(j).clone());
        scales.push(f);
    }
    dynamics.rate_scale = Some(scales);
    Ok(dynamics)
}

fn empty(measure: Measure, t: usize, n: usize, path: &RegimePath, steps: usize) -> PathDynamics {
    PathDynamics {
        measure,
        start: t,
        n,
        path: path.clone(),
        q0: Vec::with_capacity(steps),
        q0_inv: Vec::with_capacity(steps),
        q1: Vec::with_capacity(steps),
        intercept: Vec::with_capacity(steps),
        loading: Vec::with_capacity(steps),
        cov: Vec::with_capacity(steps),
        rate_scale: None,
    }
}

/// `Π_{β,i}` for `t <= β <= i <= T`: `(∏_{α=β+1..i} Q_{0,α}^{−1} Q_{1,α}) Q_{0,β}^{−1}`,
/// without the trailing `Q_{0,β}^{−1}` when `β = t`.
pub fn transition_product(dynamics: &PathDynamics, beta: usize, i: usize) -> DMatrix<f64> {
    let t = dynamics.start;
    assert!(
        t <= beta && beta <= i && i <= dynamics.end(),
        "need t <= β <= i <= T"
    );
    let mut pi = if beta == t {
        DMatrix::identity(dynamics.dim(), dynamics.dim())
    } else {
        dynamics.q0_inv[beta - t - 1].clone()
    };
    for alpha in beta + 1..=i {
        pi = dynamics.companion(alpha) * pi;
    }
    pi
}

/// All `Π_{β,i}`, built by extending each row one factor at a time.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    start: usize,
    rows: Vec<Vec<DMatrix<f64>>>,
}

impl TransitionTable {
    pub fn new(dynamics: &PathDynamics) -> Self {
        let t = dynamics.start;
        let end = dynamics.end();
        let companions: Vec<DMatrix<f64>> = (t + 1..=end).map(|a| dynamics.companion(a)).collect();
        let rows = (t..=end)
            .map(|beta| {
                let mut row = Vec::with_capacity(end - beta + 1);
                let mut pi = if beta == t {
                    DMatrix::identity(dynamics.dim(), dynamics.dim())
                } else {
                    dynamics.q0_inv[beta - t - 1].clone()
                };
                row.push(pi.clone());
                for alpha in beta + 1..=end {
                    pi = &companions[alpha - t - 1] * pi;
                    row.push(pi.clone());
                }
                row
            })
            .collect();
        Self { start: t, rows }
    }

    pub fn get(&self, beta: usize, i: usize) -> &DMatrix<f64> {
        &self.rows[beta - self.start][i - beta]
    }
}

/// Conditional law of `x_{t+1..T}` given `x_t` along one regime path.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub measure: Measure,
    pub start: usize,
    pub dim: usize,
    /// `μ_{i|t}` at index `i − t − 1`.
    pub means: Vec<DVector<f64>>,
    /// Stacked covariance; block `(i1, i2)` is `Σ_{i1,i2|t}`.
    pub cov: DMatrix<f64>,
}

impl ConditionalMoments {
    pub fn end(&self) -> usize {
        self.start + self.means.len()
    }

    pub fn mean(&self, i: usize) -> &DVector<f64> {
        &self.means[i - self.start - 1]
    }

    pub fn block(&self, i1: usize, i2: usize) -> DMatrix<f64> {
        let d = self.dim;
        self.cov
            .view(
                ((i1 - self.start - 1) * d, (i2 - self.start - 1) * d),
                (d, d),
            )
            .into_owned()
    }

    /// Scalar covariance entry between component `a` at `i1` and `b` at `i2`.
    pub fn entry(&self, i1: usize, a: usize, i2: usize, b: usize) -> f64 {
        let d = self.dim;
        self.cov[((i1 - self.start - 1) * d + a, (i2 - self.start - 1) * d + b)]
    }
}

/// `μ_{i|t} = Π_{t,i} x_t + Σ_β Π_{β,i} ν_β` and
/// `Σ_{i1,i2|t} = Σ_{β <= i1∧i2} Π_{β,i1} 𝖦_β Σ_{s_β} 𝖦_β' Π_{β,i2}'`.
///
/// Diagonal blocks follow `Σ_{i,i} = A_i Σ_{i−1,i−1} A_i' + Q_{0,i}^{−1} 𝖦 Σ 𝖦' Q_{0,i}^{−1}'`
/// and off-diagonal blocks `Σ_{i1,i2} = Σ_{i1,i1} Π_{i1,i2}'` (homogeneous part), which
/// is the same sum regrouped.
pub fn conditional_moments(dynamics: &PathDynamics, x_t: &DVector<f64>) -> ConditionalMoments {
    let d = dynamics.dim();
    let t = dynamics.start;
    let h = dynamics.steps();
    assert_eq!(x_t.len(), d, "state dimension mismatch");
    let companions: Vec<DMatrix<f64>> = (t + 1..=t + h).map(|a| dynamics.companion(a)).collect();
    let mut means = Vec::with_capacity(h);
    let mut m = x_t.clone();
    for beta in t + 1..=t + h {
        let k = beta - t - 1;
        m = &companions[k] * &m + &dynamics.q0_inv[k] * &dynamics.intercept[k];
        means.push(m.clone());
    }
    let mut cov = DMatrix::zeros(h * d, h * d);
    let mut diag = DMatrix::zeros(d, d);
    for k in 0..h {
        diag = symmetrize(
            &(&companions[k] * &diag * companions[k].transpose() + dynamics.shock_cov(t + k + 1)),
        );
        cov.view_mut((k * d, k * d), (d, d)).copy_from(&diag);
        let mut right = diag.clone();
        for k2 in k + 1..h {
            right = &right * companions[k2].transpose();
            cov.view_mut((k * d, k2 * d), (d, d)).copy_from(&right);
            cov.view_mut((k2 * d, k * d), (d, d))
                .copy_from(&right.transpose());
        }
    }
    ConditionalMoments {
        measure: dynamics.measure,
        start: t,
        dim: d,
        means,
        cov,
    }
}

/// Moves risk-neutral moments to the `T`-forward measure:
/// `μ̂_s = μ̃_s − Σ_{β=t+1..T−1} Σ̃_{s,β}[:, ñ]`; covariance is unchanged.
pub fn forward_shift(moments: &ConditionalMoments) -> Result<ConditionalMoments> {
    if moments.measure != Measure::RiskNeutral {
        return Err(Error::invalid("forward shift needs risk-neutral moments"));
    }
    let d = moments.dim;
    let t = moments.start;
    let end = moments.end();
    let rate = d - 1;
    let means = (t + 1..=end)
        .map(|s| {
            let mut shift = DVector::zeros(d);
            for beta in t + 1..end {
                for a in 0..d {
                    shift[a] += moments.entry(s, a, beta, rate);
                }
            }
            moments.mean(s) - shift
        })
        .collect();
    Ok(ConditionalMoments {
        measure: Measure::Forward,
        start: t,
        dim: d,
        means,
        cov: moments.cov.clone(),
    })
}

/// Which spot rate opens the discount sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscountConvention {
    /// `r̃_t`, known at the valuation date.
    #[default]
    KnownRate,
    /// Model mean of `r̃_{t+1}` in place of `r̃_t`.
    Literal,
}

/// `B_t = exp{−r̃_t − Σ_{β=t+1..T−1} μ̃_β[ñ] + ½ Σ_α Σ_β Σ̃_{α,β}[ñ,ñ]}`.
pub fn bond_price(
    moments: &ConditionalMoments,
    known_rate: f64,
    convention: DiscountConvention,
) -> Result<f64> {
    if moments.measure != Measure::RiskNeutral {
        return Err(Error::invalid("bond price needs risk-neutral moments"));
    }
    let t = moments.start;
    let end = moments.end();
    let r = moments.dim - 1;
    let lead = match convention {
        DiscountConvention::KnownRate => known_rate,
        DiscountConvention::Literal => moments.mean(t + 1)[r],
    };
    let mut mean = 0.0;
    let mut var = 0.0;
    for beta in t + 1..end {
        mean += moments.mean(beta)[r];
        for alpha in t + 1..end {
            var += moments.entry(alpha, r, beta, r);
        }
    }
    Ok((-lead - mean + 0.5 * var).exp())
}
