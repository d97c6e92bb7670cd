//! Log-linearization schedules for the value recursions.
//!
//! `μ_t` is the mean log payment-to-value ratio; `g_t = 1 + e^{μ_t}` and
//! `h_t = g_t ⊙ (ln g_t − μ_t) + μ_t` are the constants of the first-order
//! expansion. The asset-level schedule linearizes `ln(V^e + V^ℓ)` around the
//! mean log liability-to-equity ratio `μ^a_t`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market_data::LogPanel;
use crate::params::ModelParams;

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 100;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `μ − ln(1 + e^μ)`, the left side of the scalar recurrence.
pub fn log_ratio_map(mu: f64) -> f64 {
    -softplus(-mu)
}

/// Analytic inverse of [`log_ratio_map`]: `μ = −ln(e^{−a} − 1)` for `a < 0`.
pub fn closed_form_mu(target: f64) -> f64 {
    -(-target).exp_m1().ln()
}

fn newton_inner(
    target: f64,
    init: f64,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<f64, String> {
    if !(target < 0.0) {
        return Err(format!(
            "target {target} must be negative (the map has range (-inf, 0))"
        ));
    }
    if !(tol > 0.0) {
        return Err("tolerance must be positive".into());
    }
    let mut mu = if init.is_finite() { init } else { 0.0 };
    for _ in 0..max_iter {
        let resid = log_ratio_map(mu) - target;
        // J^{-1} = 1 + e^μ
        let step = (1.0 + mu.exp()) * resid;
        if !step.is_finite() {
            return Err(format!("Newton step overflowed at mu = {mu}"));
        }
        mu -= step;
        if step.abs() <= 1e-14 * (1.0 + mu.abs()) {
            let final_resid = log_ratio_map(mu) - target;
            if final_resid.abs() <= tol {
                return Ok(mu);
            }
        }
    }
    Err(format!("no convergence after {max_iter} iterations"))
}

/// Solves `μ − ln(1 + e^μ) = target` by Newton's iteration with `J^{-1} = 1 + e^μ`.
pub fn newton_solve_mu(target: f64, init: f64, tol: f64, max_iter: usize) -> Result<f64> {
    newton_inner(target, init, tol, max_iter).map_err(|message| Error::Newton {
        t: 0,
        component: 0,
        message,
    })
}

/// Asset-level linearization at one date.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetLinearization {
    pub mu_a: DVector<f64>,
    pub g_a: DVector<f64>,
    pub h_a: DVector<f64>,
    /// `W^a = [diag(1/g^a) : I − diag(1/g^a)]`, `n × 2n`.
    pub weights: DMatrix<f64>,
}

impl AssetLinearization {
    /// `(G^a)^{-1} h^a`.
    pub fn intercept(&self) -> DVector<f64> {
        self.h_a.component_div(&self.g_a)
    }

    /// Linearized `ln V^a` from stacked log values `(Ṽ^e, Ṽ^ℓ)`.
    pub fn apply(&self, log_values: &DVector<f64>) -> DVector<f64> {
        &self.weights * log_values + self.intercept()
    }
}

/// `g^a = 1 + e^{μ^a}`, `h^a = g^a ⊙ (ln g^a − μ^a) + μ^a`, and the weight matrix.
pub fn asset_linearize(mu_a: &DVector<f64>) -> AssetLinearization {
    let n = mu_a.len();
    let g_a = mu_a.map(|m| 1.0 + m.exp());
    let h_a = DVector::from_fn(n, |i, _| g_a[i] * (softplus(mu_a[i]) - mu_a[i]) + mu_a[i]);
    let mut weights = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        let w = 1.0 / g_a[i];
        weights[(i, i)] = w;
        weights[(i, n + i)] = 1.0 - w;
    }
    AssetLinearization {
        mu_a: mu_a.clone(),
        g_a,
        h_a,
        weights,
    }
}

/// Everything the schedule needs that is known at time 0.
#[derive(Debug, Clone)]
pub struct ScheduleInputs {
    /// `Ṽ_0`.
    pub log_values0: DVector<f64>,
    /// `r̃_0`.
    pub log_rate0: f64,
    /// `p̃_t` for `t = 0..=T`.
    pub log_payments: Vec<DVector<f64>>,
    /// `ψ_t` at index `t − 1`.
    pub exog: Vec<DVector<f64>>,
    /// Leading term of `𝔼[r̃_t | 𝓕_0] = r̃_1 + Σ_{i=2..t} 𝔼[c_{r,s_i}]'ψ_i`.
    pub rate_anchor: f64,
    /// Replaces the model-implied `μ^a_t` (`t = 0..=T`) when set.
    pub asset_override: Option<Vec<DVector<f64>>>,
}

impl ScheduleInputs {
    /// Inputs from an observed panel. Requires payments at `t = 0`.
    pub fn from_log_panel(lp: &LogPanel) -> Result<Self> {
        let log_payments = lp
            .log_payments
            .iter()
            .enumerate()
            .map(|(t, p)| {
                p.clone().ok_or_else(|| {
                    Error::invalid(format!(
                        "payments at t={t} are required to start the linearization schedule"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            log_values0: lp.log_values[0].clone(),
            log_rate0: lp.log_rates[0],
            log_payments,
            exog: lp.exog.clone(),
            rate_anchor: lp.log_rates[1],
            asset_override: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.exog.len()
    }

    /// Uses the observed log liability-to-equity ratios as `μ^a_t`.
    pub fn with_data_asset_means(mut self, lp: &LogPanel) -> Self {
        let n = lp.n;
        let means = lp
            .log_values
            .iter()
            .map(|v| DVector::from_fn(n, |i, _| v[n + i] - v[i]))
            .collect();
        self.asset_override = Some(means);
        self
    }
}

/// Per-date linearization constants for `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct LinearizationSchedule {
    pub n: usize,
    pub mu: Vec<DVector<f64>>,
    pub g: Vec<DVector<f64>>,
    pub h: Vec<DVector<f64>>,
    pub asset: Vec<AssetLinearization>,
    /// `p̃_t`, `t = 0..=T`.
    pub log_payments: Vec<DVector<f64>>,
    /// `ψ_t` at index `t − 1`.
    pub exog: Vec<DVector<f64>>,
    /// Recurrence targets `a_t` with `μ_t − ln(1 + e^{μ_t}) = a_t`, `t = 1..=T` at index `t − 1`.
    pub targets: Vec<DVector<f64>>,
}

impl LinearizationSchedule {
    pub fn horizon(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn psi(&self, t: usize) -> &DVector<f64> {
        &self.exog[t - 1]
    }

    /// `G_t = diag(g_t)`.
    pub fn big_g(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.g[t])
    }

    /// Largest `|M_t(μ_t)|` over all dates and components.
    pub fn max_residual(&self) -> f64 {
        self.targets
            .iter()
            .enumerate()
            .flat_map(|(k, a)| {
                let mu = &self.mu[k + 1];
                a.iter()
                    .zip(mu.iter())
                    .map(|(a, m)| (log_ratio_map(*m) - a).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, component, mu, g, h` (components 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,component,mu,g,h\n");
        for t in 0..=self.horizon() {
            for c in 0..self.mu[t].len() {
                out.push_str(&format!(
                    "{t},{},{},{},{}\n",
                    c + 1,
                    crate::fmt_num(self.mu[t][c]),
                    crate::fmt_num(self.g[t][c]),
                    crate::fmt_num(self.h[t][c])
                ));
            }
        }
        out
    }
}

/// `(𝔼[C_{k,s_t} | 𝓕_0], 𝔼[r̃_t | 𝓕_0])` for `t >= 1`.
///
/// Regime marginals are `p_0 P̂^{t−1}`, so `t = 1` reproduces `p_0`.
pub fn expected_regime_quantities(
    params: &ModelParams,
    exog: &[DVector<f64>],
    rate_anchor: f64,
    t: usize,
) -> (DMatrix<f64>, f64) {
    assert!(t >= 1 && t <= exog.len(), "t must lie in 1..=T");
    let marg = params.chain.marginal(t);
    let mut ck = DMatrix::zeros(2 * params.n, params.l);
    for j in 0..params.n_regimes() {
        ck += params.c_k(j) * marg[j];
    }
    let mut rate = rate_anchor;
    for i in 2..=t {
        rate += expected_c_r(params, i).dot(&exog[i - 1]);
    }
    (ck, rate)
}

/// `𝔼[c_{r,s_t} | 𝓕_0]`.
fn expected_c_r(params: &ModelParams, t: usize) -> DVector<f64> {
    let marg = params.chain.marginal(t);
    let mut cr = DVector::zeros(params.l);
    for j in 0..params.n_regimes() {
        cr += params.c_r(j) * marg[j];
    }
    cr
}

fn delta(n: usize) -> DVector<f64> {
    DVector::from_fn(2 * n, |i, _| if i >= n { 1.0 } else { 0.0 })
}

/// `h = g ⊙ (ln g − μ) + μ`.
fn h_from(mu: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mu.len(), |i, _| g[i] * (softplus(mu[i]) - mu[i]) + mu[i])
}

/// Solves the `μ_t` recurrence for `t = 1..=T` and fills `g`, `h` and the asset schedule.
pub fn solve_mu_schedule(
    inputs: &ScheduleInputs,
    params: &ModelParams,
) -> Result<LinearizationSchedule> {
    let n = params.n;
    let t_max = inputs.horizon();
    if inputs.log_payments.len() != t_max + 1 {
        return Err(Error::invalid("log payments must cover t = 0..=T"));
    }
    if inputs.log_values0.len() != 2 * n || inputs.log_payments.iter().any(|p| p.len() != 2 * n) {
        return Err(Error::invalid(
            "log values/payments must have 2n components",
        ));
    }
    if inputs.exog.iter().any(|p| p.len() != params.l) {
        return Err(Error::invalid("exogenous rows must have l components"));
    }
    if t_max == 0 {
        return Err(Error::invalid("schedule horizon must be at least 1"));
    }
    let del = delta(n);
    let mu0 = &inputs.log_payments[0] - &inputs.log_values0;
    let g0 = mu0.map(|m| 1.0 + m.exp());
    let mut mu = vec![mu0.clone()];
    let mut g = vec![g0.clone()];
    let mut h = vec![h_from(&mu0, &g0)];
    let mut targets = Vec::with_capacity(t_max);
    let mut expected_rate = inputs.rate_anchor;
    for t in 1..=t_max {
        let marg = params.chain.marginal(t);
        let mut ck = DMatrix::zeros(2 * n, params.l);
        for j in 0..params.n_regimes() {
            ck += params.c_k(j) * marg[j];
        }
        if t >= 2 {
            expected_rate += expected_c_r(params, t).dot(&inputs.exog[t - 1]);
        }
        let a = &mu[t - 1] + &inputs.log_payments[t]
            - &inputs.log_payments[t - 1]
            - ck * &inputs.exog[t - 1]
            - &del * expected_rate;
        let mut mu_t = DVector::zeros(2 * n);
        for c in 0..2 * n {
            let target = a[c];
            if !(target < 0.0) {
                return Err(Error::Newton {
                    t,
                    component: c + 1,
                    message: format!(
                        "recurrence target {target} is not negative; no solution exists"
                    ),
                });
            }
            mu_t[c] = match newton_inner(target, mu[t - 1][c], NEWTON_TOL, NEWTON_MAX_ITER) {
                Ok(m) => m,
                Err(message) => {
                    let m = closed_form_mu(target);
                    if !m.is_finite() || (log_ratio_map(m) - target).abs() > NEWTON_TOL {
                        return Err(Error::Newton {
                            t,
                            component: c + 1,
                            message,
                        });
                    }
                    log::warn!(
                        "Newton failed at t={t}, component {}: {message}; using closed form",
                        c + 1
                    );
                    m
                }
            };
        }
        let g_t = mu_t.map(|m| 1.0 + m.exp());
        h.push(h_from(&mu_t, &g_t));
        g.push(g_t);
        mu.push(mu_t);
        targets.push(a);
    }

    let asset_means = match &inputs.asset_override {
        Some(means) => {
            if means.len() != t_max + 1 || means.iter().any(|m| m.len() != n) {
                return Err(Error::invalid(
                    "asset mean override must give n values for t = 0..=T",
                ));
            }
            means.clone()
        }
        None => {
            let mean_values = model_implied_log_values(params, inputs, &g, &h);
            mean_values
                .iter()
                .map(|v| DVector::from_fn(n, |i, _| v[n + i] - v[i]))
                .collect()
        }
    };
    Ok(LinearizationSchedule {
        n,
        asset: asset_means.iter().map(asset_linearize).collect(),
        mu,
        g,
        h,
        log_payments: inputs.log_payments.clone(),
        exog: inputs.exog.clone(),
        targets,
    })
}

/// `𝔼[Ṽ_t | 𝓕_0]` under the physical measure for `t = 0..=T`.
///
/// The P-measure transition matrices do not depend on the regime, so the
/// regime-averaged intercepts give the exact mean.
fn model_implied_log_values(
    params: &ModelParams,
    inputs: &ScheduleInputs,
    g: &[DVector<f64>],
    h: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = params.n;
    let del = delta(n);
    let mut v = inputs.log_values0.clone();
    let mut r = inputs.log_rate0;
    let mut out = vec![v.clone()];
    for t in 1..g.len() {
        let marg = params.chain.marginal(t);
        let mut ck = DMatrix::zeros(2 * n, params.l);
        let mut cr = DVector::zeros(params.l);
        for j in 0..params.n_regimes() {
            ck += params.c_k(j) * marg[j];
            cr += params.c_r(j) * marg[j];
        }
        let psi = &inputs.exog[t - 1];
        r += cr.dot(psi);
        let p = &inputs.log_payments[t];
        let inner = &v - p + ck * psi + &del * r;
        v = g[t].component_mul(&inner) + p - &h[t];
        out.push(v.clone());
    }
    out
}

/// Dynamic Gordon growth step: `Ṽ_t ≈ G_t(Ṽ_{t−1} − p̃_t + k̃_t) + p̃_t − h_t`.
pub fn gordon_step(
    v_prev: &DVector<f64>,
    p_t: &DVector<f64>,
    k_t: &DVector<f64>,
    sched: &LinearizationSchedule,
    t: usize,
) -> DVector<f64> {
    sched.g[t].component_mul(&(v_prev - p_t + k_t)) + p_t - &sched.h[t]
}

/// Schedule with `μ_t` supplied directly (no recurrence). Intended for tests
/// and diagnostics; `targets` are filled from the supplied values.
pub fn schedule_from_mu(
    mu: Vec<DVector<f64>>,
    asset_mu: Vec<DVector<f64>>,
    log_payments: Vec<DVector<f64>>,
    exog: Vec<DVector<f64>>,
) -> LinearizationSchedule {
    let n = mu[0].len() / 2;
    let g: Vec<DVector<f64>> = mu.iter().map(|m| m.map(|x| 1.0 + x.exp())).collect();
    let h = mu.iter().zip(&g).map(|(m, g)| h_from(m, g)).collect();
    let targets = mu[1..].iter().map(|m| m.map(log_ratio_map)).collect();
    LinearizationSchedule {
        n,
        asset: asset_mu.iter().map(asset_linearize).collect(),
        mu,
        g,
        h,
        log_payments,
        exog,
        targets,
    }
}
