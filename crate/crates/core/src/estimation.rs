//! EM estimation of the regime-switching regression
//! `B_0 y_t = C_{s_t} ψ_t + B_1 y_{t−1} + ξ_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::market_data::LogPanel;
use crate::params::{ModelParams, RegimeParams};
use crate::regime::MarkovChain;
use crate::rng::Substreams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Allowed loglik decrease per EM iteration before the run is rejected.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Regression data for `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct Observations {
    pub n: usize,
    /// `y_t = (k̃_t', r̃_t)'` for `t = 0..=T`; `y_0 = (0, …, 0, r̃_0)'`.
    pub y: Vec<DVector<f64>>,
    /// `Y_t = B_0 y_t − B_1 y_{t−1}` at index `t − 1`.
    pub targets: Vec<DVector<f64>>,
    /// `ψ_t` at index `t − 1`.
    pub exog: Vec<DVector<f64>>,
}

impl Observations {
    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn exog_dim(&self) -> usize {
        self.exog.first().map_or(0, |p| p.len())
    }

    /// Regime-`j` residual `B_0 y_t − C_j ψ_t − B_1 y_{t−1}` for `t >= 1`.
    pub fn residual(&self, t: usize, coef: &DMatrix<f64>) -> DVector<f64> {
        &self.targets[t - 1] - coef * &self.exog[t - 1]
    }
}

/// `B_0 = [[I_{2n}, −δ], [0, 1]]`.
pub fn b0(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::identity(2 * n + 1, 2 * n + 1);
    for i in n..2 * n {
        b[(i, 2 * n)] = -1.0;
    }
    b
}

/// `B_1 = [[0, 0], [0, 1]]`.
pub fn b1(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2 * n + 1, 2 * n + 1);
    b[(2 * n, 2 * n)] = 1.0;
    b
}

pub fn build_y_series(lp: &LogPanel) -> Result<Observations> {
    let t_max = lp.horizon();
    if lp.log_returns.len() != t_max || lp.exog.len() != t_max || lp.log_rates.len() != t_max + 1 {
        return Err(Error::invalid("panel series lengths are inconsistent"));
    }
    let n = lp.n;
    let dim = 2 * n + 1;
    let mut y = Vec::with_capacity(t_max + 1);
    let mut y0 = DVector::zeros(dim);
    y0[2 * n] = lp.log_rates[0];
    y.push(y0);
    for t in 1..=t_max {
        let k = &lp.log_returns[t - 1];
        if k.len() != 2 * n {
            return Err(Error::invalid(format!(
                "return vector at t={t} has wrong length"
            )));
        }
        let mut yt = DVector::zeros(dim);
        yt.rows_mut(0, 2 * n).copy_from(k);
        yt[2 * n] = lp.log_rates[t];
        y.push(yt);
    }
    let b0 = b0(n);
    let b1 = b1(n);
    let targets = (1..=t_max).map(|t| &b0 * &y[t] - &b1 * &y[t - 1]).collect();
    Ok(Observations {
        n,
        y,
        targets,
        exog: lp.exog.clone(),
    })
}

/// `ln` of the `N(0, Σ)` density at `e`, given a factor of `Σ`.
pub fn log_normal_density(e: &DVector<f64>, factor: &SpdFactor) -> f64 {
    -0.5 * (e.len() as f64 * LN_2PI + factor.log_det() + factor.quad_form(e))
}

fn factor(cov: &DMatrix<f64>, regime: usize) -> Result<SpdFactor> {
    SpdFactor::new(cov).ok_or(Error::SingularCovariance { regime: regime + 1 })
}

/// `η_{t,j}`: density of the regime-`j` residual.
pub fn regime_density(
    y_t: &DVector<f64>,
    y_prev: &DVector<f64>,
    psi: &DVector<f64>,
    coef: &DMatrix<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let n = (y_t.len() - 1) / 2;
    let e = b0(n) * y_t - coef * psi - b1(n) * y_prev;
    Ok(log_normal_density(&e, &factor(cov, 0)?).exp())
}

/// `ln η_{t,j}` for every `t = 1..=T` (index `t − 1`) and regime.
pub fn log_densities(obs: &Observations, params: &ModelParams) -> Result<Vec<DVector<f64>>> {
    let factors = (0..params.n_regimes())
        .map(|j| factor(params.sigma(j), j))
        .collect::<Result<Vec<_>>>()?;
    Ok((1..=obs.horizon())
        .into_par_iter()
        .map(|t| {
            DVector::from_fn(params.n_regimes(), |j, _| {
                log_normal_density(&obs.residual(t, &params.regimes[j].coef), &factors[j])
            })
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `z_{t|t}` at index `t − 1`.
    pub z_filt: Vec<DVector<f64>>,
    /// `z_{t+1|t}` at index `t`, `t = 0..=T`; index 0 holds `z_{1|0}`.
    pub z_pred: Vec<DVector<f64>>,
    /// `ln η_t` at index `t − 1`.
    pub log_eta: Vec<DVector<f64>>,
    /// `η_t e^{−m_t}` with `m_t = max_j ln η_{t,j}`.
    pub eta_scaled: Vec<DVector<f64>>,
    /// `i_N'(z_{t|t−1} ⊙ η_t) e^{−m_t}`.
    pub scale: Vec<f64>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn horizon(&self) -> usize {
        self.z_filt.len()
    }

    /// `z_{t|t}` for `t >= 1`.
    pub fn filtered(&self, t: usize) -> &DVector<f64> {
        &self.z_filt[t - 1]
    }

    /// `z_{t|t−1}` for `t >= 1`.
    pub fn predicted(&self, t: usize) -> &DVector<f64> {
        &self.z_pred[t - 1]
    }
}

/// Hamilton filter in log space; `z10` is `z_{1|0}`.
pub fn hamilton_filter(
    log_eta: &[DVector<f64>],
    chain: &MarkovChain,
    z10: &DVector<f64>,
) -> Result<FilterOutput> {
    let n = chain.regimes();
    if z10.len() != n || log_eta.iter().any(|e| e.len() != n) {
        return Err(Error::invalid(
            "filter inputs must have one entry per regime",
        ));
    }
    let mut z_pred = vec![z10.clone()];
    let mut z_filt = Vec::with_capacity(log_eta.len());
    let mut eta_scaled = Vec::with_capacity(log_eta.len());
    let mut scale = Vec::with_capacity(log_eta.len());
    let mut loglik = 0.0;
    for (k, le) in log_eta.iter().enumerate() {
        let t = k + 1;
        let m = le.max();
        if !m.is_finite() {
            return Err(Error::numerical(format!(
                "all regime densities vanish at t={t}"
            )));
        }
        let eta = le.map(|x| (x - m).exp());
        let joint = z_pred[k].component_mul(&eta);
        let s = joint.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::numerical(format!(
                "filter normalizer is zero at t={t}"
            )));
        }
        loglik += s.ln() + m;
        let z = joint / s;
        z_pred.push(chain.propagate(&z));
        z_filt.push(z);
        eta_scaled.push(eta);
        scale.push(s);
    }
    Ok(FilterOutput {
        z_filt,
        z_pred,
        log_eta: log_eta.to_vec(),
        eta_scaled,
        scale,
        loglik,
    })
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    /// `z_{t|T}` at index `t − 1`.
    pub z_smooth: Vec<DVector<f64>>,
    /// `ℙ(s_{t−1} = i, s_t = j | 𝓨_T)` for `t = 2..=T` at index `t − 2`.
    pub joint: Vec<DMatrix<f64>>,
}

impl SmootherOutput {
    pub fn smoothed(&self, t: usize) -> &DVector<f64> {
        &self.z_smooth[t - 1]
    }
}

/// `num / den` with `0 / 0 = 0`.
fn guarded_ratio(num: f64, den: f64, t: usize) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!(
            "smoother divides by a zero filtered probability at t={t}"
        )))
    }
}

/// Backward recursion
/// `z_{t|T} = (P̂ H_{t+1} (z_{t+1|T} ⊘ z_{t+1|t+1})) ⊙ z_{t|t} / i_N'(z_{t+1|t} ⊙ η_{t+1})`
/// and the pairwise posteriors.
pub fn exact_smoother(filter: &FilterOutput, chain: &MarkovChain) -> Result<SmootherOutput> {
    let t_max = filter.horizon();
    let n = chain.regimes();
    let p = chain.transition();
    let mut z_smooth = vec![DVector::zeros(n); t_max];
    if t_max == 0 {
        return Ok(SmootherOutput {
            z_smooth,
            joint: Vec::new(),
        });
    }
    z_smooth[t_max - 1] = filter.filtered(t_max).clone();
    // ratio_{t+1} = H_{t+1}(z_{t+1|T} ⊘ z_{t+1|t+1}) / c_{t+1}
    let mut ratios = vec![DVector::zeros(n); t_max];
    for t in (1..t_max).rev() {
        let next = t + 1;
        let zf = filter.filtered(next);
        let zs = &z_smooth[next - 1];
        let mut ratio = DVector::zeros(n);
        for j in 0..n {
            ratio[j] = guarded_ratio(zs[j], zf[j], next)? * filter.eta_scaled[next - 1][j]
                / filter.scale[next - 1];
        }
        let mut z = (p * &ratio).component_mul(filter.filtered(t));
        // 1e-16-level drift only; keeps the vector a distribution.
        let s = z.sum();
        if s > 0.0 {
            z /= s;
        }
        z_smooth[t - 1] = z;
        ratios[next - 1] = ratio;
    }
    let mut joint = Vec::with_capacity(t_max.saturating_sub(1));
    for t in 2..=t_max {
        let prev = filter.filtered(t - 1);
        let ratio = &ratios[t - 1];
        let mut m = DMatrix::from_fn(n, n, |i, j| prev[i] * p[(i, j)] * ratio[j]);
        let s = m.sum();
        if s > 0.0 {
            m /= s;
        }
        joint.push(m);
    }
    Ok(SmootherOutput { z_smooth, joint })
}

/// Filter plus smoother for fixed parameters.
pub fn e_step(obs: &Observations, params: &ModelParams) -> Result<(FilterOutput, SmootherOutput)> {
    let log_eta = log_densities(obs, params)?;
    let filter = hamilton_filter(&log_eta, &params.chain, params.chain.initial())?;
    let smoother = exact_smoother(&filter, &params.chain)?;
    Ok((filter, smoother))
}

/// `C_j = (Σ_t w_t Y_t ψ_t')(Σ_t w_t ψ_t ψ_t')^{−1}`.
pub fn m_step_coefficients(
    obs: &Observations,
    weights: &[f64],
    regime: usize,
) -> Result<DMatrix<f64>> {
    let l = obs.exog_dim();
    let dim = obs.dim();
    let mut gram = DMatrix::<f64>::zeros(l, l);
    let mut cross = DMatrix::<f64>::zeros(dim, l);
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let psi = &obs.exog[k];
        gram += psi * psi.transpose() * *w;
        cross += &obs.targets[k] * psi.transpose() * *w;
    }
    let scale = gram.diagonal().max();
    let chol =
        nalgebra::Cholesky::new(gram.clone()).ok_or(Error::RankDeficient { regime: regime + 1 })?;
    let pivots = chol.l_dirty().diagonal();
    if !(scale > 0.0) || pivots.iter().any(|d| d * d <= 1e-13 * scale) {
        return Err(Error::RankDeficient { regime: regime + 1 });
    }
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// Lower bound applied to estimated covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum CovarianceFloor {
    /// `ε = factor · trace(Σ) / ñ`.
    Relative(f64),
    Absolute(f64),
}

impl Default for CovarianceFloor {
    fn default() -> Self {
        CovarianceFloor::Relative(1e-10)
    }
}

/// Weighted residual moment `Σ_t w_t e_t e_t' / Σ_t w_t`, floored to `Σ + εI`
/// when its smallest eigenvalue is below `ε`.
pub fn m_step_covariance(
    obs: &Observations,
    weights: &[f64],
    coef: &DMatrix<f64>,
    floor: CovarianceFloor,
    regime: usize,
) -> Result<DMatrix<f64>> {
    let dim = obs.dim();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical(format!(
            "regime {} has zero total weight",
            regime + 1
        )));
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let e = obs.residual(k + 1, coef);
        cov += &e * e.transpose() * *w;
    }
    cov = symmetrize(&(cov / total));
    let eps = match floor {
        CovarianceFloor::Relative(f) => {
            let eps = f * cov.trace() / dim as f64;
            if !(eps > 0.0) {
                return Err(Error::numerical(format!(
                    "regime {} has a degenerate fit with zero residual covariance",
                    regime + 1
                )));
            }
            eps
        }
        CovarianceFloor::Absolute(e) => e,
    };
    let min_eig = cov.clone().symmetric_eigenvalues().min();
    if min_eig < eps {
        log::warn!(
            "regime {} covariance floored (smallest eigenvalue {min_eig:e} < {eps:e})",
            regime + 1
        );
        cov += DMatrix::identity(dim, dim) * eps;
    }
    Ok(cov)
}

/// Denominator of the transition update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMStep {
    /// `Σ_{t=2..T} z_{t−1|T}`: smoothed departures from `i`.
    #[default]
    Departures,
    /// `Σ_{t=2..T} z_{t|T}`; rows are renormalized afterwards.
    Literal,
}

/// Transition and initial-probability update.
pub fn m_step_transition(
    smoother: &SmootherOutput,
    previous: &MarkovChain,
    mode: TransitionMStep,
) -> Result<MarkovChain> {
    let n = previous.regimes();
    let t_max = smoother.z_smooth.len();
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for m in &smoother.joint {
        counts += m;
    }
    let mut denom = DVector::<f64>::zeros(n);
    for t in 2..=t_max {
        denom += match mode {
            TransitionMStep::Departures => smoother.smoothed(t - 1),
            TransitionMStep::Literal => smoother.smoothed(t),
        };
    }
    let mut trans = previous.transition().clone();
    for i in 0..n {
        if !(denom[i] > 0.0) {
            log::warn!(
                "regime {} is never left in the smoothed sample; keeping its transition row",
                i + 1
            );
            continue;
        }
        let mut row: Vec<f64> = (0..n).map(|j| counts[(i, j)] / denom[i]).collect();
        let s: f64 = row.iter().sum();
        if mode == TransitionMStep::Literal && (s - 1.0).abs() > 1e-9 {
            log::debug!(
                "literal transition row {} sums to {s}; renormalizing",
                i + 1
            );
        }
        if !(s > 0.0) {
            continue;
        }
        row.iter_mut().for_each(|p| *p /= s);
        for j in 0..n {
            trans[(i, j)] = row[j];
        }
    }
    let initial = if t_max > 0 {
        let z = smoother.smoothed(1);
        z / z.sum()
    } else {
        previous.initial().clone()
    };
    MarkovChain::new(initial, trans)
}

/// One full M-step.
pub fn m_step(
    obs: &Observations,
    previous: &ModelParams,
    smoother: &SmootherOutput,
    floor: CovarianceFloor,
    mode: TransitionMStep,
) -> Result<ModelParams> {
    let mut regimes = Vec::with_capacity(previous.n_regimes());
    for j in 0..previous.n_regimes() {
        let w: Vec<f64> = smoother.z_smooth.iter().map(|z| z[j]).collect();
        let total: f64 = w.iter().sum();
        if total < 1e-8 {
            return Err(Error::numerical(format!(
                "regime {} collapsed (smoothed weight {total:e})",
                j + 1
            )));
        }
        let coef = m_step_coefficients(obs, &w, j)?;
        let cov = m_step_covariance(obs, &w, &coef, floor, j)?;
        regimes.push(RegimeParams { coef, cov });
    }
    let chain = m_step_transition(smoother, &previous.chain, mode)?;
    ModelParams::new(previous.n, previous.l, regimes, chain)
}

/// Starting point for EM.
#[derive(Debug, Clone, Default)]
pub enum EmInit {
    /// k-means on single-regime residuals, then one weighted M-step.
    #[default]
    KMeans,
    Params(ModelParams),
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub n_regimes: usize,
    pub max_iter: usize,
    /// Stop when `|Δ loglik| <= loglik_tol · |loglik|`.
    pub loglik_tol: f64,
    pub covariance_floor: CovarianceFloor,
    pub init: EmInit,
    /// Number of k-means starts; the best final loglik wins.
    pub restarts: usize,
    pub seed: u64,
    pub transition_mstep: TransitionMStep,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_regimes: 2,
            max_iter: 500,
            loglik_tol: 1e-9,
            covariance_floor: CovarianceFloor::default(),
            init: EmInit::KMeans,
            restarts: 1,
            seed: 0,
            transition_mstep: TransitionMStep::Departures,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: ModelParams,
    pub filter: FilterOutput,
    pub smoother: SmootherOutput,
    /// Loglik of every evaluated parameter set, in order.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub restart: usize,
}

impl EmFit {
    pub fn loglik(&self) -> f64 {
        self.filter.loglik
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,loglik\n");
        for (i, ll) in self.trace.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, crate::fmt_num(*ll)));
        }
        out
    }
}

pub fn em_fit(lp: &LogPanel, config: &EmConfig) -> Result<EmFit> {
    let obs = build_y_series(lp)?;
    em_fit_observations(&obs, config)
}

pub fn em_fit_observations(obs: &Observations, config: &EmConfig) -> Result<EmFit> {
    if !(config.loglik_tol > 0.0) {
        return Err(Error::invalid("loglik tolerance must be positive"));
    }
    if config.n_regimes == 0 || config.max_iter == 0 {
        return Err(Error::invalid("need at least one regime and one iteration"));
    }
    let dim = obs.dim();
    let l = obs.exog_dim();
    if obs.horizon() < l * config.n_regimes + dim {
        return Err(Error::invalid(format!(
            "T={} is too short for {} regimes with {l} regressors",
            obs.horizon(),
            config.n_regimes
        )));
    }
    match &config.init {
        EmInit::Params(p) => {
            if p.n_regimes() != config.n_regimes || p.n != obs.n || p.l != l {
                return Err(Error::invalid(
                    "initial parameters do not match data dimensions",
                ));
            }
            run_em(obs, p.clone(), config, 0)
        }
        EmInit::KMeans => {
            let starts = config.restarts.max(1);
            let fits: Vec<Result<EmFit>> = (0..starts)
                .into_par_iter()
                .map(|r| {
                    let init = kmeans_init(obs, config, config.seed.wrapping_add(r as u64))?;
                    run_em(obs, init, config, r)
                })
                .collect();
            let mut best: Option<EmFit> = None;
            let mut first_err = None;
            for fit in fits {
                match fit {
                    Ok(f) => {
                        if best.as_ref().is_none_or(|b| f.loglik() > b.loglik()) {
                            best = Some(f);
                        }
                    }
                    Err(e) => {
                        log::warn!("EM start failed: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            best.ok_or_else(|| first_err.expect("at least one start ran"))
        }
    }
}

fn run_em(
    obs: &Observations,
    init: ModelParams,
    config: &EmConfig,
    restart: usize,
) -> Result<EmFit> {
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    for iter in 0..config.max_iter {
        let (filter, smoother) = e_step(obs, &params)?;
        let ll = filter.loglik;
        let mut converged = false;
        if let Some(&prev) = trace.last() {
            if ll < prev - MONOTONE_SLACK {
                let msg = format!(
                    "EM loglik decreased from {prev} to {ll} at iteration {}",
                    iter + 1
                );
                if config.transition_mstep == TransitionMStep::Departures {
                    return Err(Error::numerical(msg));
                }
                log::warn!("{msg}");
            }
            converged = (ll - prev).abs() <= config.loglik_tol * prev.abs();
        }
        trace.push(ll);
        log::debug!("EM start {restart} iteration {}: loglik {ll}", iter + 1);
        if converged || iter + 1 == config.max_iter {
            if !converged {
                log::warn!(
                    "EM reached {} iterations without converging",
                    config.max_iter
                );
            }
            return Ok(EmFit {
                params,
                filter,
                smoother,
                trace,
                converged,
                restart,
            });
        }
        params = m_step(
            obs,
            &params,
            &smoother,
            config.covariance_floor,
            config.transition_mstep,
        )?;
    }
    unreachable!("loop returns on its last iteration")
}

/// Assignments from k-means on single-regime residual features, converted to
/// starting parameters.
fn kmeans_init(obs: &Observations, config: &EmConfig, seed: u64) -> Result<ModelParams> {
    let t_max = obs.horizon();
    let k = config.n_regimes;
    let dim = obs.dim();
    let ones = vec![1.0; t_max];
    let coef = m_step_coefficients(obs, &ones, 0)?;
    let resid: Vec<DVector<f64>> = (1..=t_max).map(|t| obs.residual(t, &coef)).collect();
    let sd = DVector::from_fn(dim, |i, _| {
        let v = resid.iter().map(|e| e[i] * e[i]).sum::<f64>() / t_max as f64;
        if v > 0.0 {
            v.sqrt()
        } else {
            1.0
        }
    });
    let features: Vec<DVector<f64>> = resid
        .iter()
        .map(|e| {
            let z = e.component_div(&sd);
            let mut f = DVector::zeros(dim + 1);
            f.rows_mut(0, dim).copy_from(&z);
            f[dim] = (z.norm_squared() + 1e-12).ln();
            f
        })
        .collect();
    let assign = kmeans(&features, k, seed);

    let spread = if k > 1 { 0.05 } else { 0.0 };
    let mut regimes = Vec::with_capacity(k);
    for j in 0..k {
        let w: Vec<f64> = assign
            .iter()
            .map(|&a| {
                if a == j {
                    1.0 - spread
                } else {
                    spread / (k - 1).max(1) as f64
                }
            })
            .collect();
        let coef = m_step_coefficients(obs, &w, j)?;
        let cov = m_step_covariance(obs, &w, &coef, config.covariance_floor, j)?;
        regimes.push(RegimeParams { coef, cov });
    }
    let mut counts = DMatrix::from_element(k, k, 1.0);
    for pair in assign.windows(2) {
        counts[(pair[0], pair[1])] += 1.0;
    }
    for i in 0..k {
        let s = counts.row(i).sum();
        for j in 0..k {
            counts[(i, j)] /= s;
        }
    }
    let chain = MarkovChain::new(DVector::from_element(k, 1.0 / k as f64), counts)?;
    ModelParams::new(obs.n, obs.exog_dim(), regimes, chain)
}

/// Lloyd's algorithm with k-means++ seeding.
fn kmeans(points: &[DVector<f64>], k: usize, seed: u64) -> Vec<usize> {
    let m = points.len();
    if k == 1 || m == 0 {
        return vec![0; m];
    }
    let mut rng = Substreams::new(seed).stream(0);
    let dist2 = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm_squared();
    let mut centers = vec![points[rng.random_range(0..m)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (i, di) in d.iter().enumerate() {
                acc += di;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(points[next].clone());
    }
    let mut assign = vec![usize::MAX; m];
    for _ in 0..200 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut next = Vec::with_capacity(k);
        for c in 0..k {
            let members: Vec<&DVector<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..m)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[assign[a]])
                            .total_cmp(&dist2(&points[b], &centers[assign[b]]))
                    })
                    .unwrap();
                next.push(points[far].clone());
                continue;
            }
            let mut mean = DVector::zeros(points[0].len());
            for p in &members {
                mean += *p;
            }
            next.push(mean / members.len() as f64);
        }
        centers = next;
    }
    assign
}

/// Complete-data standard errors of every `C_j` entry:
/// `sqrt(Σ_j[k,k] · ((Σ_t z_{t|T,j} ψ_t ψ_t')^{−1})[m,m])`.
pub fn coefficient_standard_errors(
    obs: &Observations,
    params: &ModelParams,
    smoother: &SmootherOutput,
) -> Result<Vec<DMatrix<f64>>> {
    let l = obs.exog_dim();
    let dim = obs.dim();
    (0..params.n_regimes())
        .map(|j| {
            let mut gram = DMatrix::<f64>::zeros(l, l);
            for (k, z) in smoother.z_smooth.iter().enumerate() {
                let psi = &obs.exog[k];
                gram += psi * psi.transpose() * z[j];
            }
            let inv = gram
                .try_inverse()
                .ok_or(Error::RankDeficient { regime: j + 1 })?;
            let cov = params.sigma(j);
            Ok(DMatrix::from_fn(dim, l, |r, c| {
                (cov[(r, r)] * inv[(c, c)]).max(0.0).sqrt()
            }))
        })
        .collect()
}
