//! Independent reference computations and the self-check suites.
//!
//! The references avoid the production shortcuts: posteriors come from
//! brute-force Bayes over every regime path, prices from simulating the
//! structural system (spot-rate recursion plus dynamic Gordon step) rather
//! than its VAR(1) form, and lognormal option prices from direct quadrature.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    build_p_dynamics, build_q_dynamics, rate_projection, transition_product, DiscountConvention,
};
use crate::error::{Error, Result};
use crate::estimation::{exact_smoother, hamilton_filter};
use crate::linalg::{pairwise_sum, psd_cholesky};
use crate::linearization::{
    asset_linearize, closed_form_mu, gordon_step, newton_solve_mu, schedule_from_mu,
    LinearizationSchedule,
};
use crate::mvn::QmcConfig;
use crate::normal;
use crate::params::{ModelParams, RegimeParams};
use crate::regime::{sample_chain, MarkovChain, PathStrategy, RegimePath};
use crate::rng::{seek, Substreams};
use crate::valuation::{
    lognormal_call, lognormal_put, mixture_default_prob, mixture_valuation, path_asset_law,
    terminal_law, value_path, DefaultCdf, ValuationRequest,
};

/// Posteriors from summing over every regime path.
#[derive(Debug, Clone)]
pub struct PathPosteriors {
    /// `ℙ(s_t | 𝓨_t)` at index `t − 1`.
    pub filtered: Vec<DVector<f64>>,
    /// `ℙ(s_t | 𝓨_T)` at index `t − 1`.
    pub smoothed: Vec<DVector<f64>>,
    /// `ℙ(s_{t−1} = i, s_t = j | 𝓨_T)` at index `t − 2`.
    pub joint: Vec<DMatrix<f64>>,
}

fn for_each_path(regimes: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; len];
    loop {
        f(&path);
        let mut k = len;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < regimes {
                break;
            }
            path[k] = 0;
        }
    }
}

/// Brute-force Bayes over all `N^T` paths given per-date log densities.
pub fn enumerate_posteriors(
    log_eta: &[DVector<f64>],
    chain: &MarkovChain,
) -> Result<PathPosteriors> {
    let t_max = log_eta.len();
    let n = chain.regimes();
    if t_max == 0 || (n as f64).powi(t_max as i32) > 1e7 {
        return Err(Error::invalid("path enumeration needs 1 <= N^T <= 1e7"));
    }
    let shift: Vec<f64> = log_eta.iter().map(|e| e.max()).collect();
    let weight = |path: &[usize]| -> f64 {
        let mut lw = chain.initial()[path[0]].ln() + log_eta[0][path[0]] - shift[0];
        for t in 1..path.len() {
            lw += chain.p(path[t - 1], path[t]).ln() + log_eta[t][path[t]] - shift[t];
        }
        lw.exp()
    };
    let mut filtered = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let mut z = DVector::<f64>::zeros(n);
        for_each_path(n, t, |p| z[p[t - 1]] += weight(p));
        filtered.push(&z / z.sum());
    }
    let mut smoothed = vec![DVector::zeros(n); t_max];
    let mut joint = vec![DMatrix::zeros(n, n); t_max.saturating_sub(1)];
    let mut total = 0.0;
    for_each_path(n, t_max, |p| {
        let w = weight(p);
        total += w;
        for t in 0..t_max {
            smoothed[t][p[t]] += w;
            if t > 0 {
                joint[t - 1][(p[t - 1], p[t])] += w;
            }
        }
    });
    smoothed.iter_mut().for_each(|z| *z /= total);
    joint.iter_mut().for_each(|m| *m /= total);
    Ok(PathPosteriors {
        filtered,
        smoothed,
        joint,
    })
}

/// One simulated trajectory of the structural system.
#[derive(Debug, Clone)]
pub struct SystemDraw {
    /// `x_T`.
    pub terminal: DVector<f64>,
    /// `Σ_{β=t+1..T−1} r̃_β`.
    pub rate_sum: f64,
}

fn factors(params: &ModelParams) -> Result<Vec<DMatrix<f64>>> {
    (0..params.n_regimes())
        .map(|j| psd_cholesky(params.sigma(j), 1e-12))
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(factor.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}

/// Risk-neutral system along a fixed regime path:
/// `F r̃_β = r̃_{β−1} + ν̃_r + v_β` and the Gordon step driven by the
/// risk-neutral return `k̃_β = r̃_{β−1} i − ½ 𝒟[Σ_uu] + u_β`.
pub fn simulate_q_system(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &RegimePath,
    t: usize,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Result<Vec<SystemDraw>> {
    let n = params.n;
    let m = 2 * n;
    let end = t + path.len();
    let chol = factors(params)?;
    let mut rate_coef = Vec::with_capacity(path.len());
    for (k, &j) in path.as_slice().iter().enumerate() {
        let beta = t + k + 1;
        let proj = rate_projection(params, j)?;
        let f = 1.0 - proj.rows(0, n).sum();
        let psi = sched.psi(beta);
        let half = params.sigma_uu(j).diagonal() * 0.5;
        let drift = params.c_r(j).dot(psi) - proj.dot(&(params.c_k(j) * psi + &half));
        rate_coef.push((f, drift, half));
    }
    let streams = Substreams::new(seed);
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = streams.stream(id);
            let mut v = x_t.rows(0, m).into_owned();
            let mut r = x_t[m];
            let mut rate_sum = 0.0;
            for beta in t + 1..=end {
                seek(&mut rng, (beta - t) as u64);
                let k = beta - t - 1;
                let (f, drift, half) = &rate_coef[k];
                let xi = draw(&mut rng, &chol[path.as_slice()[k]]);
                let ret = DVector::from_fn(m, |i, _| r - half[i] + xi[i]);
                v = gordon_step(&v, &sched.log_payments[beta], &ret, sched, beta);
                r = (r + drift + xi[m]) / f;
                if beta < end {
                    rate_sum += r;
                }
            }
            let mut terminal = DVector::zeros(m + 1);
            terminal.rows_mut(0, m).copy_from(&v);
            terminal[m] = r;
            SystemDraw { terminal, rate_sum }
        })
        .collect())
}

/// Physical system with regime switching from `t` to `maturity`; `s_{t+1}` is
/// drawn from `next`. `r̃_β = r̃_{β−1} + c_r'ψ_β + v_β`,
/// `k̃_β = C_k ψ_β + δ r̃_β + u_β`, then the Gordon step.
pub fn simulate_p_system(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    next: &DVector<f64>,
    t: usize,
    maturity: usize,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Result<Vec<SystemDraw>> {
    let n = params.n;
    let m = 2 * n;
    let chol = factors(params)?;
    let streams = Substreams::new(seed);
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = streams.stream(id);
            let regimes = sample_chain(&params.chain, next, maturity - t, &mut rng);
            let mut v = x_t.rows(0, m).into_owned();
            let mut r = x_t[m];
            let mut rate_sum = 0.0;
            for beta in t + 1..=maturity {
                seek(&mut rng, (beta - t) as u64);
                let j = regimes.as_slice()[beta - t - 1];
                let psi = sched.psi(beta);
                let xi = draw(&mut rng, &chol[j]);
                r += params.c_r(j).dot(psi) + xi[m];
                let mut ret = params.c_k(j) * psi;
                for i in 0..m {
                    ret[i] += xi[i] + if i >= n { r } else { 0.0 };
                }
                v = gordon_step(&v, &sched.log_payments[beta], &ret, sched, beta);
                if beta < maturity {
                    rate_sum += r;
                }
            }
            let mut terminal = DVector::zeros(m + 1);
            terminal.rows_mut(0, m).copy_from(&v);
            terminal[m] = r;
            SystemDraw { terminal, rate_sum }
        })
        .collect())
}

/// Sample mean and its standard error.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = pairwise_sum(xs) / m;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// `𝔼[(e^X − K)^+]` or `𝔼[(K − e^X)^+]` for `X ~ N(μ, σ²)` by composite
/// Simpson quadrature in the standardized variable.
pub fn lognormal_quadrature(mu: f64, var: f64, strike: f64, call: bool) -> f64 {
    let s = var.sqrt();
    let kink = (strike.ln() - mu) / s;
    let (lo, hi) = if call {
        (kink.max(-12.0), s + 12.0)
    } else {
        (-12.0, kink.min(s + 12.0))
    };
    if hi <= lo {
        return 0.0;
    }
    let payoff = |z: f64| {
        let x = (mu + s * z).exp();
        let p = if call { x - strike } else { strike - x };
        p.max(0.0) * normal::pdf(z)
    };
    let intervals = 40_000;
    let h = (hi - lo) / intervals as f64;
    let terms: Vec<f64> = (0..=intervals)
        .map(|k| {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * payoff(lo + k as f64 * h)
        })
        .collect();
    pairwise_sum(&terms) * h / 3.0
}

/// Self-check groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linearization,
    Filter,
    Parity,
    Bond,
    Options,
    Default,
    Mixture,
    All,
}

impl Suite {
    const NAMES: [(&'static str, Suite); 8] = [
        ("linearization", Suite::Linearization),
        ("filter", Suite::Filter),
        ("parity", Suite::Parity),
        ("bond", Suite::Bond),
        ("options", Suite::Options),
        ("default", Suite::Default),
        ("mixture", Suite::Mixture),
        ("all", Suite::All),
    ];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, suite)| *suite)
            .ok_or_else(|| Error::invalid(format!("unknown suite '{s}'")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = Self::NAMES
            .iter()
            .find(|(_, s)| s == self)
            .map_or("?", |(n, _)| n);
        f.write_str(name)
    }
}

/// One row of the check table. `value` is an error measure compared with
/// `tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.to_string(),
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub seed: u64,
    /// Simulated trajectories for each Monte Carlo comparison.
    pub mc_paths: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mc_paths: 200_000,
        }
    }
}

pub fn run_checks(suite: Suite, cfg: &CheckConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::Linearization => linearization_checks(),
        Suite::Filter => filter_checks(cfg),
        Suite::Parity => parity_checks(cfg),
        Suite::Bond => bond_checks(cfg),
        Suite::Options => option_checks(cfg),
        Suite::Default => default_checks(cfg),
        Suite::Mixture => mixture_checks(cfg),
        Suite::All => {
            let mut out = Vec::new();
            for (_, s) in &Suite::NAMES[..7] {
                out.extend(run_checks(*s, cfg)?);
            }
            Ok(out)
        }
    }
}

/// `D Σ D + (1 − c²) Σ_rr e e'` with `D = diag(1, …, 1, c)`: shrinks the
/// rate covariances so `F` stays near one.
fn weak_rate_coupling(cov: DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let r = cov.nrows() - 1;
    let mut out = cov.clone();
    for i in 0..r {
        out[(i, r)] *= c;
        out[(r, i)] *= c;
    }
    out
}

/// Random model with `regimes` regimes and a schedule over `0..=horizon`.
pub fn random_model(
    n: usize,
    regimes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(ModelParams, LinearizationSchedule)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 * n + 1;
    let regime_params = (0..regimes)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.06..0.06));
            RegimeParams {
                coef: DMatrix::from_fn(d, 1, |i, _| {
                    if i == d - 1 {
                        rng.random_range(-0.002..0.002)
                    } else {
                        rng.random_range(-0.02..0.03)
                    }
                }),
                cov: weak_rate_coupling(&a * a.transpose() + DMatrix::identity(d, d) * 2e-4, 0.1),
            }
        })
        .collect();
    let raw = DMatrix::from_fn(regimes, regimes, |i, j| {
        if i == j {
            4.0
        } else {
            rng.random_range(0.2..1.0)
        }
    });
    let mut trans = raw.clone();
    for i in 0..regimes {
        let s = raw.row(i).sum();
        trans.row_mut(i).iter_mut().for_each(|x| *x /= s);
    }
    let chain = MarkovChain::new(DVector::from_element(regimes, 1.0 / regimes as f64), trans)?;
    let params = ModelParams::new(n, 1, regime_params, chain)?;
    let mu = (0..=horizon)
        .map(|_| DVector::from_fn(2 * n, |_, _| rng.random_range(-3.5..-2.5)))
        .collect();
    let asset = (0..=horizon)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3)))
        .collect();
    let pay = (0..=horizon)
        .map(|_| DVector::from_fn(2 * n, |_, _| rng.random_range(-3.5..-2.5)))
        .collect();
    let sched = schedule_from_mu(mu, asset, pay, vec![DVector::from_element(1, 1.0); horizon]);
    Ok((params, sched))
}

fn request(t: usize, maturity: usize, n: usize, strategy: PathStrategy) -> ValuationRequest {
    ValuationRequest {
        t,
        maturity,
        strikes: vec![1.0; n],
        thresholds: vec![0.9; n],
        strategy,
        discount: DiscountConvention::KnownRate,
        default_cdf: DefaultCdf::Orthant,
        qmc: QmcConfig::default(),
        emit_paths: true,
    }
}

fn state(n: usize) -> DVector<f64> {
    DVector::from_fn(
        2 * n + 1,
        |i, _| if i == 2 * n { 0.01 } else { 0.05 * i as f64 },
    )
}

fn linearization_checks() -> Result<Vec<Check>> {
    let s = Suite::Linearization;
    let mut newton = 0.0f64;
    for k in 0..=200 {
        let a = -(10f64.powf(-6.0 + k as f64 * (20f64.log10() + 6.0) / 200.0));
        let exact = closed_form_mu(a);
        let solved = newton_solve_mu(a, 0.0, 1e-14, 200)?;
        newton = newton.max((solved - exact).abs());
    }
    let mut out = vec![Check::new(
        s,
        "newton vs closed-form inverse",
        newton,
        1e-12,
    )];

    // Gordon step and asset weights are exact at their expansion points.
    let (_, sched) = random_model(2, 1, 3, 5)?;
    let v_prev = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5]);
    let k = DVector::from_vec(vec![0.02, -0.01, 0.03, 0.01]);
    let mut gordon = 0.0f64;
    for t in 1..=3 {
        // choose p̃_t so that p̃_t − Ṽ_t = μ_t under the exact recursion
        let gross = (&v_prev + &k).map(f64::exp);
        let ratio = sched.mu[t].map(f64::exp);
        let value = gross.component_div(&ratio.add_scalar(1.0));
        let exact = value.map(f64::ln);
        let pay = &exact + &sched.mu[t];
        let approx = gordon_step(&v_prev, &pay, &k, &sched, t);
        gordon = gordon.max((approx - exact).abs().max());
    }
    out.push(Check::new(
        s,
        "gordon step at expansion point",
        gordon,
        1e-10,
    ));
    let lin = asset_linearize(&DVector::from_vec(vec![0.4, -0.7]));
    let v = DVector::from_vec(vec![1.2f64, 0.3, 1.6, -0.4]);
    let exact = DVector::from_fn(2, |i, _| (v[i].exp() + v[i + 2].exp()).ln());
    out.push(Check::new(
        s,
        "asset value at expansion point",
        (lin.apply(&v) - exact).abs().max(),
        1e-10,
    ));

    // Π_{t,i} for the physical dynamics: top-left ∏G, top-right Σ_α (∏_{γ>=α} G_γ) δ.
    let (params, sched) = random_model(1, 2, 5, 6)?;
    let path = RegimePath(vec![0, 1, 1, 0]);
    let p = build_p_dynamics(&params, &sched, &path, 1)?;
    let mut err = 0.0f64;
    for i in 2..=5 {
        let pi = transition_product(&p, 1, i);
        for c in 0..2 {
            let g_prod: f64 = (2..=i).map(|a| sched.g[a][c]).product();
            let top_right: f64 = if c < 1 {
                0.0
            } else {
                (2..=i)
                    .map(|a| (a..=i).map(|b| sched.g[b][c]).product::<f64>())
                    .sum()
            };
            err = err
                .max((pi[(c, c)] - g_prod).abs() / g_prod)
                .max((pi[(c, 2)] - top_right).abs() / g_prod);
        }
        err = err.max((pi[(2, 2)] - 1.0).abs()).max(pi[(2, 0)].abs());
    }
    out.push(Check::new(
        s,
        "transition products vs closed form",
        err,
        1e-12,
    ));
    Ok(out)
}

fn filter_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut err = 0.0f64;
    for rep in 0..10 {
        let n = 2 + rep % 2;
        let t_max = if n == 2 { 10 } else { 6 };
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
        let mut trans = raw.clone();
        for i in 0..n {
            let s = raw.row(i).sum();
            trans.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        let p0 = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
        let chain = MarkovChain::new(&p0 / p0.sum(), trans)?;
        let log_eta: Vec<DVector<f64>> = (0..t_max)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-8.0..3.0)))
            .collect();
        let filter = hamilton_filter(&log_eta, &chain, chain.initial())?;
        let smoother = exact_smoother(&filter, &chain)?;
        let brute = enumerate_posteriors(&log_eta, &chain)?;
        for t in 0..t_max {
            err = err
                .max((&filter.z_filt[t] - &brute.filtered[t]).abs().max())
                .max((&smoother.z_smooth[t] - &brute.smoothed[t]).abs().max());
        }
        for (a, b) in smoother.joint.iter().zip(&brute.joint) {
            err = err.max((a - b).abs().max());
        }
    }
    Ok(vec![Check::new(
        Suite::Filter,
        "filter/smoother vs path enumeration",
        err,
        1e-10,
    )])
}

fn parity_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let mut worst = 0.0f64;
    for (k, n) in [1usize, 2, 3].into_iter().enumerate() {
        let (params, sched) = random_model(n, 2, 6, cfg.seed + k as u64)?;
        let mut req = request(2, 6, n, PathStrategy::Enumerate);
        req.strikes = (0..n).map(|i| 0.6 + 0.3 * i as f64).collect();
        let x = state(n);
        let z = DVector::from_vec(vec![0.35, 0.65]);
        let rep = mixture_valuation(&req, &params, &sched, Some(&z), &x)?;
        for p in rep.paths.iter().flatten() {
            for i in 0..n {
                let fwd = p.discounted_forward_asset[i];
                let pv = req.strikes[i] * p.bond_price;
                let resid = p.call[i] - p.put[i] - (fwd - pv);
                worst = worst.max(resid.abs() / fwd.max(pv).max(1.0));
            }
        }
        for (i, c) in rep.companies.iter().enumerate() {
            let pv = req.strikes[i] * rep.bond_price;
            let resid = c.call - c.put - (c.discounted_forward_asset - pv);
            worst = worst.max(resid.abs() / c.discounted_forward_asset.max(pv).max(1.0));
        }
    }
    Ok(vec![Check::new(
        Suite::Parity,
        "put-call parity residual",
        worst,
        1e-10,
    )])
}

/// |closed − estimate| against three standard errors (plus rounding slack).
fn z_check(suite: Suite, name: String, closed: f64, mc: (f64, f64)) -> Check {
    Check::new(
        suite,
        name,
        (closed - mc.0).abs(),
        3.0 * mc.1 + 1e-12 * closed.abs().max(1.0),
    )
}

fn bond_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let s = Suite::Bond;
    let (params, sched) = random_model(1, 1, 6, cfg.seed + 11)?;
    let x = state(1);
    let mut out = Vec::new();
    for steps in 1..=4 {
        let t = 6 - steps;
        let path = RegimePath(vec![0; steps]);
        let q = build_q_dynamics(&params, &sched, &path, t)?;
        let bond = terminal_law(&q, &x).bond_price(x[2], DiscountConvention::KnownRate);
        if steps == 1 {
            out.push(Check::new(
                s,
                "one-period bond vs exp(-r_t)",
                (bond - (-x[2]).exp()).abs(),
                0.0,
            ));
        }
        let draws = simulate_q_system(
            &params,
            &sched,
            &path,
            t,
            &x,
            cfg.mc_paths,
            cfg.seed + steps as u64,
        )?;
        let disc: Vec<f64> = draws.iter().map(|d| (-x[2] - d.rate_sum).exp()).collect();
        out.push(z_check(
            s,
            format!("bond T-t={steps}"),
            bond,
            mean_and_error(&disc),
        ));
    }
    Ok(out)
}

fn option_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let s = Suite::Options;
    let (params, sched) = random_model(1, 1, 5, cfg.seed + 21)?;
    let x = state(1);
    let path = RegimePath(vec![0; 3]);
    let mut req = request(2, 5, 1, PathStrategy::Enumerate);
    let asset = &sched.asset[5];
    let draws = simulate_q_system(&params, &sched, &path, 2, &x, cfg.mc_paths, cfg.seed + 22)?;
    let mut out = Vec::new();
    let forward_asset: f64 = {
        let v = value_path(&req, &params, &sched, &path, &x)?;
        v.discounted_forward_asset[0] / v.bond_price
    };
    for (k, strike) in [0.7 * forward_asset, forward_asset, 1.3 * forward_asset]
        .into_iter()
        .enumerate()
    {
        req.strikes = vec![strike];
        let v = value_path(&req, &params, &sched, &path, &x)?;
        let (calls, puts): (Vec<f64>, Vec<f64>) = draws
            .iter()
            .map(|d| {
                let va = asset.apply(&d.terminal.rows(0, 2).into_owned())[0].exp();
                let disc = (-x[2] - d.rate_sum).exp();
                (disc * (va - strike).max(0.0), disc * (strike - va).max(0.0))
            })
            .unzip();
        out.push(z_check(
            s,
            format!("call strike #{}", k + 1),
            v.call[0],
            mean_and_error(&calls),
        ));
        out.push(z_check(
            s,
            format!("put strike #{}", k + 1),
            v.put[0],
            mean_and_error(&puts),
        ));
    }
    let mut quad = 0.0f64;
    for (mu, var, k) in [
        (0.1f64, 0.04f64, 1.0f64),
        (-0.3, 0.25, 0.5),
        (0.0, 0.01, 1.2),
        (1.0, 0.5, 2.0),
    ] {
        quad = quad
            .max((lognormal_call(mu, var, k)? - lognormal_quadrature(mu, var, k, true)).abs())
            .max((lognormal_put(mu, var, k)? - lognormal_quadrature(mu, var, k, false)).abs());
    }
    out.push(Check::new(
        s,
        "lognormal formulas vs quadrature",
        quad,
        1e-8,
    ));
    Ok(out)
}

fn default_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let s = Suite::Default;
    let (params, sched) = random_model(1, 2, 5, cfg.seed + 31)?;
    let x = state(1);
    let z = DVector::from_vec(vec![0.4, 0.6]);
    let mut req = request(2, 5, 1, PathStrategy::Enumerate);
    let asset = &sched.asset[5];
    let next = params.chain.propagate(&z);
    let draws = simulate_p_system(
        &params,
        &sched,
        &next,
        2,
        5,
        &x,
        cfg.mc_paths,
        cfg.seed + 32,
    )?;
    let p = build_p_dynamics(&params, &sched, &RegimePath(vec![0; 3]), 2)?;
    let law = terminal_law(&p, &x);
    let centre = path_asset_law(&law.mean, &law.cov, asset).mean[0].exp();
    let mut out = Vec::new();
    for (k, level) in [0.8 * centre, centre, 1.1 * centre].into_iter().enumerate() {
        req.thresholds = vec![level];
        let rep = mixture_default_prob(&req, &params, &sched, Some(&z), &x)?;
        let hits: Vec<f64> = draws
            .iter()
            .map(|d| {
                let la = asset.apply(&d.terminal.rows(0, 2).into_owned())[0];
                if la <= level.ln() {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        out.push(z_check(
            s,
            format!("default level #{}", k + 1),
            rep.joint,
            mean_and_error(&hits),
        ));
    }
    let law = crate::valuation::AssetLaw {
        mean: DVector::from_element(1, 0.2),
        cov: DMatrix::from_element(1, 1, 0.3),
    };
    let (j, _) = crate::valuation::path_default_prob(
        &law,
        &DVector::from_element(1, 0.2f64.exp()),
        DefaultCdf::Orthant,
        &QmcConfig::default(),
    )?;
    out.push(Check::new(
        s,
        "median threshold gives 1/2",
        (j.joint - 0.5).abs(),
        1e-12,
    ));
    Ok(out)
}

fn mixture_checks(cfg: &CheckConfig) -> Result<Vec<Check>> {
    let s = Suite::Mixture;
    let (params, sched) = random_model(1, 2, 5, cfg.seed + 41)?;
    let x = state(1);
    let z = DVector::from_vec(vec![0.3, 0.7]);
    let mut exact_req = request(2, 5, 1, PathStrategy::Enumerate);
    exact_req.emit_paths = false;
    let exact = mixture_valuation(&exact_req, &params, &sched, Some(&z), &x)?;
    let mc_req = ValuationRequest {
        strategy: PathStrategy::MonteCarlo {
            paths: cfg.mc_paths.min(100_000),
            seed: cfg.seed + 42,
        },
        ..exact_req.clone()
    };
    let mc = mixture_valuation(&mc_req, &params, &sched, Some(&z), &x)?;
    let se = mc
        .diagnostics
        .std_errors
        .as_ref()
        .ok_or_else(|| Error::numerical("sampled mixture reported no standard errors"))?;
    let mut out = vec![
        z_check(
            s,
            "bond enumeration vs sampled".into(),
            exact.bond_price,
            (mc.bond_price, se.bond_price),
        ),
        z_check(
            s,
            "call enumeration vs sampled".into(),
            exact.companies[0].call,
            (mc.companies[0].call, se.call[0]),
        ),
        z_check(
            s,
            "put enumeration vs sampled".into(),
            exact.companies[0].put,
            (mc.companies[0].put, se.put[0]),
        ),
    ];
    let (single, single_sched) = random_model(1, 1, 5, cfg.seed + 43)?;
    let one = mixture_valuation(
        &exact_req,
        &single,
        &single_sched,
        Some(&DVector::from_element(1, 1.0)),
        &x,
    )?;
    let path = value_path(
        &exact_req,
        &single,
        &single_sched,
        &RegimePath(vec![0; 3]),
        &x,
    )?;
    let same = one.bond_price == path.bond_price
        && one.companies[0].call == path.call[0]
        && one.companies[0].put == path.put[0]
        && one.default_prob_joint == path.default_prob_joint;
    out.push(Check::new(
        s,
        "single regime mixture equals path (bitwise)",
        if same { 0.0 } else { 1.0 },
        0.0,
    ));
    Ok(out)
}
