//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use merton_core::dynamics::{
    build_p_dynamics, build_q_dynamics, transition_product, DiscountConvention,
};
use merton_core::estimation::{
    build_y_series, coefficient_standard_errors, em_fit, em_fit_observations, exact_smoother,
    hamilton_filter, log_densities, EmConfig, EmInit, Observations,
};
use merton_core::linearization::{
    asset_linearize, newton_solve_mu, schedule_from_mu, solve_mu_schedule, LinearizationSchedule,
    ScheduleInputs,
};
use merton_core::mvn::{orthant_probability, QmcConfig};
use merton_core::params::ParamsFile;
use merton_core::regime::PathStrategy;
use merton_core::simulator::{simulate_market, PaymentRule, SimulationSpec};
use merton_core::valuation::{
    lognormal_call, lognormal_put, mixture_default_prob, mixture_valuation, path_default_prob,
    value_path, AssetLaw, DefaultCdf, ValuationRequest,
};
use merton_core::{MarkovChain, ModelParams, RegimeParams, RegimePath};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("filter and smoother vs path enumeration", filter_exactness),
        ("EM monotonicity and fixed point", em_monotonicity),
        ("parameter recovery", parameter_recovery),
        ("single-regime closed form", single_regime_closed_form),
        ("bond price vs Monte Carlo", bond_oracle),
        (
            "option prices vs Monte Carlo, parity, quadrature",
            option_oracle,
        ),
        ("mixture enumeration vs path sampling", mixture_consistency),
        ("default probabilities vs simulation", default_oracle),
        ("linearization", linearization),
        ("determinism across runs and threads", determinism),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(k + 1)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        if !out.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2}: {name}: {} [{secs:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn normals(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn cholesky(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov.clone()
        .cholesky()
        .expect("covariance must be positive definite")
        .l()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let shift = xs[0];
    let mean = shift + xs.iter().map(|x| x - shift).sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// `|closed − mc|` in units of the Monte Carlo standard error.
fn z_score(closed: f64, mc: (f64, f64)) -> f64 {
    let slack = 1e-12 * closed.abs().max(1.0);
    ((closed - mc.0).abs() - slack).max(0.0) / mc.1.max(1e-300)
}

fn correlated(sd: &[f64], rho: &[&[f64]]) -> DMatrix<f64> {
    let d = sd.len();
    DMatrix::from_fn(d, d, |i, j| sd[i] * sd[j] * rho[i][j])
}

fn chain(p0: &[f64], rows: &[&[f64]]) -> MarkovChain {
    let n = p0.len();
    MarkovChain::new(
        DVector::from_column_slice(p0),
        DMatrix::from_fn(n, n, |i, j| rows[i][j]),
    )
    .unwrap()
}

fn regime(coef: &[f64], cov: DMatrix<f64>) -> RegimeParams {
    RegimeParams {
        coef: DMatrix::from_column_slice(coef.len(), 1, coef),
        cov,
    }
}

/// Smoothly varying schedule over `0..=horizon` with `ψ_t = 1`.
fn test_schedule(n: usize, horizon: usize) -> LinearizationSchedule {
    let mu = (0..=horizon)
        .map(|t| DVector::from_fn(2 * n, |i, _| -3.2 + 0.15 * i as f64 + 0.04 * t as f64))
        .collect();
    let asset = (0..=horizon)
        .map(|t| DVector::from_fn(n, |i, _| 0.25 - 0.2 * i as f64 + 0.01 * t as f64))
        .collect();
    let pay = (0..=horizon)
        .map(|t| DVector::from_fn(2 * n, |i, _| -3.0 + 0.1 * i as f64 - 0.02 * t as f64))
        .collect();
    schedule_from_mu(mu, asset, pay, vec![DVector::from_element(1, 1.0); horizon])
}

/// One company, one regime, rate shocks correlated with both returns.
fn single_regime_model() -> ModelParams {
    let cov = correlated(
        &[0.05, 0.02, 0.002],
        &[&[1.0, 0.3, -0.4], &[0.3, 1.0, 0.2], &[-0.4, 0.2, 1.0]],
    );
    ModelParams::new(
        1,
        1,
        vec![regime(&[0.012, 0.006, 0.0004], cov)],
        MarkovChain::trivial(),
    )
    .unwrap()
}

/// One company, two regimes.
fn two_regime_model() -> ModelParams {
    let rho: [&[f64]; 3] = [&[1.0, 0.3, -0.3], &[0.3, 1.0, 0.2], &[-0.3, 0.2, 1.0]];
    let calm = correlated(&[0.04, 0.015, 0.0015], &rho);
    let stress = correlated(&[0.09, 0.03, 0.003], &rho);
    ModelParams::new(
        1,
        1,
        vec![
            regime(&[0.015, 0.006, 0.0003], calm),
            regime(&[-0.03, 0.004, -0.0004], stress),
        ],
        chain(&[0.6, 0.4], &[&[0.9, 0.1], &[0.25, 0.75]]),
    )
    .unwrap()
}

/// Two companies, two regimes.
fn two_company_model() -> ModelParams {
    let rho: [&[f64]; 5] = [
        &[1.0, 0.4, 0.2, 0.1, -0.2],
        &[0.4, 1.0, 0.1, 0.2, -0.1],
        &[0.2, 0.1, 1.0, 0.3, 0.1],
        &[0.1, 0.2, 0.3, 1.0, 0.1],
        &[-0.2, -0.1, 0.1, 0.1, 1.0],
    ];
    let calm = correlated(&[0.04, 0.05, 0.015, 0.02, 0.0015], &rho);
    let stress = correlated(&[0.08, 0.1, 0.03, 0.04, 0.003], &rho);
    ModelParams::new(
        2,
        1,
        vec![
            regime(&[0.02, 0.015, 0.008, 0.007, 0.0002], calm),
            regime(&[-0.01, -0.012, 0.009, 0.008, -0.0002], stress),
        ],
        chain(&[0.5, 0.5], &[&[0.95, 0.05], &[0.08, 0.92]]),
    )
    .unwrap()
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
        emit_paths: false,
    }
}

fn coef_blocks(params: &ModelParams, j: usize) -> (DVector<f64>, f64) {
    let m = 2 * params.n;
    let c = params.regimes[j].coef.column(0);
    (c.rows(0, m).into_owned(), c[m])
}

/// Risk-neutral rate recursion `F r̃_β = r̃_{β−1} + drift + v_β` derived from
/// the return covariances: the projection `Σ_vu Σ_uu^{−1}` of the rate shock
/// on the return shocks absorbs the market prices of risk.
struct RiskNeutralRate {
    scale: f64,
    drift: f64,
    half_var: DVector<f64>,
}

fn risk_neutral_rate(params: &ModelParams, j: usize) -> RiskNeutralRate {
    let n = params.n;
    let m = 2 * n;
    let cov = &params.regimes[j].cov;
    let suu = cov.view((0, 0), (m, m)).into_owned();
    let svu = DVector::from_fn(m, |i, _| cov[(m, i)]);
    let proj = suu.lu().solve(&svu).unwrap();
    let (ck, cr) = coef_blocks(params, j);
    let half_var = DVector::from_fn(m, |i, _| 0.5 * cov[(i, i)]);
    let scale = 1.0 - (0..n).map(|i| proj[i]).sum::<f64>();
    let drift = cr - proj.dot(&(ck + &half_var));
    RiskNeutralRate {
        scale,
        drift,
        half_var,
    }
}

fn gordon(
    sched: &LinearizationSchedule,
    beta: usize,
    v: &DVector<f64>,
    ret: &DVector<f64>,
) -> DVector<f64> {
    let g = &sched.g[beta];
    let p = &sched.log_payments[beta];
    DVector::from_fn(v.len(), |i, _| {
        g[i] * (v[i] - p[i] + ret[i]) + p[i] - sched.h[beta][i]
    })
}

fn log_asset(sched: &LinearizationSchedule, maturity: usize, v: &DVector<f64>) -> DVector<f64> {
    let a = &sched.asset[maturity];
    let n = a.g_a.len();
    DVector::from_fn(n, |i, _| {
        let w = 1.0 / a.g_a[i];
        w * v[i] + (1.0 - w) * v[n + i] + a.h_a[i] / a.g_a[i]
    })
}

/// Terminal log values and discount exponent `r̃_t + Σ_{β=t+1..T−1} r̃_β`
/// from the risk-neutral structural system along a fixed regime path.
fn simulate_risk_neutral(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &[usize],
    t: usize,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Vec<(DVector<f64>, f64)> {
    let m = 2 * params.n;
    let factors: Vec<DMatrix<f64>> = params.regimes.iter().map(|r| cholesky(&r.cov)).collect();
    let rates: Vec<RiskNeutralRate> = (0..params.n_regimes())
        .map(|j| risk_neutral_rate(params, j))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end = t + path.len();
    (0..paths)
        .map(|_| {
            let mut v = x_t.rows(0, m).into_owned();
            let mut r = x_t[m];
            let mut discount = r;
            for beta in t + 1..=end {
                let j = path[beta - t - 1];
                let q = &rates[j];
                let xi = &factors[j] * normals(&mut rng, m + 1);
                let ret = DVector::from_fn(m, |i, _| r - q.half_var[i] + xi[i]);
                v = gordon(sched, beta, &v, &ret);
                r = (r + q.drift + xi[m]) / q.scale;
                if beta < end {
                    discount += r;
                }
            }
            (v, discount)
        })
        .collect()
}

fn sample_regime(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, p) in probs.enumerate() {
        acc += p;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

fn sample_path(
    rng: &mut ChaCha8Rng,
    params: &ModelParams,
    next: &DVector<f64>,
    len: usize,
) -> Vec<usize> {
    let mut s = sample_regime(rng, next.iter().copied());
    let mut path = vec![s];
    for _ in 1..len {
        s = sample_regime(rng, params.chain.transition().row(s).iter().copied());
        path.push(s);
    }
    path
}

// ---------------------------------------------------------------------------
// 1. Filter and smoother exactness

fn gaussian_log_density(e: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let ch = cov.clone().cholesky().unwrap();
    let log_det: f64 = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let quad = e.dot(&ch.solve(e));
    -0.5 * (e.len() as f64 * (2.0 * PI).ln() + log_det + quad)
}

struct Posteriors {
    filtered: Vec<DVector<f64>>,
    smoothed: Vec<DVector<f64>>,
    joint: Vec<DMatrix<f64>>,
}

/// Bayes over every regime path. Filtered probabilities accumulate prefix
/// weights; each prefix is counted `N^{T−t}` times, which normalization removes.
fn enumerate_paths(log_eta: &[DVector<f64>], chain: &MarkovChain) -> Posteriors {
    let t_max = log_eta.len();
    let n = chain.regimes();
    let shift: Vec<f64> = log_eta.iter().map(|e| e.max()).collect();
    let mut filtered = vec![DVector::zeros(n); t_max];
    let mut smoothed = vec![DVector::zeros(n); t_max];
    let mut joint = vec![DMatrix::zeros(n, n); t_max - 1];
    let mut path = vec![0usize; t_max];
    let mut prefix = vec![0.0; t_max];
    for code in 0..n.pow(t_max as u32) {
        let mut c = code;
        for s in path.iter_mut().rev() {
            *s = c % n;
            c /= n;
        }
        let mut lw = 0.0;
        for t in 0..t_max {
            lw += if t == 0 {
                chain.initial()[path[0]].ln()
            } else {
                chain.p(path[t - 1], path[t]).ln()
            };
            lw += log_eta[t][path[t]] - shift[t];
            prefix[t] = lw.exp();
            filtered[t][path[t]] += prefix[t];
        }
        let w = prefix[t_max - 1];
        for t in 0..t_max {
            smoothed[t][path[t]] += w;
            if t > 0 {
                joint[t - 1][(path[t - 1], path[t])] += w;
            }
        }
    }
    let total = smoothed[0].sum();
    filtered.iter_mut().for_each(|z| *z /= z.sum());
    smoothed.iter_mut().for_each(|z| *z /= total);
    joint.iter_mut().for_each(|z| *z /= total);
    Posteriors {
        filtered,
        smoothed,
        joint,
    }
}

fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> MarkovChain {
    let mut trans = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    for i in 0..n {
        let s = trans.row(i).sum();
        trans.row_mut(i).iter_mut().for_each(|x| *x /= s);
    }
    let p0 = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
    MarkovChain::new(&p0 / p0.sum(), trans).unwrap()
}

/// Random `n = 1`, `l = 2` model with `regimes` regimes of increasing scale,
/// and observations drawn from it.
fn random_regression(
    rng: &mut ChaCha8Rng,
    regimes: usize,
    t_max: usize,
) -> (ModelParams, Observations) {
    let d = 3;
    let l = 2;
    let chain = random_chain(rng, regimes);
    let regime_params: Vec<RegimeParams> = (0..regimes)
        .map(|j| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.1..0.1));
            RegimeParams {
                coef: DMatrix::from_fn(d, l, |_, _| rng.random_range(-0.05..0.05)),
                cov: (&a * a.transpose() + DMatrix::identity(d, d) * 0.004) * (1.0 + j as f64),
            }
        })
        .collect();
    let params = ModelParams::new(1, l, regime_params, chain).unwrap();
    let factors: Vec<DMatrix<f64>> = params.regimes.iter().map(|r| cholesky(&r.cov)).collect();
    let mut targets = Vec::with_capacity(t_max);
    let mut exog = Vec::with_capacity(t_max);
    let mut s = sample_regime(rng, params.chain.initial().iter().copied());
    for t in 0..t_max {
        if t > 0 {
            s = sample_regime(rng, params.chain.transition().row(s).iter().copied());
        }
        let psi = DVector::from_vec(vec![1.0, rng.sample::<f64, _>(StandardNormal)]);
        targets.push(&params.regimes[s].coef * &psi + &factors[s] * normals(rng, d));
        exog.push(psi);
    }
    let obs = Observations {
        n: 1,
        y: vec![DVector::zeros(d); t_max + 1],
        targets,
        exog,
    };
    (params, obs)
}

fn filter_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for rep in 0..50u64 {
        for (regimes, t_max) in [(1usize, 12usize), (2, 12), (3, 7), (4, 6)] {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * rep + regimes as u64);
            let (params, obs) = random_regression(&mut rng, regimes, t_max);
            let library_eta = log_densities(&obs, &params).unwrap();
            let own_eta: Vec<DVector<f64>> = (0..t_max)
                .map(|k| {
                    DVector::from_fn(regimes, |j, _| {
                        let e = &obs.targets[k] - &params.regimes[j].coef * &obs.exog[k];
                        gaussian_log_density(&e, &params.regimes[j].cov)
                    })
                })
                .collect();
            for horizon in 1..=t_max {
                let filter = hamilton_filter(
                    &library_eta[..horizon],
                    &params.chain,
                    params.chain.initial(),
                )
                .unwrap();
                let smoother = exact_smoother(&filter, &params.chain).unwrap();
                let brute = enumerate_paths(&own_eta[..horizon], &params.chain);
                for t in 0..horizon {
                    worst = worst
                        .max((&filter.z_filt[t] - &brute.filtered[t]).abs().max())
                        .max((&smoother.z_smooth[t] - &brute.smoothed[t]).abs().max());
                }
                for (a, b) in smoother.joint.iter().zip(&brute.joint) {
                    worst = worst.max((a - b).abs().max());
                }
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!("{cases} (N,T) cases over 50 parameterizations, max abs error {worst:.2e} (< 1e-10), runtime < 10 s"),
    )
}

// ---------------------------------------------------------------------------
// 2. EM monotonicity and fixed point

fn simulated_panel(
    params: &ModelParams,
    horizon: usize,
    seed: u64,
) -> (merton_core::market_data::LogPanel, RegimePath) {
    let n = params.n;
    let spec = SimulationSpec {
        params: params.clone(),
        initial_values: [vec![100.0; n], vec![80.0; n]].concat(),
        initial_rate: 0.01,
        payments: PaymentRule::PayoutRatio {
            ratios: [vec![0.03; n], vec![0.05; n]].concat(),
        },
        exog: vec![vec![1.0]; horizon],
        seed,
    };
    let (_, regimes, lp) = simulate_market(&spec).unwrap();
    (lp, regimes)
}

fn random_two_regime(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho: [&[f64]; 3] = [&[1.0, 0.3, -0.2], &[0.3, 1.0, 0.1], &[-0.2, 0.1, 1.0]];
    let sd = [
        rng.random_range(0.03..0.05),
        rng.random_range(0.01..0.02),
        0.001,
    ];
    let ratio = rng.random_range(1.5..2.5);
    let stress_sd: Vec<f64> = sd.iter().map(|s| s * ratio).collect();
    let stay = rng.random_range(0.85..0.97);
    let stay2 = rng.random_range(0.8..0.95);
    ModelParams::new(
        1,
        1,
        vec![
            regime(
                &[rng.random_range(0.0..0.03), 0.006, 0.0002],
                correlated(&sd, &rho),
            ),
            regime(
                &[rng.random_range(-0.04..0.0), 0.004, -0.0002],
                correlated(&stress_sd, &rho),
            ),
        ],
        chain(&[0.5, 0.5], &[&[stay, 1.0 - stay], &[1.0 - stay2, stay2]]),
    )
    .unwrap()
}

fn em_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut worst_drop = 0.0f64;
    let mut worst_refit = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..20u64 {
        let (lp, _) = simulated_panel(&random_two_regime(200 + k), 200, 300 + k);
        let cfg = EmConfig {
            n_regimes: 2,
            max_iter: 5000,
            loglik_tol: 1e-9,
            restarts: 1,
            seed: k,
            ..Default::default()
        };
        let fit = match em_fit(&lp, &cfg) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("dataset {k}: {e}"));
                continue;
            }
        };
        if !fit.converged {
            failures.push(format!("dataset {k}: no convergence"));
        }
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let refit_cfg = EmConfig {
            init: EmInit::Params(fit.params.clone()),
            ..cfg
        };
        match em_fit(&lp, &refit_cfg) {
            Ok(refit) => {
                let rel =
                    (refit.loglik() - fit.loglik()).abs() / (cfg.loglik_tol * fit.loglik().abs());
                worst_refit = worst_refit.max(rel);
            }
            Err(e) => failures.push(format!("dataset {k} refit: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty()
        && worst_drop <= 1e-10
        && worst_refit < 1.0
        && elapsed < Duration::from_secs(60);
    let mut detail = format!(
        "20 datasets, largest loglik decrease {worst_drop:.2e} (<= 1e-10), refit change {worst_refit:.3} x tol (< 1), runtime < 60 s"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 3. Parameter recovery

fn parameter_recovery() -> Outcome {
    let start = Instant::now();
    let rho: [&[f64]; 3] = [&[1.0, 0.3, -0.2], &[0.3, 1.0, 0.1], &[-0.2, 0.1, 1.0]];
    let sd = [0.03, 0.012, 0.0008];
    let calm = correlated(&sd, &rho);
    let truth = ModelParams::new(
        1,
        1,
        vec![
            regime(&[0.02, 0.008, 0.0003], calm.clone()),
            regime(&[-0.02, 0.002, -0.0003], calm * 4.0),
        ],
        chain(&[0.5, 0.5], &[&[0.95, 0.05], &[0.05, 0.95]]),
    )
    .unwrap();
    let mut successes = 0;
    let mut notes = Vec::new();
    let mut worst_z = 0.0f64;
    let mut lowest_accuracy = 1.0f64;
    for rep in 0..20u64 {
        let (lp, regimes) = simulated_panel(&truth, 400, 7000 + rep);
        let cfg = EmConfig {
            n_regimes: 2,
            max_iter: 2000,
            loglik_tol: 1e-9,
            restarts: 3,
            seed: rep,
            ..Default::default()
        };
        let fit = match em_fit(&lp, &cfg) {
            Ok(f) => f,
            Err(e) => {
                notes.push(format!("rep {rep}: {e}"));
                continue;
            }
        };
        let obs = build_y_series(&lp).unwrap();
        let se = coefficient_standard_errors(&obs, &fit.params, &fit.smoother).unwrap();
        // The fitted regime with the larger covariance trace is the stress regime.
        let trace = |j: usize| fit.params.regimes[j].cov.trace();
        let map = if trace(0) <= trace(1) { [0, 1] } else { [1, 0] };
        let mut z_max = 0.0f64;
        for (true_j, &fit_j) in map.iter().enumerate() {
            let diff = (&fit.params.regimes[fit_j].coef - &truth.regimes[true_j].coef).abs();
            for (d, s) in diff.iter().zip(se[fit_j].iter()) {
                z_max = z_max.max(d / s);
            }
        }
        let hits = (0..regimes.len())
            .filter(|&k| {
                let z = &fit.smoother.z_smooth[k];
                let fitted = if z[0] >= z[1] { 0 } else { 1 };
                map[regimes.0[k]] == fitted
            })
            .count();
        let accuracy = hits as f64 / regimes.len() as f64;
        worst_z = worst_z.max(z_max);
        lowest_accuracy = lowest_accuracy.min(accuracy);
        if z_max <= 3.0 && accuracy >= 0.9 {
            successes += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = successes >= 16 && elapsed < Duration::from_secs(300);
    let mut detail = format!(
        "{successes}/20 replications with every C entry within 3 SE and accuracy >= 90% (need 16); worst z {worst_z:.2}, lowest accuracy {lowest_accuracy:.3}, runtime < 300 s"
    );
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join("; ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 4. Single-regime closed form

fn single_regime_closed_form() -> Outcome {
    let mut worst_ll = 0.0f64;
    let mut worst_coef = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (_, obs) = random_regression(&mut rng, 1, 150);
        let t_max = obs.horizon();
        let d = obs.dim();
        let x = DMatrix::from_fn(t_max, 2, |t, c| obs.exog[t][c]);
        let y = DMatrix::from_fn(t_max, d, |t, c| obs.targets[t][c]);
        let xtx = x.transpose() * &x;
        let coef = xtx.lu().solve(&(x.transpose() * &y)).unwrap().transpose();
        let resid = &y - &x * coef.transpose();
        let sigma = resid.transpose() * &resid / t_max as f64;
        let log_det = sigma
            .clone()
            .cholesky()
            .unwrap()
            .l()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum::<f64>();
        let loglik = -0.5 * t_max as f64 * (d as f64 * (2.0 * PI).ln() + log_det + d as f64);

        let cfg = EmConfig {
            n_regimes: 1,
            ..Default::default()
        };
        let fit = em_fit_observations(&obs, &cfg).unwrap();
        worst_ll = worst_ll.max((fit.loglik() - loglik).abs());
        worst_coef = worst_coef.max((&fit.params.regimes[0].coef - &coef).abs().max());
    }
    Outcome::new(
        worst_ll < 1e-8 && worst_coef < 1e-10,
        format!(
            "loglik error {worst_ll:.2e} (< 1e-8), coefficient error {worst_coef:.2e} (< 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Bond price

fn bond_oracle() -> Outcome {
    let params = single_regime_model();
    let sched = test_schedule(1, 6);
    let x = DVector::from_vec(vec![0.1, -0.1, 0.01]);
    let mut worst_z = 0.0f64;
    let mut exact_one_period = false;
    for steps in 1..=4 {
        let t = 6 - steps;
        let path = vec![0; steps];
        let req = request(t, 6, 1, PathStrategy::Enumerate);
        let bond = value_path(&req, &params, &sched, &RegimePath(path.clone()), &x)
            .unwrap()
            .bond_price;
        if steps == 1 {
            exact_one_period = bond == (-x[2]).exp();
        }
        let draws =
            simulate_risk_neutral(&params, &sched, &path, t, &x, 1_000_000, 50 + steps as u64);
        let disc: Vec<f64> = draws.iter().map(|(_, s)| (-s).exp()).collect();
        let mc = mean_se(&disc);
        if mc.1 > 0.0 {
            worst_z = worst_z.max(z_score(bond, mc));
        } else if bond != mc.0 {
            worst_z = f64::INFINITY;
        }
    }
    Outcome::new(
        worst_z <= 3.0 && exact_one_period,
        format!("T-t = 1..4 against 1e6 paths, worst |error| = {worst_z:.2} SE (<= 3); T-t = 1 equals exp(-r_t): {exact_one_period}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Option prices

fn simpson_lognormal(mu: f64, var: f64, strike: f64, call: bool) -> f64 {
    let s = var.sqrt();
    let kink = (strike.ln() - mu) / s;
    let (lo, hi) = if call {
        (kink, kink.max(0.0) + s + 14.0)
    } else {
        (kink.min(0.0) - 14.0, kink)
    };
    let f = |z: f64| {
        let x = (mu + s * z).exp();
        let payoff = if call { x - strike } else { strike - x };
        payoff.max(0.0) * (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    };
    let intervals = 100_000;
    let h = (hi - lo) / intervals as f64;
    let mut sum = f(lo) + f(hi);
    for k in 1..intervals {
        sum += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn parity_residual() -> f64 {
    let mut worst = 0.0f64;
    let models = [
        (single_regime_model(), 1usize),
        (two_regime_model(), 1),
        (two_company_model(), 2),
    ];
    for (params, n) in &models {
        let sched = test_schedule(*n, 6);
        let x = DVector::from_fn(2 * n + 1, |i, _| {
            if i == 2 * n {
                0.01
            } else {
                0.1 - 0.05 * i as f64
            }
        });
        let z = DVector::from_fn(params.n_regimes(), |j, _| {
            if j == 0 {
                0.35
            } else {
                0.65 / (params.n_regimes() - 1) as f64
            }
        });
        for strike_scale in [0.5, 1.0, 1.5] {
            let mut req = request(2, 6, *n, PathStrategy::Enumerate);
            req.strikes = (0..*n)
                .map(|i| strike_scale * (1.0 + 0.2 * i as f64))
                .collect();
            req.emit_paths = true;
            let z_tt = if params.n_regimes() == 1 {
                DVector::from_element(1, 1.0)
            } else {
                z.clone()
            };
            let rep = mixture_valuation(&req, params, &sched, Some(&z_tt), &x).unwrap();
            for p in rep.paths.iter().flatten() {
                for i in 0..*n {
                    let pv = req.strikes[i] * p.bond_price;
                    let fwd = p.discounted_forward_asset[i];
                    worst =
                        worst.max((p.call[i] - p.put[i] - (fwd - pv)).abs() / fwd.max(pv).max(1.0));
                }
            }
            for (i, c) in rep.companies.iter().enumerate() {
                let pv = req.strikes[i] * rep.bond_price;
                let fwd = c.discounted_forward_asset;
                worst = worst.max((c.call - c.put - (fwd - pv)).abs() / fwd.max(pv).max(1.0));
            }
        }
    }
    worst
}

fn option_oracle() -> Outcome {
    let params = single_regime_model();
    let sched = test_schedule(1, 5);
    let x = DVector::from_vec(vec![0.1, -0.1, 0.01]);
    let path = vec![0; 3];
    let mut req = request(2, 5, 1, PathStrategy::Enumerate);
    let at_money = value_path(&req, &params, &sched, &RegimePath(path.clone()), &x).unwrap();
    let forward = at_money.discounted_forward_asset[0] / at_money.bond_price;
    let draws = simulate_risk_neutral(&params, &sched, &path, 2, &x, 1_000_000, 60);
    let mut worst_z = 0.0f64;
    for strike in [0.8 * forward, forward, 1.25 * forward] {
        req.strikes = vec![strike];
        let v = value_path(&req, &params, &sched, &RegimePath(path.clone()), &x).unwrap();
        let (calls, puts): (Vec<f64>, Vec<f64>) = draws
            .iter()
            .map(|(vals, s)| {
                let asset = log_asset(&sched, 5, vals)[0].exp();
                let disc = (-s).exp();
                (
                    disc * (asset - strike).max(0.0),
                    disc * (strike - asset).max(0.0),
                )
            })
            .unzip();
        worst_z = worst_z
            .max(z_score(v.call[0], mean_se(&calls)))
            .max(z_score(v.put[0], mean_se(&puts)));
    }
    let parity = parity_residual();
    let mut quad = 0.0f64;
    for (mu, var, k) in [
        (0.1f64, 0.04f64, 1.0f64),
        (-0.3, 0.25, 0.5),
        (0.0, 0.01, 1.2),
        (1.0, 0.5, 2.0),
        (0.2, 0.09, 0.3),
    ] {
        quad = quad
            .max((lognormal_call(mu, var, k).unwrap() - simpson_lognormal(mu, var, k, true)).abs())
            .max((lognormal_put(mu, var, k).unwrap() - simpson_lognormal(mu, var, k, false)).abs());
    }
    Outcome::new(
        worst_z <= 3.0 && parity < 1e-10 && quad < 1e-8,
        format!(
            "calls/puts at 3 strikes vs 1e6 paths worst {worst_z:.2} SE (<= 3); parity residual {parity:.2e} (< 1e-10); quadrature error {quad:.2e} (< 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Mixture consistency

fn mixture_consistency() -> Outcome {
    let params = two_regime_model();
    let sched = test_schedule(1, 5);
    let x = DVector::from_vec(vec![0.1, -0.1, 0.01]);
    let z = DVector::from_vec(vec![0.3, 0.7]);
    let mut req = request(2, 5, 1, PathStrategy::Enumerate);
    req.thresholds = vec![1.0];
    let exact = mixture_valuation(&req, &params, &sched, Some(&z), &x).unwrap();
    let exact_default = mixture_default_prob(&req, &params, &sched, Some(&z), &x).unwrap();

    // Sample regime paths from the filtered belief and average per-path values.
    let next = params.chain.transition().transpose() * &z;
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut cache: HashMap<Vec<usize>, [f64; 4]> = HashMap::new();
    let mut samples: [Vec<f64>; 4] = Default::default();
    for _ in 0..100_000 {
        let path = sample_path(&mut rng, &params, &next, 3);
        let vals = *cache.entry(path.clone()).or_insert_with(|| {
            let v = value_path(&req, &params, &sched, &RegimePath(path), &x).unwrap();
            [v.bond_price, v.call[0], v.put[0], v.default_prob_joint]
        });
        for (s, v) in samples.iter_mut().zip(vals) {
            s.push(v);
        }
    }
    let closed = [
        exact.bond_price,
        exact.companies[0].call,
        exact.companies[0].put,
        exact_default.joint,
    ];
    let mut worst_z = 0.0f64;
    for (c, s) in closed.iter().zip(&samples) {
        worst_z = worst_z.max(z_score(*c, mean_se(s)));
    }

    // The library's own sampler against enumeration.
    let sampled_req = ValuationRequest {
        strategy: PathStrategy::MonteCarlo {
            paths: 100_000,
            seed: 71,
        },
        ..req.clone()
    };
    let sampled = mixture_valuation(&sampled_req, &params, &sched, Some(&z), &x).unwrap();
    let se = sampled.diagnostics.std_errors.clone().unwrap();
    worst_z = worst_z
        .max(z_score(
            exact.bond_price,
            (sampled.bond_price, se.bond_price),
        ))
        .max(z_score(
            exact.companies[0].call,
            (sampled.companies[0].call, se.call[0]),
        ))
        .max(z_score(
            exact.companies[0].put,
            (sampled.companies[0].put, se.put[0]),
        ))
        .max(z_score(
            exact.default_prob_joint,
            (sampled.default_prob_joint, se.default_prob_joint),
        ));

    let single = single_regime_model();
    let one = mixture_valuation(
        &req,
        &single,
        &sched,
        Some(&DVector::from_element(1, 1.0)),
        &x,
    )
    .unwrap();
    let path = value_path(&req, &single, &sched, &RegimePath(vec![0; 3]), &x).unwrap();
    let bitwise = one.bond_price == path.bond_price
        && one.companies[0].call == path.call[0]
        && one.companies[0].put == path.put[0]
        && one.companies[0].discounted_forward_asset == path.discounted_forward_asset[0]
        && one.companies[0].default_prob_marginal == path.default_prob_marginal[0]
        && one.default_prob_joint == path.default_prob_joint;
    Outcome::new(
        worst_z <= 3.0 && bitwise,
        format!("bond, call, put, default vs M = 1e5 sampled paths worst {worst_z:.2} SE (<= 3); single regime bit-identical: {bitwise}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Default probabilities

fn physical_log_assets(
    params: &ModelParams,
    sched: &LinearizationSchedule,
    next: &DVector<f64>,
    t: usize,
    maturity: usize,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Vec<f64> {
    let n = params.n;
    let m = 2 * n;
    let factors: Vec<DMatrix<f64>> = params.regimes.iter().map(|r| cholesky(&r.cov)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..paths)
        .map(|_| {
            let regimes = sample_path(&mut rng, params, next, maturity - t);
            let mut v = x_t.rows(0, m).into_owned();
            let mut r = x_t[m];
            for beta in t + 1..=maturity {
                let j = regimes[beta - t - 1];
                let (ck, cr) = coef_blocks(params, j);
                let xi = &factors[j] * normals(&mut rng, m + 1);
                r += cr + xi[m];
                let ret = DVector::from_fn(m, |i, _| ck[i] + xi[i] + if i >= n { r } else { 0.0 });
                v = gordon(sched, beta, &v, &ret);
            }
            log_asset(sched, maturity, &v)[0]
        })
        .collect()
}

fn default_oracle() -> Outcome {
    let params = two_regime_model();
    let sched = test_schedule(1, 5);
    let x = DVector::from_vec(vec![0.1, -0.1, 0.01]);
    let z = DVector::from_vec(vec![0.4, 0.6]);
    let next = params.chain.transition().transpose() * &z;
    let simulated = physical_log_assets(&params, &sched, &next, 2, 5, &x, 1_000_000, 80);
    let centre = (simulated.iter().sum::<f64>() / simulated.len() as f64).exp();
    let mut worst_one = 0.0f64;
    for level in [0.8 * centre, centre, 1.1 * centre] {
        let mut req = request(2, 5, 1, PathStrategy::Enumerate);
        req.thresholds = vec![level];
        let closed = mixture_default_prob(&req, &params, &sched, Some(&z), &x)
            .unwrap()
            .joint;
        let hits: Vec<f64> = simulated
            .iter()
            .map(|&a| if a <= level.ln() { 1.0 } else { 0.0 })
            .collect();
        worst_one = worst_one.max(z_score(closed, mean_se(&hits)));
    }

    let cases = [
        (
            vec![0.1, -0.2],
            vec![0.04, 0.5 * 0.2 * 0.3, 0.09],
            vec![0.0, -0.1],
        ),
        (
            vec![0.0, 0.0],
            vec![0.25, -0.3 * 0.5 * 0.4, 0.16],
            vec![-0.4, 0.3],
        ),
        (
            vec![0.2, 0.1],
            vec![0.01, 0.8 * 0.1 * 0.15, 0.0225],
            vec![0.15, 0.12],
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst_two = 0.0f64;
    for (mean, c, upper) in &cases {
        let mean = DVector::from_column_slice(mean);
        let cov = DMatrix::from_row_slice(2, 2, &[c[0], c[1], c[1], c[2]]);
        let upper = DVector::from_column_slice(upper);
        let est = orthant_probability(&mean, &cov, &upper, &QmcConfig::default()).unwrap();
        let l = cholesky(&cov);
        let draws = 10_000_000;
        let mut hits = 0u64;
        for _ in 0..draws {
            let e = &l * normals(&mut rng, 2);
            if mean[0] + e[0] <= upper[0] && mean[1] + e[1] <= upper[1] {
                hits += 1;
            }
        }
        let p = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64 + est.std_error.powi(2)).sqrt();
        worst_two = worst_two.max(z_score(est.value, (p, se)));
    }

    let law = AssetLaw {
        mean: DVector::from_element(1, 0.2),
        cov: DMatrix::from_element(1, 1, 0.3),
    };
    let (median, _) = path_default_prob(
        &law,
        &DVector::from_element(1, 0.2f64.exp()),
        DefaultCdf::Orthant,
        &QmcConfig::default(),
    )
    .unwrap();
    let median_err = (median.joint - 0.5).abs();
    let mut independence = 0.0f64;
    for n in [2usize, 3] {
        let law = AssetLaw {
            mean: DVector::from_fn(n, |i, _| 0.1 * i as f64),
            cov: DMatrix::from_fn(
                n,
                n,
                |i, j| if i == j { 0.04 + 0.02 * i as f64 } else { 0.0 },
            ),
        };
        let thresholds = DVector::from_fn(n, |i, _| (0.05 - 0.02 * i as f64).exp());
        let (joint, marginal) = path_default_prob(
            &law,
            &thresholds,
            DefaultCdf::Orthant,
            &QmcConfig::default(),
        )
        .unwrap();
        independence = independence.max((joint.joint - marginal.product()).abs());
    }
    Outcome::new(
        worst_one <= 3.0 && worst_two <= 3.0 && median_err <= 1e-12 && independence <= 1e-10,
        format!(
            "n=1 vs 1e6 regime-switching paths worst {worst_one:.2} SE; n=2 orthant vs 1e7 draws worst {worst_two:.2} SE (<= 3); median anchor {median_err:.1e} (<= 1e-12); independence {independence:.1e} (<= 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Linearization

fn companion_p(sched: &LinearizationSchedule, beta: usize, n: usize) -> DMatrix<f64> {
    let m = 2 * n;
    let g = &sched.g[beta];
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        a[(i, i)] = g[i];
        if i >= n {
            a[(i, m)] = g[i];
        }
    }
    a[(m, m)] = 1.0;
    a
}

fn companion_q(sched: &LinearizationSchedule, beta: usize, n: usize, scale: f64) -> DMatrix<f64> {
    let m = 2 * n;
    let g = &sched.g[beta];
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        a[(i, i)] = g[i];
        a[(i, m)] = g[i];
    }
    a[(m, m)] = 1.0 / scale;
    a
}

fn linearization() -> Outcome {
    let mut newton = 0.0f64;
    for k in 0..=1000 {
        let a = -(10f64.powf(-6.0 + k as f64 * (20f64.log10() + 6.0) / 1000.0));
        let exact = -(-a).exp_m1().ln();
        let solved = newton_solve_mu(a, 0.0, 1e-14, 200).unwrap();
        newton = newton.max((solved - exact).abs());
    }

    let sched = test_schedule(2, 4);
    let v_prev = DVector::<f64>::from_vec(vec![0.3, -0.1, 0.2, 0.5]);
    let ret = DVector::<f64>::from_vec(vec![0.02, -0.01, 0.03, 0.01]);
    let mut expansion = 0.0f64;
    for t in 1..=4 {
        // Payments chosen so that p̃_t − Ṽ_t = μ_t under the exact recursion.
        let value = DVector::from_fn(4, |i, _| {
            (v_prev[i] + ret[i]).exp() / (1.0 + sched.mu[t][i].exp())
        });
        let exact = value.map(f64::ln);
        let pay = &exact + &sched.mu[t];
        let mut at_point = sched.clone();
        at_point.log_payments[t] = pay;
        expansion = expansion.max((gordon(&at_point, t, &v_prev, &ret) - &exact).abs().max());
        let library = merton_core::linearization::gordon_step(
            &v_prev,
            &at_point.log_payments[t],
            &ret,
            &at_point,
            t,
        );
        expansion = expansion.max((library - &exact).abs().max());
    }
    let mu_a = DVector::from_vec(vec![0.4, -0.7]);
    let lin = asset_linearize(&mu_a);
    let equity = DVector::from_vec(vec![1.2f64, 0.3]);
    let values = DVector::from_vec(vec![
        equity[0],
        equity[1],
        equity[0] + mu_a[0],
        equity[1] + mu_a[1],
    ]);
    let exact_asset = DVector::from_fn(2, |i, _| (values[i].exp() + values[i + 2].exp()).ln());
    expansion = expansion.max((lin.apply(&values) - exact_asset).abs().max());

    let params = two_company_model();
    let sched = test_schedule(2, 6);
    let path = RegimePath(vec![0, 1, 1, 0, 1]);
    let p = build_p_dynamics(&params, &sched, &path, 1).unwrap();
    let q = build_q_dynamics(&params, &sched, &path, 1).unwrap();
    let scales: Vec<f64> = path
        .0
        .iter()
        .map(|&j| risk_neutral_rate(&params, j).scale)
        .collect();
    let n = 2;
    let mut products = 0.0f64;
    for beta in 1..=6 {
        for i in beta..=6 {
            let mut iter_p = DMatrix::identity(5, 5);
            let mut iter_q = DMatrix::identity(5, 5);
            for alpha in beta + 1..=i {
                iter_p = companion_p(&sched, alpha, n) * iter_p;
                iter_q = companion_q(&sched, alpha, n, scales[alpha - 2]) * iter_q;
            }
            if beta > 1 {
                // trailing Q_0^{-1}: [[I, Gδ], [0, 1]] physical, diag(I, 1/F) risk neutral
                let mut q0p = DMatrix::identity(5, 5);
                for c in n..2 * n {
                    q0p[(c, 4)] = sched.g[beta][c];
                }
                let mut q0q = DMatrix::identity(5, 5);
                q0q[(4, 4)] = 1.0 / scales[beta - 2];
                iter_p *= q0p;
                iter_q *= q0q;
            }
            products = products
                .max((transition_product(&p, beta, i) - &iter_p).abs().max())
                .max((transition_product(&q, beta, i) - &iter_q).abs().max());
            if beta == 1 && i > 1 {
                // Physical block form: top-left ∏G, top-right Σ_α ∏_{γ>=α} G_γ on liabilities.
                let pi = transition_product(&p, 1, i);
                for c in 0..2 * n {
                    let g_prod: f64 = (2..=i).map(|a| sched.g[a][c]).product();
                    let top_right: f64 = if c < n {
                        0.0
                    } else {
                        (2..=i)
                            .map(|a| (a..=i).map(|b| sched.g[b][c]).product::<f64>())
                            .sum()
                    };
                    products = products
                        .max((pi[(c, c)] - g_prod).abs())
                        .max((pi[(c, 4)] - top_right).abs());
                }
            }
        }
    }
    Outcome::new(
        newton < 1e-12 && expansion < 1e-10 && products < 1e-12,
        format!(
            "Newton vs closed form {newton:.1e} (< 1e-12); expansion-point error {expansion:.1e} (< 1e-10); transition products {products:.1e} (< 1e-12)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Determinism

const PIPELINE_PARAMS: &str = r#"{
  "version": 1, "N": 2, "n": 2, "l": 1,
  "C": [
    [[0.02], [0.015], [0.008], [0.007], [0.0002]],
    [[-0.01], [-0.012], [0.009], [0.008], [-0.0002]]
  ],
  "Sigma": [
    [[0.0016, 0.0006, 0.0001, 0.00005, 0.000002],
     [0.0006, 0.0020, 0.00005, 0.0001, 0.000002],
     [0.0001, 0.00005, 0.0002, 0.00005, 0.000001],
     [0.00005, 0.0001, 0.00005, 0.00025, 0.000001],
     [0.000002, 0.000002, 0.000001, 0.000001, 0.000001]],
    [[0.0064, 0.0024, 0.0004, 0.0002, 0.000004],
     [0.0024, 0.0080, 0.0002, 0.0004, 0.000004],
     [0.0004, 0.0002, 0.0008, 0.0002, 0.000002],
     [0.0002, 0.0004, 0.0002, 0.0010, 0.000002],
     [0.000004, 0.000004, 0.000002, 0.000002, 0.000004]]
  ],
  "p0": [0.5, 0.5],
  "P": [[0.95, 0.05], [0.08, 0.92]]
}"#;

/// simulate → estimate → schedule → price → default, serialized.
fn pipeline() -> Vec<String> {
    let file: ParamsFile = serde_json::from_str(PIPELINE_PARAMS).unwrap();
    let truth = file.into_params().unwrap();
    let spec = SimulationSpec {
        params: truth,
        initial_values: vec![100.0, 60.0, 70.0, 90.0],
        initial_rate: 0.01,
        payments: PaymentRule::PayoutRatio {
            ratios: vec![0.03, 0.03, 0.05, 0.05],
        },
        exog: vec![vec![1.0]; 60],
        seed: 5,
    };
    let (panel, regimes, lp) = simulate_market(&spec).unwrap();
    let cfg = EmConfig {
        n_regimes: 2,
        restarts: 3,
        seed: 5,
        ..Default::default()
    };
    let fit = em_fit(&lp, &cfg).unwrap();
    let sched =
        solve_mu_schedule(&ScheduleInputs::from_log_panel(&lp).unwrap(), &fit.params).unwrap();
    let obs = build_y_series(&lp).unwrap();
    let filter = hamilton_filter(
        &log_densities(&obs, &fit.params).unwrap(),
        &fit.params.chain,
        fit.params.chain.initial(),
    )
    .unwrap();
    let req = ValuationRequest {
        t: 50,
        maturity: 60,
        strikes: vec![8.0, 5.0],
        thresholds: vec![14.0, 9.0],
        strategy: PathStrategy::MonteCarlo {
            paths: 2000,
            seed: 5,
        },
        discount: DiscountConvention::KnownRate,
        default_cdf: DefaultCdf::Orthant,
        qmc: QmcConfig {
            seed: 5,
            ..Default::default()
        },
        emit_paths: true,
    };
    let x = lp.state(50);
    let report =
        mixture_valuation(&req, &fit.params, &sched, Some(filter.filtered(50)), &x).unwrap();
    let default =
        mixture_default_prob(&req, &fit.params, &sched, Some(filter.filtered(50)), &x).unwrap();
    let bits = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect::<Vec<_>>()
            .join(",")
    };
    vec![
        bits(
            &[
                panel.equity.concat(),
                panel.liability.concat(),
                panel.spot_rates.clone(),
            ]
            .concat(),
        ),
        format!("{:?}", regimes.0),
        serde_json::to_string(
            &fit.params
                .to_file(Some(fit.loglik()), Some(fit.iterations())),
        )
        .unwrap(),
        bits(&fit.trace),
        sched.to_csv(),
        bits(&sched.mu.iter().flatten().copied().collect::<Vec<_>>()),
        serde_json::to_string(&report).unwrap(),
        bits(&[report.bond_price, report.default_prob_joint]),
        serde_json::to_string(&default).unwrap(),
    ]
}

fn determinism() -> Outcome {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(pipeline)
    };
    let one = run(1);
    let four = run(4);
    let again = run(4);
    let same_threads = four == again;
    let across_threads = one == four;
    Outcome::new(
        same_threads && across_threads,
        format!("{} artifacts; identical across runs: {same_threads}; identical across 1 and 4 threads: {across_threads}", one.len()),
    )
}
