//! Lognormal option formulas, per-path prices on firm assets, regime-path
//! mixtures and default probabilities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_p_dynamics, build_q_dynamics, DiscountConvention, PathDynamics};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, symmetrize};
use crate::linearization::{AssetLinearization, LinearizationSchedule};
use crate::mvn::{orthant_probability, QmcConfig};
use crate::normal;
use crate::params::ModelParams;
use crate::regime::{future_path_weights, paths_from_next, PathSet, PathStrategy, RegimePath};

fn check_strike(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("strike must be positive, got {k}")))
    }
}

/// `𝔼[(e^X − K)^+]` for `X ~ N(μ, σ²)`.
pub fn lognormal_call(mu: f64, var: f64, strike: f64) -> Result<f64> {
    check_strike(strike)?;
    if var < 0.0 {
        return Err(Error::invalid("variance must be non-negative"));
    }
    if var == 0.0 {
        return Ok((mu.exp() - strike).max(0.0));
    }
    let s = var.sqrt();
    let d1 = (mu + var - strike.ln()) / s;
    let d2 = d1 - s;
    Ok((mu + 0.5 * var).exp() * normal::cdf(d1) - strike * normal::cdf(d2))
}

/// `𝔼[(K − e^X)^+]` for `X ~ N(μ, σ²)`.
pub fn lognormal_put(mu: f64, var: f64, strike: f64) -> Result<f64> {
    check_strike(strike)?;
    if var < 0.0 {
        return Err(Error::invalid("variance must be non-negative"));
    }
    if var == 0.0 {
        return Ok((strike - mu.exp()).max(0.0));
    }
    let s = var.sqrt();
    let d1 = (mu + var - strike.ln()) / s;
    let d2 = d1 - s;
    Ok(strike * normal::cdf(-d2) - (mu + 0.5 * var).exp() * normal::cdf(-d1))
}

/// Terminal law of `x_T` along one path together with the discount sum
/// `S = Σ_{β=t+1..T−1} r̃_β`.
#[derive(Debug, Clone)]
pub struct TerminalLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `𝔼[S]`.
    pub discount_mean: f64,
    /// `Var[S]`.
    pub discount_var: f64,
    /// `Cov(x_T, S)`.
    pub discount_cross: DVector<f64>,
    /// `𝔼[r̃_{t+1}]`.
    pub next_rate_mean: f64,
}

impl TerminalLaw {
    pub fn bond_price(&self, known_rate: f64, convention: DiscountConvention) -> f64 {
        let lead = match convention {
            DiscountConvention::KnownRate => known_rate,
            DiscountConvention::Literal => self.next_rate_mean,
        };
        (-lead - self.discount_mean + 0.5 * self.discount_var).exp()
    }

    /// `x_T` mean under the `T`-forward measure.
    pub fn forward_mean(&self) -> DVector<f64> {
        &self.mean - &self.discount_cross
    }
}

/// Propagates `(x_β, Σ_{α=t+1..β−1} r̃_α)` jointly from `x_t` to `T`.
pub fn terminal_law(dynamics: &PathDynamics, x_t: &DVector<f64>) -> TerminalLaw {
    let d = dynamics.dim();
    let r = d - 1;
    let t = dynamics.start;
    let mut mean = x_t.clone();
    let mut cov = DMatrix::zeros(d, d);
    let mut s_mean = 0.0;
    let mut s_var = 0.0;
    let mut cross = DVector::zeros(d);
    let mut next_rate_mean = 0.0;
    for beta in t + 1..=dynamics.end() {
        let a = dynamics.companion(beta);
        if beta >= t + 2 {
            s_mean += mean[r];
            s_var += 2.0 * cross[r] + cov[(r, r)];
            cross += cov.column(r);
        }
        cross = &a * cross;
        cov = symmetrize(&(&a * &cov * a.transpose() + dynamics.shock_cov(beta)));
        let k = beta - t - 1;
        mean = &a * mean + &dynamics.q0_inv[k] * &dynamics.intercept[k];
        if beta == t + 1 {
            next_rate_mean = mean[r];
        }
    }
    TerminalLaw {
        mean,
        cov,
        discount_mean: s_mean,
        discount_var: s_var,
        discount_cross: cross,
        next_rate_mean,
    }
}

/// Gaussian law of the linearized log asset values.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `mean = W^a μ_V + (G^a)^{−1} h^a`, `cov = W^a Σ_VV W^a'`.
pub fn path_asset_law(
    state_mean: &DVector<f64>,
    state_cov: &DMatrix<f64>,
    asset: &AssetLinearization,
) -> AssetLaw {
    let m = asset.weights.ncols();
    let v_mean = state_mean.rows(0, m).into_owned();
    let v_cov = state_cov.view((0, 0), (m, m)).into_owned();
    AssetLaw {
        mean: asset.apply(&v_mean),
        cov: symmetrize(&(&asset.weights * v_cov * asset.weights.transpose())),
    }
}

/// Component-wise lognormal call and put prices scaled by the bond price.
pub fn path_call_put(
    law: &AssetLaw,
    bond: f64,
    strikes: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = law.mean.len();
    if strikes.len() != n {
        return Err(Error::invalid(
            "strike vector length differs from company count",
        ));
    }
    let mut call = DVector::zeros(n);
    let mut put = DVector::zeros(n);
    for i in 0..n {
        let var = law.cov[(i, i)].max(0.0);
        call[i] = bond * lognormal_call(law.mean[i], var, strikes[i])?;
        put[i] = bond * lognormal_put(law.mean[i], var, strikes[i])?;
    }
    Ok((call, put))
}

/// How the joint default probability is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefaultCdf {
    /// Gaussian orthant probability `ℙ[Ṽ^a_T <= ln L̄]`.
    #[default]
    Orthant,
    /// `∏_i Φ(((Σ^a)^{−1}(ln L̄ − μ^a))_i)`, for comparison only.
    LiteralPaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultProb {
    pub joint: f64,
    pub joint_std_error: f64,
}

/// Joint and marginal default probabilities under one physical asset law.
pub fn path_default_prob(
    law: &AssetLaw,
    thresholds: &DVector<f64>,
    cdf: DefaultCdf,
    qmc: &QmcConfig,
) -> Result<(DefaultProb, DVector<f64>)> {
    let n = law.mean.len();
    if thresholds.len() != n || thresholds.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::invalid(
            "default thresholds must be n positive values",
        ));
    }
    let log_l = thresholds.map(f64::ln);
    let marginals = DVector::from_fn(n, |i, _| {
        let var = law.cov[(i, i)].max(0.0);
        let gap = log_l[i] - law.mean[i];
        if var > 0.0 {
            normal::cdf(gap / var.sqrt())
        } else if gap >= 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let joint = match cdf {
        DefaultCdf::Orthant => {
            let est = orthant_probability(&law.mean, &law.cov, &log_l, qmc)?;
            let joint = est.value.min(marginals.min());
            DefaultProb {
                joint,
                joint_std_error: est.std_error,
            }
        }
        DefaultCdf::LiteralPaper => {
            let inv = law
                .cov
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::numerical("asset covariance is singular"))?;
            let z = inv * (&log_l - &law.mean);
            DefaultProb {
                joint: z.iter().map(|&x| normal::cdf(x)).product(),
                joint_std_error: 0.0,
            }
        }
    };
    Ok((joint, marginals))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuationRequest {
    pub t: usize,
    pub maturity: usize,
    /// Strike (nominal liability) vector `L`.
    pub strikes: Vec<f64>,
    /// Default thresholds `L̄`.
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub strategy: PathStrategy,
    #[serde(default)]
    pub discount: DiscountConvention,
    #[serde(default)]
    pub default_cdf: DefaultCdf,
    #[serde(default)]
    pub qmc: QmcConfig,
    #[serde(default)]
    pub emit_paths: bool,
}

impl ValuationRequest {
    pub fn validate(&self, params: &ModelParams, sched: &LinearizationSchedule) -> Result<()> {
        if self.t >= self.maturity {
            return Err(Error::invalid(format!(
                "valuation time t={} must precede maturity T={}",
                self.t, self.maturity
            )));
        }
        if self.maturity > sched.horizon() {
            return Err(Error::invalid(format!(
                "maturity {} exceeds the data horizon {}",
                self.maturity,
                sched.horizon()
            )));
        }
        let n = params.n;
        if self.strikes.len() != n || self.thresholds.len() != n {
            return Err(Error::invalid(format!(
                "strikes and thresholds need {n} entries"
            )));
        }
        if self
            .strikes
            .iter()
            .chain(&self.thresholds)
            .any(|&x| !(x > 0.0) || !x.is_finite())
        {
            return Err(Error::invalid("strikes and thresholds must be positive"));
        }
        Ok(())
    }
}

/// Values along one regime path.
#[derive(Debug, Clone, Serialize)]
pub struct PathValuation {
    /// Regimes `s_{t+1..T}`, 1-based.
    pub path: Vec<usize>,
    pub weight: f64,
    pub bond_price: f64,
    pub call: Vec<f64>,
    pub put: Vec<f64>,
    /// `B · e^{μ̂ + σ²/2}` per company.
    pub discounted_forward_asset: Vec<f64>,
    pub default_prob_joint: f64,
    pub default_prob_joint_std_error: f64,
    pub default_prob_marginal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompanyValuation {
    pub call: f64,
    pub put: f64,
    pub equity_rn: f64,
    pub liability_rn: f64,
    pub discounted_forward_asset: f64,
    pub default_prob_marginal: f64,
}

/// Monte Carlo standard errors of the mixture when paths are sampled.
#[derive(Debug, Clone, Serialize)]
pub struct MixtureErrors {
    pub bond_price: f64,
    pub call: Vec<f64>,
    pub put: Vec<f64>,
    pub default_prob_joint: f64,
    pub default_prob_marginal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureDiagnostics {
    pub paths: usize,
    pub sampled: bool,
    pub weight_entropy: f64,
    pub std_errors: Option<MixtureErrors>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValuationReport {
    pub t: usize,
    pub maturity: usize,
    pub bond_price: f64,
    pub companies: Vec<CompanyValuation>,
    pub default_prob_joint: f64,
    /// Weighted QMC standard error of the joint probability.
    pub default_prob_joint_std_error: f64,
    pub diagnostics: MixtureDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<PathValuation>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DefaultReport {
    pub t: usize,
    pub maturity: usize,
    pub joint: f64,
    pub joint_std_error: f64,
    pub marginal: Vec<f64>,
    pub diagnostics: MixtureDiagnostics,
}

/// Path posterior over `s_{t+1..T}`. With `z_tt = None` the first regime follows `p_0`.
pub fn regime_paths(
    params: &ModelParams,
    z_tt: Option<&DVector<f64>>,
    horizon: usize,
    strategy: PathStrategy,
) -> Result<PathSet> {
    match z_tt {
        Some(z) => future_path_weights(&params.chain, z, horizon, strategy),
        None => paths_from_next(&params.chain, params.chain.initial(), horizon, strategy),
    }
}

/// Everything priced along one path.
pub fn value_path(
    request: &ValuationRequest,
    params: &ModelParams,
    sched: &LinearizationSchedule,
    path: &RegimePath,
    x_t: &DVector<f64>,
) -> Result<PathValuation> {
    let n = params.n;
    let strikes = DVector::from_column_slice(&request.strikes);
    let thresholds = DVector::from_column_slice(&request.thresholds);
    let asset = &sched.asset[request.maturity];
    let q = build_q_dynamics(params, sched, path, request.t)?;
    let law_q = terminal_law(&q, x_t);
    let bond = law_q.bond_price(x_t[2 * n], request.discount);
    let fwd = path_asset_law(&law_q.forward_mean(), &law_q.cov, asset);
    let (call, put) = path_call_put(&fwd, bond, &strikes)?;
    let discounted_forward_asset = (0..n)
        .map(|i| bond * (fwd.mean[i] + 0.5 * fwd.cov[(i, i)]).exp())
        .collect();
    let p = build_p_dynamics(params, sched, path, request.t)?;
    let law_p = terminal_law(&p, x_t);
    let phys = path_asset_law(&law_p.mean, &law_p.cov, asset);
    let (joint, marginal) =
        path_default_prob(&phys, &thresholds, request.default_cdf, &request.qmc)?;
    Ok(PathValuation {
        path: path.labels(),
        weight: 0.0,
        bond_price: bond,
        call: call.iter().copied().collect(),
        put: put.iter().copied().collect(),
        discounted_forward_asset,
        default_prob_joint: joint.joint,
        default_prob_joint_std_error: joint.joint_std_error,
        default_prob_marginal: marginal.iter().copied().collect(),
    })
}

/// Flat layout of the mixed quantities of one path.
fn flatten(v: &PathValuation) -> Vec<f64> {
    let mut out = vec![v.bond_price];
    out.extend(&v.call);
    out.extend(&v.put);
    out.extend(&v.discounted_forward_asset);
    out.push(v.default_prob_joint);
    out.extend(&v.default_prob_marginal);
    out
}

const BLOCK: usize = 4096;

/// Weighted sums and weighted squared sums, reduced in fixed blocks so the
/// result does not depend on the worker count.
struct Mixed {
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
    qmc_std_error: f64,
    kept: Option<Vec<PathValuation>>,
}

struct BlockSums {
    sums: Vec<f64>,
    squares: Vec<f64>,
    qmc_var: f64,
    kept: Vec<PathValuation>,
}

fn mix<F>(set: &PathSet, keep: bool, eval: F) -> Result<Mixed>
where
    F: Fn(&RegimePath) -> Result<PathValuation> + Sync,
{
    let blocks = set
        .paths
        .par_chunks(BLOCK)
        .zip(set.weights.par_chunks(BLOCK))
        .map(|(paths, weights)| {
            let mut columns: Vec<Vec<f64>> = Vec::new();
            let mut squares: Vec<Vec<f64>> = Vec::new();
            let mut qmc_var = Vec::with_capacity(paths.len());
            let mut kept = Vec::new();
            for (path, &w) in paths.iter().zip(weights) {
                let mut v = eval(path)?;
                v.weight = w;
                let flat = flatten(&v);
                columns.resize_with(flat.len(), Vec::new);
                squares.resize_with(flat.len(), Vec::new);
                for (k, x) in flat.iter().enumerate() {
                    columns[k].push(w * x);
                    squares[k].push(w * x * x);
                }
                qmc_var.push((w * v.default_prob_joint_std_error).powi(2));
                if keep {
                    kept.push(v);
                }
            }
            Ok(BlockSums {
                sums: columns.iter().map(|c| pairwise_sum(c)).collect(),
                squares: squares.iter().map(|c| pairwise_sum(c)).collect(),
                qmc_var: pairwise_sum(&qmc_var),
                kept,
            })
        })
        .collect::<Result<Vec<BlockSums>>>()?;
    let width = blocks.first().map_or(0, |b| b.sums.len());
    let reduce = |f: &dyn Fn(&BlockSums) -> &Vec<f64>| -> Vec<f64> {
        (0..width)
            .map(|k| pairwise_sum(&blocks.iter().map(|b| f(b)[k]).collect::<Vec<_>>()))
            .collect()
    };
    let mean = reduce(&|b| &b.sums);
    let mean_sq = reduce(&|b| &b.squares);
    let qmc_var = pairwise_sum(&blocks.iter().map(|b| b.qmc_var).collect::<Vec<_>>());
    let kept = keep.then(|| blocks.into_iter().flat_map(|b| b.kept).collect());
    Ok(Mixed {
        mean,
        mean_sq,
        qmc_std_error: qmc_var.sqrt(),
        kept,
    })
}

fn std_errors(set: &PathSet, mean: &[f64], mean_sq: &[f64]) -> Vec<f64> {
    let m = set.paths.len() as f64;
    mean.iter()
        .zip(mean_sq)
        .map(|(mu, s2)| {
            let var = (s2 - mu * mu).max(0.0) * m / (m - 1.0).max(1.0);
            (var / m).sqrt()
        })
        .collect()
}

/// Path-posterior mixture of bond, call, put, risk-neutral equity and
/// liability values and default probabilities.
pub fn mixture_valuation(
    request: &ValuationRequest,
    params: &ModelParams,
    sched: &LinearizationSchedule,
    z_tt: Option<&DVector<f64>>,
    x_t: &DVector<f64>,
) -> Result<ValuationReport> {
    request.validate(params, sched)?;
    if x_t.len() != params.dim() {
        return Err(Error::invalid("state vector has the wrong dimension"));
    }
    let n = params.n;
    let set = regime_paths(params, z_tt, request.maturity - request.t, request.strategy)?;
    let Mixed {
        mean,
        mean_sq,
        qmc_std_error,
        kept,
    } = mix(&set, request.emit_paths, |p| {
        value_path(request, params, sched, p, x_t)
    })?;
    let bond = mean[0];
    let call = &mean[1..1 + n];
    let put = &mean[1 + n..1 + 2 * n];
    let fwd = &mean[1 + 2 * n..1 + 3 * n];
    let joint = mean[1 + 3 * n];
    let marg = &mean[2 + 3 * n..2 + 4 * n];
    let companies = (0..n)
        .map(|i| CompanyValuation {
            call: call[i],
            put: put[i],
            equity_rn: call[i],
            liability_rn: request.strikes[i] * bond - put[i],
            discounted_forward_asset: fwd[i],
            default_prob_marginal: marg[i],
        })
        .collect();
    let std_errors = set.sampled.then(|| {
        let se = std_errors(&set, &mean, &mean_sq);
        MixtureErrors {
            bond_price: se[0],
            call: se[1..1 + n].to_vec(),
            put: se[1 + n..1 + 2 * n].to_vec(),
            default_prob_joint: se[1 + 3 * n],
            default_prob_marginal: se[2 + 3 * n..2 + 4 * n].to_vec(),
        }
    });
    Ok(ValuationReport {
        t: request.t,
        maturity: request.maturity,
        bond_price: bond,
        companies,
        default_prob_joint: joint,
        default_prob_joint_std_error: qmc_std_error,
        diagnostics: MixtureDiagnostics {
            paths: set.paths.len(),
            sampled: set.sampled,
            weight_entropy: set.entropy(),
            std_errors,
        },
        paths: kept,
    })
}

/// Path-posterior mixture of physical default probabilities.
pub fn mixture_default_prob(
    request: &ValuationRequest,
    params: &ModelParams,
    sched: &LinearizationSchedule,
    z_tt: Option<&DVector<f64>>,
    x_t: &DVector<f64>,
) -> Result<DefaultReport> {
    request.validate(params, sched)?;
    if x_t.len() != params.dim() {
        return Err(Error::invalid("state vector has the wrong dimension"));
    }
    let n = params.n;
    let thresholds = DVector::from_column_slice(&request.thresholds);
    let asset = &sched.asset[request.maturity];
    let set = regime_paths(params, z_tt, request.maturity - request.t, request.strategy)?;
    let mixed = mix(&set, false, |path| {
        let p = build_p_dynamics(params, sched, path, request.t)?;
        let law = terminal_law(&p, x_t);
        let phys = path_asset_law(&law.mean, &law.cov, asset);
        let (joint, marginal) =
            path_default_prob(&phys, &thresholds, request.default_cdf, &request.qmc)?;
        Ok(PathValuation {
            path: Vec::new(),
            weight: 0.0,
            bond_price: 0.0,
            call: vec![0.0; n],
            put: vec![0.0; n],
            discounted_forward_asset: vec![0.0; n],
            default_prob_joint: joint.joint,
            default_prob_joint_std_error: joint.joint_std_error,
            default_prob_marginal: marginal.iter().copied().collect(),
        })
    })?;
    let std_errors = set.sampled.then(|| {
        let se = std_errors(&set, &mixed.mean, &mixed.mean_sq);
        MixtureErrors {
            bond_price: 0.0,
            call: Vec::new(),
            put: Vec::new(),
            default_prob_joint: se[1 + 3 * n],
            default_prob_marginal: se[2 + 3 * n..2 + 4 * n].to_vec(),
        }
    });
    Ok(DefaultReport {
        t: request.t,
        maturity: request.maturity,
        joint: mixed.mean[1 + 3 * n],
        joint_std_error: mixed.qmc_std_error,
        marginal: mixed.mean[2 + 3 * n..2 + 4 * n].to_vec(),
        diagnostics: MixtureDiagnostics {
            paths: set.paths.len(),
            sampled: set.sampled,
            weight_entropy: set.entropy(),
            std_errors,
        },
    })
}
