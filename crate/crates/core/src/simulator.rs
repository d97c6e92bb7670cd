//! Synthetic panels under the physical system and state paths under fixed dynamics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::PathDynamics;
use crate::error::{Error, Result};
use crate::linalg::psd_cholesky;
use crate::market_data::{log_transform, LogPanel, MarketPanel};
use crate::params::ModelParams;
use crate::regime::{sample_chain, RegimePath};
use crate::rng::{seek, Substreams};

/// How payments are generated from simulated returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum PaymentRule {
    /// `p_t = ρ e^{k̃_t} V_{t−1}`, `V_t = (1 − ρ) e^{k̃_t} V_{t−1}`, one ratio per
    /// stacked component (equity block then liability block).
    PayoutRatio { ratios: Vec<f64> },
    /// Given payments `p_t` for `t = 0..=T` (stacked); `V_t = e^{k̃_t} V_{t−1} − p_t`.
    Fixed { payments: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub params: ModelParams,
    /// Stacked `(V^e_0, V^ℓ_0)`.
    pub initial_values: Vec<f64>,
    /// Simple spot rate `r_0`.
    pub initial_rate: f64,
    pub payments: PaymentRule,
    /// `ψ_t` for `t = 1..=T`.
    pub exog: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn horizon(&self) -> usize {
        self.exog.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.params.n;
        if self.initial_values.len() != 2 * n || self.initial_values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("initial values must be 2n positive numbers"));
        }
        if !(self.initial_rate > -1.0) {
            return Err(Error::invalid("initial spot rate must exceed -1"));
        }
        if self.exog.is_empty() || self.exog.iter().any(|p| p.len() != self.params.l) {
            return Err(Error::invalid(
                "exogenous rows must have l entries for t = 1..=T",
            ));
        }
        match &self.payments {
            PaymentRule::PayoutRatio { ratios } => {
                if ratios.len() != 2 * n || ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
                    return Err(Error::invalid("payout ratios must be 2n values in (0, 1)"));
                }
            }
            PaymentRule::Fixed { payments } => {
                if payments.len() != self.horizon() + 1
                    || payments
                        .iter()
                        .any(|p| p.len() != 2 * n || p.iter().any(|x| !(*x > 0.0)))
                {
                    return Err(Error::invalid(
                        "fixed payments must be 2n positive values for t = 0..=T",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Stream ids inside one simulation seed.
const REGIME_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Lower factors of every regime covariance.
pub fn noise_factors(params: &ModelParams) -> Result<Vec<DMatrix<f64>>> {
    (0..params.n_regimes())
        .map(|j| psd_cholesky(params.sigma(j), 1e-12))
        .collect()
}

fn standard_normals(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Simulates `s_t`, `ξ_t`, `r̃_t = r̃_{t−1} + c_r'ψ_t + v_t`, `k̃_t = C_k ψ_t + δ r̃_t + u_t`
/// and evolves values with the exact recursion `V_t + p_t = e^{k̃_t} V_{t−1}`.
pub fn simulate_market(spec: &SimulationSpec) -> Result<(MarketPanel, RegimePath, LogPanel)> {
    spec.validate()?;
    let params = &spec.params;
    let n = params.n;
    let d = params.dim();
    let t_max = spec.horizon();
    let streams = Substreams::new(spec.seed);
    let mut regime_rng = streams.stream(REGIME_STREAM);
    let regimes = sample_chain(
        &params.chain,
        params.chain.initial(),
        t_max,
        &mut regime_rng,
    );
    let factors = noise_factors(params)?;
    let mut noise_rng = streams.stream(NOISE_STREAM);

    let mut values = spec.initial_values.clone();
    let mut log_rate = spec.initial_rate.ln_1p();
    let mut all_values = vec![values.clone()];
    let mut rates = vec![spec.initial_rate];
    let mut payments: Vec<Option<Vec<f64>>> = vec![match &spec.payments {
        PaymentRule::PayoutRatio { ratios } => Some(
            values
                .iter()
                .zip(ratios)
                .map(|(v, r)| r / (1.0 - r) * v)
                .collect(),
        ),
        PaymentRule::Fixed { payments } => Some(payments[0].clone()),
    }];
    for t in 1..=t_max {
        let j = regimes.as_slice()[t - 1];
        seek(&mut noise_rng, t as u64);
        let xi = &factors[j] * standard_normals(&mut noise_rng, d);
        let psi = DVector::from_column_slice(&spec.exog[t - 1]);
        log_rate += params.c_r(j).dot(&psi) + xi[2 * n];
        let drift = params.c_k(j) * &psi;
        let mut pay = vec![0.0; 2 * n];
        for c in 0..2 * n {
            let k = drift[c] + if c >= n { log_rate } else { 0.0 } + xi[c];
            let gross = k.exp() * values[c];
            match &spec.payments {
                PaymentRule::PayoutRatio { ratios } => {
                    pay[c] = ratios[c] * gross;
                    values[c] = (1.0 - ratios[c]) * gross;
                }
                PaymentRule::Fixed { payments } => {
                    pay[c] = payments[t][c];
                    values[c] = gross - pay[c];
                    if !(values[c] > 0.0) {
                        return Err(Error::numerical(format!(
                            "simulated value of component {} turns non-positive at t={t}",
                            c + 1
                        )));
                    }
                }
            }
            if !values[c].is_finite() || !(values[c] > 0.0) || !(pay[c] > 0.0) {
                return Err(Error::numerical(format!(
                    "simulated value overflow at t={t}"
                )));
            }
        }
        all_values.push(values.clone());
        payments.push(Some(pay));
        rates.push(log_rate.exp_m1());
    }
    let panel = MarketPanel {
        company_ids: (1..=n).map(|i| format!("c{i:03}")).collect(),
        equity: all_values.iter().map(|v| v[..n].to_vec()).collect(),
        liability: all_values.iter().map(|v| v[n..].to_vec()).collect(),
        dividends: payments
            .iter()
            .map(|p| p.as_ref().map(|p| p[..n].to_vec()))
            .collect(),
        debt_payments: payments
            .iter()
            .map(|p| p.as_ref().map(|p| p[n..].to_vec()))
            .collect(),
        spot_rates: rates,
        exog: spec.exog.clone(),
    };
    panel.validate()?;
    let log_panel = log_transform(&panel);
    Ok((panel, regimes, log_panel))
}

/// Regimes as CSV (`t, s_t`, 1-based).
pub fn regimes_csv(path: &RegimePath) -> String {
    let mut out = String::from("t,s_t\n");
    for (k, s) in path.labels().iter().enumerate() {
        out.push_str(&format!("{},{s}\n", k + 1));
    }
    out
}

/// Runs `paths` state trajectories of `dynamics` from `x_t` and maps each one
/// (`x_{t+1..T}`) through `f`. Path `k` draws from substream `k`, step `β − t`.
pub fn simulate_state_map<T, F>(
    dynamics: &PathDynamics,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[DVector<f64>]) -> T + Sync,
{
    let factors: Vec<DMatrix<f64>> = dynamics
        .cov
        .iter()
        .map(|c| psd_cholesky(c, 1e-12))
        .collect::<Result<_>>()?;
    let streams = Substreams::new(seed);
    let d = dynamics.dim();
    let t = dynamics.start;
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = streams.stream(k);
            let mut x = x_t.clone();
            let mut states = Vec::with_capacity(dynamics.steps());
            for beta in t + 1..=dynamics.end() {
                seek(&mut rng, (beta - t) as u64);
                let xi = &factors[beta - t - 1] * standard_normals(&mut rng, d);
                x = dynamics.step(beta, &x, &xi);
                states.push(x.clone());
            }
            f(&states)
        })
        .collect())
}

/// `M` stacked state paths under `dynamics` (typically risk-neutral).
pub fn simulate_q_states(
    dynamics: &PathDynamics,
    x_t: &DVector<f64>,
    paths: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    simulate_state_map(dynamics, x_t, paths, seed, |s| s.to_vec())
}
