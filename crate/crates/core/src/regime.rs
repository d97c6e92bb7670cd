//! Markov-chain machinery for the latent regime process.
//!
//! Regimes are 0-based inside the crate. The CLI and file formats use 1-based
//! labels; conversion happens only at those boundaries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Substreams;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest path count that is enumerated exactly (`N^k <= 2^20`).
pub const ENUMERATION_LIMIT: usize = 1 << 20;

/// Initial distribution `p_0` and row-stochastic transition matrix `P̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    initial: DVector<f64>,
    transition: DMatrix<f64>,
}

/// JSON form `{"p0": [...], "P": [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSpec {
    pub p0: Vec<f64>,
    #[serde(rename = "P")]
    pub transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(initial: DVector<f64>, transition: DMatrix<f64>) -> Result<Self> {
        let n = initial.len();
        if n == 0 || transition.nrows() != n || transition.ncols() != n {
            return Err(Error::invalid("chain dimensions are inconsistent"));
        }
        let check = |row: &mut dyn Iterator<Item = f64>, what: String| -> Result<()> {
            let mut sum = 0.0;
            for p in row {
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::invalid(format!(
                        "{what} has a negative or non-finite entry"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
            }
            Ok(())
        };
        check(&mut initial.iter().copied(), "initial distribution".into())?;
        for i in 0..n {
            check(
                &mut transition.row(i).iter().copied(),
                format!("transition row {}", i + 1),
            )?;
        }
        Ok(Self {
            initial,
            transition,
        })
    }

    /// Single-regime chain.
    pub fn trivial() -> Self {
        Self {
            initial: DVector::from_element(1, 1.0),
            transition: DMatrix::from_element(1, 1, 1.0),
        }
    }

    pub fn from_spec(spec: &ChainSpec) -> Result<Self> {
        let n = spec.p0.len();
        if spec.transition.len() != n || spec.transition.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(
                "transition matrix must be N x N with N = len(p0)",
            ));
        }
        let flat: Vec<f64> = spec.transition.iter().flatten().copied().collect();
        Self::new(
            DVector::from_vec(spec.p0.clone()),
            DMatrix::from_row_slice(n, n, &flat),
        )
    }

    pub fn to_spec(&self) -> ChainSpec {
        ChainSpec {
            p0: self.initial.iter().copied().collect(),
            transition: self
                .transition
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    pub fn regimes(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.transition[(from, to)]
    }

    /// One step of the chain applied to a distribution: `P̂' z`.
    pub fn propagate(&self, z: &DVector<f64>) -> DVector<f64> {
        self.transition.tr_mul(z)
    }

    /// `ℙ[s_t = · | 𝓕_0] = (p_0 P̂^{t-1})'` for `t >= 1`.
    pub fn marginal(&self, t: usize) -> DVector<f64> {
        assert!(t >= 1, "regime marginals are defined for t >= 1");
        let mut z = self.initial.clone();
        for _ in 1..t {
            z = self.propagate(&z);
        }
        z
    }
}

/// An ordered sequence of 0-based regime indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegimePath(pub Vec<usize>);

impl RegimePath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Builds a path from 1-based labels.
    pub fn from_labels(labels: &[usize], regimes: usize) -> Result<Self> {
        labels
            .iter()
            .map(|&s| {
                if s == 0 || s > regimes {
                    Err(Error::invalid(format!(
                        "regime label {s} outside 1..={regimes}"
                    )))
                } else {
                    Ok(s - 1)
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(RegimePath)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.0.iter().map(|s| s + 1).collect()
    }
}

/// `p_{0,s_1} ∏ p_{s_t s_{t+1}}`.
pub fn path_probability(chain: &MarkovChain, path: &RegimePath) -> f64 {
    chain_path_weight(chain, chain.initial(), path.as_slice())
}

/// `first[s_1] ∏ p_{s_t s_{t+1}}` for an arbitrary distribution of the first regime.
fn chain_path_weight(chain: &MarkovChain, first: &DVector<f64>, path: &[usize]) -> f64 {
    match path.split_first() {
        None => 1.0,
        Some((&s0, rest)) => {
            let mut w = first[s0];
            let mut prev = s0;
            for &s in rest {
                w *= chain.p(prev, s);
                prev = s;
            }
            w
        }
    }
}

/// How future regime paths are covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PathStrategy {
    /// Exact enumeration when `N^k <= 2^20`, sampling otherwise.
    Auto { mc_paths: usize, seed: u64 },
    /// Exact enumeration; errors if the path count exceeds the limit.
    Enumerate,
    /// `paths` sampled paths with weight `1/paths` each.
    MonteCarlo { paths: usize, seed: u64 },
}

impl Default for PathStrategy {
    fn default() -> Self {
        PathStrategy::Auto {
            mc_paths: 100_000,
            seed: 0,
        }
    }
}

/// Weighted regime paths over `t+1..t+k`.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub paths: Vec<RegimePath>,
    pub weights: Vec<f64>,
    /// True when the set was sampled rather than enumerated.
    pub sampled: bool,
}

impl PathSet {
    /// Shannon entropy of the weights (nats).
    pub fn entropy(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }
}

fn enumeration_size(regimes: usize, horizon: usize) -> Option<usize> {
    let mut count: usize = 1;
    for _ in 0..horizon {
        count = count.checked_mul(regimes)?;
        if count > ENUMERATION_LIMIT {
            return None;
        }
    }
    Some(count)
}

/// Path posterior `ℙ[s_{t+1..t+k} | 𝓕_t]` given the filtered vector `z_{t|t}`.
pub fn future_path_weights(
    chain: &MarkovChain,
    z_tt: &DVector<f64>,
    horizon: usize,
    strategy: PathStrategy,
) -> Result<PathSet> {
    if z_tt.len() != chain.regimes() {
        return Err(Error::invalid(
            "filtered vector length differs from regime count",
        ));
    }
    if (z_tt.sum() - 1.0).abs() > 1e-9 || z_tt.iter().any(|&z| z < 0.0) {
        return Err(Error::invalid(
            "filtered probabilities must be a distribution",
        ));
    }
    paths_from_next(chain, &chain.propagate(z_tt), horizon, strategy)
}

/// Path weights when the distribution of the first future regime is `next` directly.
///
/// At `t = 0` this is `p_0`; for `t >= 1` it is `P̂' z_{t|t}`.
pub fn paths_from_next(
    chain: &MarkovChain,
    next: &DVector<f64>,
    horizon: usize,
    strategy: PathStrategy,
) -> Result<PathSet> {
    let n = chain.regimes();
    let size = enumeration_size(n, horizon);
    let sample = match (strategy, size) {
        (PathStrategy::Enumerate, None) => {
            return Err(Error::invalid(format!(
                "{n}^{horizon} regime paths exceed the enumeration limit of {ENUMERATION_LIMIT}"
            )))
        }
        (PathStrategy::Enumerate, Some(_)) | (PathStrategy::Auto { .. }, Some(_)) => None,
        (PathStrategy::Auto { mc_paths, seed }, None) => Some((mc_paths, seed)),
        (PathStrategy::MonteCarlo { paths, seed }, _) => Some((paths, seed)),
    };
    match sample {
        None => {
            let count = size.expect("enumerable");
            let mut paths = Vec::with_capacity(count);
            let mut weights = Vec::with_capacity(count);
            for code in 0..count {
                let mut digits = vec![0usize; horizon];
                let mut c = code;
                for d in digits.iter_mut().rev() {
                    *d = c % n;
                    c /= n;
                }
                weights.push(chain_path_weight(chain, next, &digits));
                paths.push(RegimePath(digits));
            }
            let total: f64 = crate::linalg::pairwise_sum(&weights);
            for w in &mut weights {
                *w /= total;
            }
            Ok(PathSet {
                paths,
                weights,
                sampled: false,
            })
        }
        Some((m, seed)) => {
            if m == 0 {
                return Err(Error::invalid("Monte Carlo path count must be positive"));
            }
            let streams = Substreams::new(seed);
            let paths: Vec<RegimePath> = (0..m as u64)
                .map(|k| {
                    let mut rng = streams.stream(k);
                    sample_chain(chain, next, horizon, &mut rng)
                })
                .collect();
            Ok(PathSet {
                paths,
                weights: vec![1.0 / m as f64; m],
                sampled: true,
            })
        }
    }
}

fn draw(dist: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, p) in dist.enumerate() {
        if p > 0.0 {
            last = j;
        }
        acc += p;
        if u < acc {
            return j;
        }
    }
    last
}

/// Samples `horizon` regimes with the first drawn from `first`.
pub fn sample_chain<R: Rng>(
    chain: &MarkovChain,
    first: &DVector<f64>,
    horizon: usize,
    rng: &mut R,
) -> RegimePath {
    let mut path = Vec::with_capacity(horizon);
    if horizon == 0 {
        return RegimePath(path);
    }
    let mut s = draw(first.iter().copied(), rng.random::<f64>());
    path.push(s);
    for _ in 1..horizon {
        s = draw(chain.transition.row(s).iter().copied(), rng.random::<f64>());
        path.push(s);
    }
    RegimePath(path)
}

/// Distinct regimes in order of first occurrence.
pub fn dedup_regimes(path: &RegimePath) -> Vec<usize> {
    let mut seen = Vec::new();
    for &s in path.as_slice() {
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen
}

/// Draws `s_1..s_T` from the chain.
pub fn simulate_regimes(chain: &MarkovChain, horizon: usize, seed: u64) -> RegimePath {
    let mut rng = Substreams::new(seed).stream(0);
    sample_chain(chain, chain.initial(), horizon, &mut rng)
}
