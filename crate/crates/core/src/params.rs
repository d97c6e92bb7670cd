//! Regime-switching model parameters and their JSON form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_cholesky;
use crate::regime::MarkovChain;

pub const PARAMS_VERSION: u32 = 1;

/// Coefficients of one regime: `C_j` (`ñ × l`, rows `C_{k,j}` over `c_{r,j}'`)
/// and the noise covariance `Σ_j` (`ñ × ñ`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams {
    pub coef: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Number of companies.
    pub n: usize,
    /// Number of exogenous regressors.
    pub l: usize,
    pub regimes: Vec<RegimeParams>,
    pub chain: MarkovChain,
}

impl ModelParams {
    /// Validates dimensions, symmetry and positive semi-definiteness.
    pub fn new(n: usize, l: usize, regimes: Vec<RegimeParams>, chain: MarkovChain) -> Result<Self> {
        let dim = 2 * n + 1;
        if n == 0 || l == 0 {
            return Err(Error::invalid("model needs n >= 1 and l >= 1"));
        }
        if regimes.len() != chain.regimes() {
            return Err(Error::invalid("regime count differs from chain size"));
        }
        for (j, r) in regimes.iter().enumerate() {
            if r.coef.shape() != (dim, l) {
                return Err(Error::invalid(format!(
                    "C of regime {} must be {dim} x {l}, got {:?}",
                    j + 1,
                    r.coef.shape()
                )));
            }
            if r.cov.shape() != (dim, dim) {
                return Err(Error::invalid(format!(
                    "Sigma of regime {} must be {dim} x {dim}",
                    j + 1
                )));
            }
            let scale = r.cov.abs().max().max(1.0);
            if (&r.cov - r.cov.transpose()).abs().max() > 1e-12 * scale {
                return Err(Error::invalid(format!(
                    "Sigma of regime {} is not symmetric",
                    j + 1
                )));
            }
            if r.coef.iter().chain(r.cov.iter()).any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "regime {} has non-finite parameters",
                    j + 1
                )));
            }
            psd_cholesky(&r.cov, 1e-12).map_err(|_| {
                Error::invalid(format!(
                    "Sigma of regime {} is not positive semi-definite",
                    j + 1
                ))
            })?;
        }
        Ok(Self {
            n,
            l,
            regimes,
            chain,
        })
    }

    /// `ñ = 2n + 1`.
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    /// `C_{k,j}`: the top `2n` rows of `C_j`.
    pub fn c_k(&self, j: usize) -> DMatrix<f64> {
        self.regimes[j].coef.rows(0, 2 * self.n).into_owned()
    }

    /// `c_{r,j}`: the last row of `C_j` as a column.
    pub fn c_r(&self, j: usize) -> DVector<f64> {
        self.regimes[j].coef.row(2 * self.n).transpose()
    }

    pub fn sigma(&self, j: usize) -> &DMatrix<f64> {
        &self.regimes[j].cov
    }

    pub fn sigma_uu(&self, j: usize) -> DMatrix<f64> {
        let m = 2 * self.n;
        self.regimes[j].cov.view((0, 0), (m, m)).into_owned()
    }

    /// `Σ_vu` as a column vector of length `2n`.
    pub fn sigma_vu(&self, j: usize) -> DVector<f64> {
        let m = 2 * self.n;
        self.regimes[j].cov.row(m).columns(0, m).transpose()
    }

    pub fn to_file(&self, loglik: Option<f64>, iterations: Option<usize>) -> ParamsFile {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let chain = self.chain.to_spec();
        ParamsFile {
            version: PARAMS_VERSION,
            regimes: self.n_regimes(),
            n: self.n,
            l: self.l,
            coef: self.regimes.iter().map(|r| mat(&r.coef)).collect(),
            sigma: self.regimes.iter().map(|r| mat(&r.cov)).collect(),
            p0: chain.p0,
            transition: chain.transition,
            loglik,
            iterations,
        }
    }
}

/// Serialized parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(rename = "N")]
    pub regimes: usize,
    pub n: usize,
    pub l: usize,
    /// One `ñ × l` matrix per regime, row-major.
    #[serde(rename = "C")]
    pub coef: Vec<Vec<Vec<f64>>>,
    /// One `ñ × ñ` matrix per regime, row-major.
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub p0: Vec<f64>,
    #[serde(rename = "P")]
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

fn default_version() -> u32 {
    PARAMS_VERSION
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid(format!(
            "{what} is not a rectangular matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

impl ParamsFile {
    pub fn into_params(&self) -> Result<ModelParams> {
        if self.version != PARAMS_VERSION {
            return Err(Error::invalid(format!(
                "unsupported params version {}",
                self.version
            )));
        }
        if self.coef.len() != self.regimes || self.sigma.len() != self.regimes {
            return Err(Error::invalid(
                "C and Sigma must list one matrix per regime",
            ));
        }
        let regimes = self
            .coef
            .iter()
            .zip(&self.sigma)
            .enumerate()
            .map(|(j, (c, s))| {
                Ok(RegimeParams {
                    coef: matrix(c, &format!("C[{}]", j + 1))?,
                    cov: matrix(s, &format!("Sigma[{}]", j + 1))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let chain = MarkovChain::from_spec(&crate::regime::ChainSpec {
            p0: self.p0.clone(),
            transition: self.transition.clone(),
        })?;
        ModelParams::new(self.n, self.l, regimes, chain)
    }
}
