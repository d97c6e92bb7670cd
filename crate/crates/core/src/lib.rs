//! Regime-switching structural default model for public companies.
//!
//! Equity and liability values follow log-linearized present-value
//! recursions whose required returns and log spot rate switch with a latent
//! Markov chain. The crate covers the full pipeline:
//!
//! - [`market_data`]: panel ingestion and log transforms
//! - [`linearization`]: `μ_t`, `g_t`, `h_t` schedules and the asset weights
//! - [`regime`]: chain utilities, path enumeration and sampling
//! - [`estimation`]: Hamilton filter, exact smoother and EM
//! - [`dynamics`]: P, Q and forward-measure moments along a regime path, bond prices
//! - [`valuation`]: calls, puts, risk-neutral equity/liabilities and default probabilities
//! - [`simulator`]: synthetic panels and Q-measure state paths

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod linearization;
pub mod market_data;
pub mod mvn;
pub mod normal;
pub mod oracle;
pub mod params;
pub mod regime;
pub mod rng;
pub mod simulator;
pub mod valuation;

pub use error::{Error, Result};
pub use params::{ModelParams, RegimeParams};
pub use regime::{MarkovChain, RegimePath};

/// Formats a number with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.11e}")
}

/// Rounds to 12 significant digits (for JSON output).
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    fmt_num(x).parse().unwrap_or(x)
}
