use std::fs;
use std::path::{Path, PathBuf};

use merton_core::dynamics::DiscountConvention;
use merton_core::estimation::{
    build_y_series, em_fit, hamilton_filter, log_densities, EmConfig, EmInit, TransitionMStep,
};
use merton_core::linearization::{solve_mu_schedule, LinearizationSchedule, ScheduleInputs};
use merton_core::market_data::{load_panel, log_transform, write_panel, LogPanel, PanelPaths};
use merton_core::oracle::{run_checks, CheckConfig, Suite};
use merton_core::params::ParamsFile;
use merton_core::regime::PathStrategy;
use merton_core::simulator::{regimes_csv, simulate_market, PaymentRule, SimulationSpec};
use merton_core::valuation::{
    mixture_default_prob, mixture_valuation, DefaultCdf, ValuationRequest,
};
use merton_core::{fmt_num, ModelParams};
use nalgebra::DVector;

use crate::config::ConfigFile;
use crate::output::{json_document, write};
use crate::{
    CheckArgs, CliError, EstimateArgs, LinearizeArgs, PathMode, SimulateArgs, ValuationArgs,
};

pub struct Context {
    pub seed: u64,
    pub timestamps: bool,
    pub config: ConfigFile,
}

fn required<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Invalid(format!("missing {what} (flag or config file)")))
}

fn load_params(path: &Path) -> Result<ModelParams, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let file: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(file.into_params()?)
}

fn load_log_panel(dir: &Path) -> Result<LogPanel, CliError> {
    let panel = load_panel(&PanelPaths::in_dir(dir))?;
    Ok(log_transform(&panel))
}

fn check_dims(params: &ModelParams, lp: &LogPanel) -> Result<(), CliError> {
    if params.n != lp.n || params.l != lp.exog_dim() {
        return Err(CliError::Invalid(format!(
            "parameters have n={}, l={} but the panel has n={}, l={}",
            params.n,
            params.l,
            lp.n,
            lp.exog_dim()
        )));
    }
    Ok(())
}

fn schedule(
    lp: &LogPanel,
    params: &ModelParams,
    data_asset_means: bool,
) -> Result<LinearizationSchedule, CliError> {
    let mut inputs = ScheduleInputs::from_log_panel(lp)?;
    if data_asset_means {
        inputs = inputs.with_data_asset_means(lp);
    }
    Ok(solve_mu_schedule(&inputs, params)?)
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<(), CliError> {
    let sec = &ctx.config.simulate;
    let params = load_params(&required(
        a.params.clone().or(sec.params.clone()),
        "--params",
    )?)?;
    let n = params.n;
    let horizon = required(a.horizon.or(sec.horizon), "--horizon")?;
    if horizon == 0 {
        return Err(CliError::Invalid("--horizon must be at least 1".into()));
    }
    let exog = match &sec.exog {
        Some(rows) => rows.clone(),
        None if params.l == 1 => vec![vec![1.0]; horizon],
        None => {
            return Err(CliError::Invalid(format!(
                "l={} regressors need simulate.exog rows in the config file",
                params.l
            )))
        }
    };
    if exog.len() != horizon {
        return Err(CliError::Invalid(format!(
            "simulate.exog has {} rows, expected {horizon}",
            exog.len()
        )));
    }
    let initial_values = a
        .initial_values
        .clone()
        .or(sec.initial_values.clone())
        .unwrap_or_else(|| [vec![100.0; n], vec![80.0; n]].concat());
    let ratios = a
        .payout_ratios
        .clone()
        .or(sec.payout_ratios.clone())
        .unwrap_or_else(|| [vec![0.03; n], vec![0.05; n]].concat());
    let spec = SimulationSpec {
        params,
        initial_values,
        initial_rate: a.initial_rate.or(sec.initial_rate).unwrap_or(0.01),
        payments: PaymentRule::PayoutRatio { ratios },
        exog,
        seed: ctx.seed,
    };
    let (panel, regimes, _) = simulate_market(&spec)?;
    write_panel(&panel, &a.out)?;
    write(&a.out.join("regimes.csv"), &regimes_csv(&regimes))?;
    Ok(())
}

pub fn estimate(ctx: &Context, a: &EstimateArgs) -> Result<(), CliError> {
    let sec = &ctx.config.estimate;
    let lp = load_log_panel(&a.data)?;
    let defaults = EmConfig::default();
    let init = match a.init_params.clone().or(sec.init_params.clone()) {
        Some(p) => {
            let params = load_params(&p)?;
            check_dims(&params, &lp)?;
            EmInit::Params(params)
        }
        None => EmInit::KMeans,
    };
    let literal = a.literal_paper_mstep || sec.literal_paper_mstep.unwrap_or(false);
    let cfg = EmConfig {
        n_regimes: match &init {
            EmInit::Params(p) => p.n_regimes(),
            EmInit::KMeans => a.regimes.or(sec.regimes).unwrap_or(defaults.n_regimes),
        },
        max_iter: a.max_iter.or(sec.max_iter).unwrap_or(defaults.max_iter),
        loglik_tol: a.tol.or(sec.tol).unwrap_or(defaults.loglik_tol),
        covariance_floor: sec.covariance_floor.unwrap_or(defaults.covariance_floor),
        init,
        restarts: a.restarts.or(sec.restarts).unwrap_or(defaults.restarts),
        seed: ctx.seed,
        transition_mstep: if literal {
            TransitionMStep::Literal
        } else {
            TransitionMStep::Departures
        },
    };
    let fit = em_fit(&lp, &cfg)?;
    if !fit.converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            fit.iterations()
        );
    }
    let file = fit
        .params
        .to_file(Some(fit.loglik()), Some(fit.iterations()));
    write(&a.out.join("params.json"), &json_document(&file, false)?)?;
    write(&a.out.join("trace.csv"), &fit.trace_csv())?;
    let n_reg = fit.params.n_regimes();
    let mut smoothed = String::from("t");
    for j in 1..=n_reg {
        smoothed.push_str(&format!(",p_{j}"));
    }
    smoothed.push('\n');
    for (k, z) in fit.smoother.z_smooth.iter().enumerate() {
        smoothed.push_str(&(k + 1).to_string());
        for p in z.iter() {
            smoothed.push(',');
            smoothed.push_str(&fmt_num(*p));
        }
        smoothed.push('\n');
    }
    write(&a.out.join("smoothed.csv"), &smoothed)?;
    println!(
        "loglik {} after {} iterations",
        fmt_num(fit.loglik()),
        fit.iterations()
    );
    Ok(())
}

pub fn linearize(ctx: &Context, a: &LinearizeArgs) -> Result<(), CliError> {
    let sec = &ctx.config.valuation;
    let params = load_params(&required(
        a.params.clone().or(sec.params.clone()),
        "--params",
    )?)?;
    let lp = load_log_panel(&a.data)?;
    check_dims(&params, &lp)?;
    let sched = schedule(
        &lp,
        &params,
        a.data_asset_means || sec.data_asset_means.unwrap_or(false),
    )?;
    write(&a.out, &sched.to_csv())
}

struct Prepared {
    request: ValuationRequest,
    params: ModelParams,
    sched: LinearizationSchedule,
    z_tt: Option<DVector<f64>>,
    x_t: DVector<f64>,
    out: PathBuf,
}

fn prepare(ctx: &Context, a: &ValuationArgs) -> Result<Prepared, CliError> {
    let sec = &ctx.config.valuation;
    let params = load_params(&required(
        a.params.clone().or(sec.params.clone()),
        "--params",
    )?)?;
    let lp = load_log_panel(&a.data)?;
    check_dims(&params, &lp)?;
    let t = required(a.t.or(sec.t), "--t")?;
    let maturity = a.maturity.or(sec.maturity).unwrap_or(lp.horizon());
    if t >= maturity || maturity > lp.horizon() {
        return Err(CliError::Invalid(format!(
            "need t < maturity <= {} (got t={t}, maturity={maturity})",
            lp.horizon()
        )));
    }
    let strikes = required(a.strikes.clone().or(sec.strikes.clone()), "--strikes")?;
    let thresholds = a
        .thresholds
        .clone()
        .or(sec.thresholds.clone())
        .unwrap_or_else(|| strikes.clone());
    let mc_paths = a.mc_paths.or(sec.mc_paths).unwrap_or(100_000);
    let mode = match (a.paths, sec.paths.as_deref()) {
        (Some(m), _) => m,
        (None, None | Some("auto")) => PathMode::Auto,
        (None, Some("enumerate")) => PathMode::Enumerate,
        (None, Some("mc")) => PathMode::Mc,
        (None, Some(other)) => {
            return Err(CliError::Invalid(format!("unknown path mode '{other}'")))
        }
    };
    let strategy = match mode {
        PathMode::Auto => PathStrategy::Auto {
            mc_paths,
            seed: ctx.seed,
        },
        PathMode::Enumerate => PathStrategy::Enumerate,
        PathMode::Mc => PathStrategy::MonteCarlo {
            paths: mc_paths,
            seed: ctx.seed,
        },
    };
    let literal_discount = a.literal_discount || sec.literal_discount.unwrap_or(false);
    let literal_cdf = a.literal_paper_cdf || sec.literal_paper_cdf.unwrap_or(false);
    let mut qmc = sec.qmc.unwrap_or_default();
    if sec.qmc.is_none() {
        qmc.seed = ctx.seed;
    }
    let request = ValuationRequest {
        t,
        maturity,
        strikes,
        thresholds,
        strategy,
        discount: if literal_discount {
            DiscountConvention::Literal
        } else {
            DiscountConvention::KnownRate
        },
        default_cdf: if literal_cdf {
            DefaultCdf::LiteralPaper
        } else {
            DefaultCdf::Orthant
        },
        qmc,
        emit_paths: a.emit_paths || sec.emit_paths.unwrap_or(false),
    };
    let sched = schedule(
        &lp,
        &params,
        a.data_asset_means || sec.data_asset_means.unwrap_or(false),
    )?;
    request.validate(&params, &sched)?;
    let z_tt = if t == 0 {
        None
    } else {
        let obs = build_y_series(&lp)?;
        let log_eta = log_densities(&obs, &params)?;
        let filter = hamilton_filter(&log_eta, &params.chain, params.chain.initial())?;
        Some(filter.filtered(t).clone())
    };
    Ok(Prepared {
        request,
        params,
        sched,
        z_tt,
        x_t: lp.state(t),
        out: a.out.clone(),
    })
}

pub fn price(ctx: &Context, a: &ValuationArgs) -> Result<(), CliError> {
    let p = prepare(ctx, a)?;
    let report = mixture_valuation(&p.request, &p.params, &p.sched, p.z_tt.as_ref(), &p.x_t)?;
    write(
        &p.out.join("report.json"),
        &json_document(&report, ctx.timestamps)?,
    )?;
    let mut csv = String::from("company,call,put,equity_rn,liability_rn,default_prob_marginal\n");
    let ids = load_panel(&PanelPaths::in_dir(&a.data))?.company_ids;
    for (id, c) in ids.iter().zip(&report.companies) {
        csv.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            fmt_num(c.call),
            fmt_num(c.put),
            fmt_num(c.equity_rn),
            fmt_num(c.liability_rn),
            fmt_num(c.default_prob_marginal)
        ));
    }
    write(&p.out.join("summary.csv"), &csv)?;
    println!("bond_price {}", fmt_num(report.bond_price));
    println!("default_prob_joint {}", fmt_num(report.default_prob_joint));
    Ok(())
}

pub fn default_probability(ctx: &Context, a: &ValuationArgs) -> Result<(), CliError> {
    let p = prepare(ctx, a)?;
    let report = mixture_default_prob(&p.request, &p.params, &p.sched, p.z_tt.as_ref(), &p.x_t)?;
    write(
        &p.out.join("default.json"),
        &json_document(&report, ctx.timestamps)?,
    )?;
    println!("default_prob_joint {}", fmt_num(report.joint));
    Ok(())
}

pub fn check(ctx: &Context, a: &CheckArgs) -> Result<(), CliError> {
    let suite: Suite = a.suite.parse()?;
    let cfg = CheckConfig {
        seed: ctx.seed,
        mc_paths: a.mc_paths.unwrap_or(CheckConfig::default().mc_paths),
    };
    let checks = run_checks(suite, &cfg)?;
    println!(
        "{:<14} {:<46} {:>18} {:>18}  result",
        "suite", "check", "value", "tolerance"
    );
    for c in &checks {
        println!(
            "{:<14} {:<46} {:>18} {:>18}  {}",
            c.suite,
            c.name,
            fmt_num(c.value),
            fmt_num(c.tolerance),
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write(
            out,
            &json_document(&serde_json::json!({ "checks": checks }), ctx.timestamps)?,
        )?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
