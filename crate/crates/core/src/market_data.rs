//! Observed market panels: CSV ingestion, validation and log transforms.
//!
//! A panel covers periods `t = 0..=T` for `n` companies. Values and spot
//! rates are required at every period; payments are required for `t >= 1`
//! and optional at `t = 0` (only the linearization schedule reads them).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const PANEL_COLUMNS: [&str; 6] = [
    "t",
    "company_id",
    "equity_value",
    "liability_value",
    "dividend_payment",
    "debt_payment",
];

/// Observed values, payments, spot rates and exogenous regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    /// Company identifiers in normalized (sorted) order.
    pub company_ids: Vec<String>,
    /// `V^e[t][i]`, `t = 0..=T`.
    pub equity: Vec<Vec<f64>>,
    /// `V^ℓ[t][i]`, `t = 0..=T`.
    pub liability: Vec<Vec<f64>>,
    /// `p^e[t][i]`; `None` is permitted only at `t = 0`.
    pub dividends: Vec<Option<Vec<f64>>>,
    /// `p^ℓ[t][i]`; `None` is permitted only at `t = 0`.
    pub debt_payments: Vec<Option<Vec<f64>>>,
    /// Simple spot rate `r_t` per period, `t = 0..=T`.
    pub spot_rates: Vec<f64>,
    /// `ψ_t` for `t = 1..=T`, stored at index `t - 1`.
    pub exog: Vec<Vec<f64>>,
}

/// Locations of the panel CSV files.
#[derive(Debug, Clone)]
pub struct PanelPaths {
    pub panel: PathBuf,
    pub rates: PathBuf,
    pub exog: Option<PathBuf>,
}

impl PanelPaths {
    /// `panel.csv`, `rates.csv` and (if present) `exog.csv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        let exog = dir.join("exog.csv");
        Self {
            panel: dir.join("panel.csv"),
            rates: dir.join("rates.csv"),
            exog: exog.exists().then_some(exog),
        }
    }
}

impl MarketPanel {
    pub fn horizon(&self) -> usize {
        self.equity.len().saturating_sub(1)
    }

    pub fn companies(&self) -> usize {
        self.company_ids.len()
    }

    pub fn exog_dim(&self) -> usize {
        self.exog.first().map_or(0, Vec::len)
    }

    /// Stacked `(V^e, V^ℓ)` at `t`.
    pub fn values(&self, t: usize) -> Vec<f64> {
        let mut v = self.equity[t].clone();
        v.extend_from_slice(&self.liability[t]);
        v
    }

    /// Stacked `(p^e, p^ℓ)` at `t`, if recorded.
    pub fn payments(&self, t: usize) -> Option<Vec<f64>> {
        match (&self.dividends[t], &self.debt_payments[t]) {
            (Some(d), Some(b)) => {
                let mut p = d.clone();
                p.extend_from_slice(b);
                Some(p)
            }
            _ => None,
        }
    }

    /// Checks shapes, positivity and rate bounds.
    pub fn validate(&self) -> Result<()> {
        let n = self.companies();
        if n == 0 {
            return Err(Error::invalid("panel has no companies"));
        }
        let len = self.equity.len();
        if len < 2 {
            return Err(Error::invalid(
                "panel needs at least periods t = 0 and t = 1",
            ));
        }
        let t_max = len - 1;
        if self.liability.len() != len
            || self.dividends.len() != len
            || self.debt_payments.len() != len
            || self.spot_rates.len() != len
        {
            return Err(Error::invalid("panel series lengths are inconsistent"));
        }
        if self.exog.len() != t_max {
            return Err(Error::invalid(format!(
                "expected exogenous rows for t = 1..={t_max}, found {}",
                self.exog.len()
            )));
        }
        let l = self.exog_dim();
        if l == 0 || self.exog.iter().any(|row| row.len() != l) {
            return Err(Error::invalid("exogenous rows must share a positive width"));
        }
        for t in 0..len {
            let check = |name: &str, row: &[f64]| -> Result<()> {
                if row.len() != n {
                    return Err(Error::invalid(format!("{name} at t={t} has wrong width")));
                }
                if let Some(i) = row.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(Error::invalid(format!(
                        "{name} at t={t} for company {} must be positive and finite",
                        self.company_ids[i]
                    )));
                }
                Ok(())
            };
            check("equity_value", &self.equity[t])?;
            check("liability_value", &self.liability[t])?;
            for (name, col) in [
                ("dividend_payment", &self.dividends[t]),
                ("debt_payment", &self.debt_payments[t]),
            ] {
                match col {
                    Some(row) => check(name, row)?,
                    None if t == 0 => {}
                    None => return Err(Error::invalid(format!("{name} missing at t={t}"))),
                }
            }
            let r = self.spot_rates[t];
            if !(r > -1.0) || !r.is_finite() {
                return Err(Error::invalid(format!("spot rate at t={t} must exceed -1")));
            }
        }
        if self.exog.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("exogenous regressors must be finite"));
        }
        Ok(())
    }
}

fn data_err(file: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Data {
        file: file.to_path_buf(),
        row,
        message: message.into(),
    }
}

struct Table {
    file: PathBuf,
    headers: Vec<String>,
    /// (file row number, cells)
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(file: &Path) -> Result<Self> {
        let text = fs::read_to_string(file).map_err(|source| Error::Io {
            file: file.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| data_err(file, 1, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let row = e.position().map_or(0, |p| p.line() as usize);
                data_err(file, row, e.to_string())
            })?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((row, rec.iter().map(str::to_owned).collect()));
        }
        Ok(Self {
            file: file.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(&self.file, 1, format!("missing column `{name}`")))
    }

    fn number(&self, row: usize, cells: &[String], col: usize) -> Result<f64> {
        let cell = &cells[col];
        cell.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| {
                data_err(
                    &self.file,
                    row,
                    format!("column `{}`: `{cell}` is not a number", self.headers[col]),
                )
            })
    }

    fn time(&self, row: usize, cells: &[String], col: usize) -> Result<usize> {
        cells[col].parse::<usize>().map_err(|_| {
            data_err(
                &self.file,
                row,
                format!("time index `{}` is not a non-negative integer", cells[col]),
            )
        })
    }
}

/// Reads and validates a panel from its CSV files.
pub fn load_panel(paths: &PanelPaths) -> Result<MarketPanel> {
    let table = Table::read(&paths.panel)?;
    let cols: Vec<usize> = PANEL_COLUMNS
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let (c_t, c_id, c_ve, c_vl, c_pe, c_pl) =
        (cols[0], cols[1], cols[2], cols[3], cols[4], cols[5]);

    struct Cell {
        row: usize,
        ve: f64,
        vl: f64,
        pe: Option<f64>,
        pl: Option<f64>,
    }
    let mut cells: BTreeMap<(usize, String), Cell> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for (row, rec) in &table.rows {
        let row = *row;
        let t = table.time(row, rec, c_t)?;
        let id = rec[c_id].clone();
        if id.is_empty() {
            return Err(data_err(&table.file, row, "empty company_id"));
        }
        let positive = |col: usize| -> Result<f64> {
            let x = table.number(row, rec, col)?;
            if x <= 0.0 {
                return Err(data_err(
                    &table.file,
                    row,
                    format!("column `{}` must be positive, got {x}", table.headers[col]),
                ));
            }
            Ok(x)
        };
        let optional = |col: usize| -> Result<Option<f64>> {
            if rec[col].is_empty() {
                if t == 0 {
                    return Ok(None);
                }
                return Err(data_err(
                    &table.file,
                    row,
                    format!("column `{}` is blank at t={t}", table.headers[col]),
                ));
            }
            positive(col).map(Some)
        };
        let cell = Cell {
            row,
            ve: positive(c_ve)?,
            vl: positive(c_vl)?,
            pe: optional(c_pe)?,
            pl: optional(c_pl)?,
        };
        if cells.insert((t, id.clone()), cell).is_some() {
            return Err(data_err(
                &table.file,
                row,
                format!("duplicate key (t={t}, company_id={id})"),
            ));
        }
        ids.insert(id);
    }
    if cells.is_empty() {
        return Err(data_err(&table.file, 2, "panel has no data rows"));
    }
    let company_ids: Vec<String> = ids.into_iter().collect();
    let t_max = cells.keys().map(|(t, _)| *t).max().unwrap_or(0);
    let n = company_ids.len();

    let mut equity = vec![vec![0.0; n]; t_max + 1];
    let mut liability = vec![vec![0.0; n]; t_max + 1];
    let mut dividends: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; n]); t_max + 1];
    let mut debt: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; n]); t_max + 1];
    let last_row = table.rows.last().map_or(2, |r| r.0);
    for t in 0..=t_max {
        let mut blanks = 0;
        for (i, id) in company_ids.iter().enumerate() {
            let cell = cells.get(&(t, id.clone())).ok_or_else(|| {
                data_err(
                    &table.file,
                    last_row,
                    format!("gap in time index: no row for t={t}, company_id={id}"),
                )
            })?;
            equity[t][i] = cell.ve;
            liability[t][i] = cell.vl;
            match (cell.pe, cell.pl) {
                (Some(pe), Some(pl)) => {
                    if let Some(d) = dividends[t].as_mut() {
                        d[i] = pe;
                    }
                    if let Some(b) = debt[t].as_mut() {
                        b[i] = pl;
                    }
                }
                (None, None) => blanks += 1,
                _ => {
                    return Err(data_err(
                        &table.file,
                        cell.row,
                        "dividend_payment and debt_payment must both be given or both blank",
                    ))
                }
            }
        }
        if blanks == n {
            dividends[t] = None;
            debt[t] = None;
        } else if blanks > 0 {
            return Err(data_err(
                &table.file,
                last_row,
                format!("payments at t={t} are blank for some companies only"),
            ));
        }
    }

    let spot_rates = load_rates(&paths.rates, t_max)?;
    let exog = match &paths.exog {
        Some(p) => load_exog(p, t_max)?,
        None => vec![vec![1.0]; t_max],
    };
    let panel = MarketPanel {
        company_ids,
        equity,
        liability,
        dividends,
        debt_payments: debt,
        spot_rates,
        exog,
    };
    panel.validate()?;
    Ok(panel)
}

fn load_rates(file: &Path, t_max: usize) -> Result<Vec<f64>> {
    let table = Table::read(file)?;
    let c_t = table.column("t")?;
    let c_r = table.column("spot_rate")?;
    let mut rates: BTreeMap<usize, f64> = BTreeMap::new();
    for (row, rec) in &table.rows {
        let t = table.time(*row, rec, c_t)?;
        let r = table.number(*row, rec, c_r)?;
        if r <= -1.0 {
            return Err(data_err(
                &table.file,
                *row,
                format!("spot_rate {r} must exceed -1"),
            ));
        }
        if rates.insert(t, r).is_some() {
            return Err(data_err(&table.file, *row, format!("duplicate key t={t}")));
        }
    }
    let last_row = table.rows.last().map_or(2, |r| r.0);
    (0..=t_max)
        .map(|t| {
            rates.get(&t).copied().ok_or_else(|| {
                data_err(
                    &table.file,
                    last_row,
                    format!("gap in time index: no rate for t={t}"),
                )
            })
        })
        .collect()
}

fn load_exog(file: &Path, t_max: usize) -> Result<Vec<Vec<f64>>> {
    let table = Table::read(file)?;
    let c_t = table.column("t")?;
    let mut psi_cols = Vec::new();
    for k in 1.. {
        match table.headers.iter().position(|h| *h == format!("psi_{k}")) {
            Some(c) => psi_cols.push(c),
            None => break,
        }
    }
    if psi_cols.is_empty() {
        return Err(data_err(&table.file, 1, "missing column `psi_1`"));
    }
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (row, rec) in &table.rows {
        let t = table.time(*row, rec, c_t)?;
        let psi = psi_cols
            .iter()
            .map(|&c| table.number(*row, rec, c))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(t, psi).is_some() {
            return Err(data_err(&table.file, *row, format!("duplicate key t={t}")));
        }
    }
    let last_row = table.rows.last().map_or(2, |r| r.0);
    (1..=t_max)
        .map(|t| {
            rows.remove(&t).ok_or_else(|| {
                data_err(
                    &table.file,
                    last_row,
                    format!("gap in time index: no exog row for t={t}"),
                )
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: String) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })
}

/// Writes `panel.csv`, `rates.csv` and `exog.csv` into `dir`.
///
/// Numbers use the shortest representation that parses back to the same
/// `f64`, so a written panel reloads bit-exactly.
pub fn write_panel(panel: &MarketPanel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        file: dir.to_path_buf(),
        source,
    })?;
    let mut out = PANEL_COLUMNS.join(",");
    out.push('\n');
    for t in 0..=panel.horizon() {
        for (i, id) in panel.company_ids.iter().enumerate() {
            let pay =
                |col: &Option<Vec<f64>>| col.as_ref().map_or(String::new(), |p| p[i].to_string());
            out.push_str(&format!(
                "{t},{id},{},{},{},{}\n",
                panel.equity[t][i],
                panel.liability[t][i],
                pay(&panel.dividends[t]),
                pay(&panel.debt_payments[t]),
            ));
        }
    }
    write_file(&dir.join("panel.csv"), out)?;

    let mut rates = String::from("t,spot_rate\n");
    for (t, r) in panel.spot_rates.iter().enumerate() {
        rates.push_str(&format!("{t},{r}\n"));
    }
    write_file(&dir.join("rates.csv"), rates)?;

    let mut exog = String::from("t");
    for k in 1..=panel.exog_dim() {
        exog.push_str(&format!(",psi_{k}"));
    }
    exog.push('\n');
    for (idx, row) in panel.exog.iter().enumerate() {
        exog.push_str(&(idx + 1).to_string());
        for x in row {
            exog.push_str(&format!(",{x}"));
        }
        exog.push('\n');
    }
    write_file(&dir.join("exog.csv"), exog)
}

/// Log-space view of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPanel {
    pub n: usize,
    /// `Ṽ_t = ln(V^e_t, V^ℓ_t)`, `t = 0..=T`.
    pub log_values: Vec<DVector<f64>>,
    /// `p̃_t = ln(p^e_t, p^ℓ_t)`, `t = 0..=T`; `None` where payments are absent.
    pub log_payments: Vec<Option<DVector<f64>>>,
    /// `r̃_t = ln(1 + r_t)`, `t = 0..=T`.
    pub log_rates: Vec<f64>,
    /// `ψ_t` at index `t - 1`.
    pub exog: Vec<DVector<f64>>,
    /// Realized `k̃_t` at index `t - 1`.
    pub log_returns: Vec<DVector<f64>>,
}

impl LogPanel {
    pub fn horizon(&self) -> usize {
        self.log_values.len() - 1
    }

    pub fn exog_dim(&self) -> usize {
        self.exog.first().map_or(0, |v| v.len())
    }

    /// `ψ_t` for `t >= 1`.
    pub fn psi(&self, t: usize) -> &DVector<f64> {
        &self.exog[t - 1]
    }

    /// Stacked state `x_t = (Ṽ_t', r̃_t)'`.
    pub fn state(&self, t: usize) -> DVector<f64> {
        let v = &self.log_values[t];
        let mut x = DVector::zeros(v.len() + 1);
        x.rows_mut(0, v.len()).copy_from(v);
        x[v.len()] = self.log_rates[t];
        x
    }
}

/// Component-wise natural logs of a validated panel, plus realized returns.
pub fn log_transform(panel: &MarketPanel) -> LogPanel {
    let t_max = panel.horizon();
    let log_values = (0..=t_max)
        .map(|t| {
            DVector::from_iterator(
                2 * panel.companies(),
                panel.values(t).into_iter().map(f64::ln),
            )
        })
        .collect();
    let log_payments = (0..=t_max)
        .map(|t| {
            panel
                .payments(t)
                .map(|p| DVector::from_iterator(p.len(), p.into_iter().map(f64::ln)))
        })
        .collect();
    let log_rates = panel.spot_rates.iter().map(|r| r.ln_1p()).collect();
    let exog = panel
        .exog
        .iter()
        .map(|r| DVector::from_column_slice(r))
        .collect();
    LogPanel {
        n: panel.companies(),
        log_values,
        log_payments,
        log_rates,
        exog,
        log_returns: realized_log_returns(panel),
    }
}

/// `k̃_t = ln((V_t + p_t) ⊘ V_{t-1})` for `t = 1..=T`, returned at index `t - 1`.
pub fn realized_log_returns(panel: &MarketPanel) -> Vec<DVector<f64>> {
    (1..=panel.horizon())
        .map(|t| {
            let v = panel.values(t);
            let prev = panel.values(t - 1);
            let p = panel
                .payments(t)
                .expect("validated panel has payments for t >= 1");
            DVector::from_fn(v.len(), |i, _| ((v[i] + p[i]) / prev[i]).ln())
        })
        .collect()
}
