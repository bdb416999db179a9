//! Monte-Carlo experiment driver: sweeps one parameter, runs the integrated
//! solver and the baselines on independent realizations and aggregates the
//! metrics into a long-format CSV table.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_covariance, matched_charge_energy, BaselineKind};
use crate::channel::{draw_channels, ChannelRealization};
use crate::energy::latency_check;
use crate::error::{Error, Result};
use crate::orchestrator::{efficiency_percent, solve_cell, solve_cell_charging_only, NetworkReport, SolveReport};
use crate::scenario::{generate_scenario, Scenario, SystemParams};

/// Offset separating the channel stream from the placement stream of a seed.
const CHANNEL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(alias = "k", alias = "n_users")]
    K,
    #[serde(alias = "n", alias = "n_antennas")]
    N,
    #[serde(rename = "area")]
    Area,
    /// Multiplier on the request range.
    #[serde(rename = "requests")]
    Requests,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::K => "K",
            Self::N => "N",
            Self::Area => "area",
            Self::Requests => "requests",
        })
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "n_users" => Ok(Self::K),
            "N" | "n" | "n_antennas" => Ok(Self::N),
            "area" => Ok(Self::Area),
            "requests" => Ok(Self::Requests),
            other => Err(Error::Validation { field: "sweep_var", msg: format!("unknown sweep variable '{other}'") }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Integrated,
    Isotropic,
    EqualK,
}

impl Scheme {
    fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Integrated => None,
            Self::Isotropic => Some(BaselineKind::Isotropic),
            Self::EqualK => Some(BaselineKind::EqualK),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.baseline() {
            None => f.write_str("integrated"),
            Some(b) => b.fmt(f),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrated" => Ok(Self::Integrated),
            other => other.parse::<BaselineKind>().map(|b| match b {
                BaselineKind::Isotropic => Self::Isotropic,
                BaselineKind::EqualK => Self::EqualK,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    DataAndCharging,
    /// No tasks; the whole budget is charging time.
    ChargingOnly,
}

fn default_area() -> f64 {
    20.0
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Integrated, Scheme::Isotropic, Scheme::EqualK]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sweep_var: SweepVar,
    pub values: Vec<f64>,
    pub realizations: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Side of the square area in m, unless swept.
    #[serde(default = "default_area")]
    pub area: f64,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, msg: &str| -> Result<()> { Err(Error::Validation { field, msg: msg.into() }) };
        if self.realizations == 0 {
            return bad("realizations", "must be at least 1");
        }
        if self.values.is_empty() {
            return bad("values", "must not be empty");
        }
        if self.schemes.is_empty() {
            return bad("schemes", "must not be empty");
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("values", "must be positive and finite");
        }
        if matches!(self.sweep_var, SweepVar::K | SweepVar::N) && self.values.iter().any(|v| v.fract() != 0.0) {
            return bad("values", "counts must be integers");
        }
        if !(self.area > 0.0) {
            return bad("area", "must be positive");
        }
        Ok(())
    }

    /// Parameters and area side at one sweep value.
    pub fn point(&self, base: &SystemParams, value: f64) -> Result<(SystemParams, f64)> {
        let mut p = base.clone();
        let mut area = self.area;
        match self.sweep_var {
            SweepVar::K => p.n_users = value as usize,
            SweepVar::N => p.n_antennas = value as usize,
            SweepVar::Area => area = value,
            SweepVar::Requests => {
                p.request_min *= value;
                p.request_max *= value;
            }
        }
        p.validate()?;
        Ok((p, area))
    }
}

/// Network-level outcome of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub e_total: f64,
    pub e_charge: f64,
    /// Charging energy needed to match the integrated scheme's delivered energy.
    pub e_charge_matched: f64,
    pub received_sum: f64,
    pub efficiency: f64,
    /// Active beams per cell.
    pub active_beams: Vec<usize>,
    pub outer_iterations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationOutcome {
    pub sweep_value: f64,
    pub index: usize,
    pub seed: u64,
    pub result: std::result::Result<Vec<SchemeOutcome>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub scheme: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub outcomes: Vec<RealizationOutcome>,
    pub rows: Vec<MetricsRow>,
}

/// Metric names in CSV order.
pub const METRICS: [&str; 8] = [
    "e_total",
    "e_charge",
    "e_charge_matched",
    "received_sum",
    "efficiency",
    "active_beams",
    "outer_iterations",
    "infeasible_fraction",
];

/// Integrated solve of every cell in the chosen mode.
pub fn charging_modes(mode: Mode, scenario: &Scenario, chan: &ChannelRealization, params: &SystemParams) -> Result<NetworkReport> {
    let cells = (0..scenario.n_cells())
        .map(|l| {
            let c = chan.cell(l);
            match mode {
                Mode::DataAndCharging => solve_cell(&c, &scenario.tasks(l), &scenario.requests(l), params),
                Mode::ChargingOnly => solve_cell_charging_only(&c, &scenario.requests(l), params),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkReport { cells })
}

/// Placement and channels for a realization seed.
pub fn realization(params: &SystemParams, area: f64, seed: u64) -> Result<(Scenario, ChannelRealization)> {
    let scenario = generate_scenario(params, area, seed)?;
    let chan = draw_channels(&scenario, params, seed.wrapping_add(CHANNEL_SEED_OFFSET))?;
    Ok((scenario, chan))
}

/// Checks the per-report invariants the sweep relies on.
fn check_report(report: &SolveReport, params: &SystemParams) -> Result<()> {
    let violations = latency_check(&report.allocation, params, &report.tasks);
    if let Some(v) = violations.first() {
        return Err(Error::Infeasible(format!("{} violated by {:e} s", v.constraint, -v.slack)));
    }
    let tr = report.beams.w_q.trace().re;
    if tr > params.p_ap * (1.0 + 1e-9) {
        return Err(Error::Infeasible(format!("beam power {tr} W above cap")));
    }
    if report.received.iter().zip(&report.requests).any(|(r, e)| *r > *e) {
        return Err(Error::Infeasible("received energy above request".into()));
    }
    Ok(())
}

/// Runs the selected schemes on one realization. Baselines reuse the
/// integrated solution's offloading, charging time and beam directions.
pub fn run_realization(params: &SystemParams, area: f64, mode: Mode, schemes: &[Scheme], seed: u64) -> Result<Vec<SchemeOutcome>> {
    let (mut scenario, chan) = realization(params, area, seed)?;
    if mode == Mode::ChargingOnly {
        scenario = scenario.without_tasks();
    }
    let report = charging_modes(mode, &scenario, &chan, params)?;
    for cell in &report.cells {
        check_report(cell, params)?;
    }
    let threshold = 1e-3 * params.p_ap;
    let w = params.weight;
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let outcome = match scheme.baseline() {
            None => SchemeOutcome {
                scheme,
                e_total: report.e_total(),
                e_charge: report.e_charge(),
                e_charge_matched: report.e_charge(),
                received_sum: report.received_sum(),
                efficiency: report.efficiency(),
                active_beams: report.cells.iter().map(|c| c.beams.active_beams(threshold)).collect(),
                outer_iterations: report.cells.iter().map(|c| c.outer_iterations as f64).sum::<f64>() / report.cells.len() as f64,
            },
            Some(kind) => {
                let mut e_total = 0.0;
                let mut e_charge = 0.0;
                let mut matched = 0.0;
                let mut received = Vec::new();
                let mut requests = Vec::new();
                let mut beams = Vec::new();
                for (l, cell) in report.cells.iter().enumerate() {
                    let h = &chan.cell(l).h;
                    let t_c = cell.allocation.t_c;
                    let dirs = Some(&cell.beams.directions);
                    let (charge, rec, active) = if t_c > 0.0 {
                        let b = baseline_covariance(kind, h, &cell.requests, t_c, params, dirs)?;
                        let m = matched_charge_energy(kind, h, &cell.requests, &cell.received, t_c, params, dirs)?;
                        matched += m;
                        (t_c * b.total_power(), b.received.clone(), b.active_beams(threshold))
                    } else {
                        (0.0, vec![0.0; cell.requests.len()], 0)
                    };
                    e_charge += charge;
                    e_total += cell.energies.e_total + w * (charge - cell.energies.e_charge);
                    received.extend(rec);
                    requests.extend(cell.requests.iter().cloned());
                    beams.push(active);
                }
                SchemeOutcome {
                    scheme,
                    e_total,
                    e_charge,
                    e_charge_matched: matched,
                    received_sum: received.iter().sum(),
                    efficiency: efficiency_percent(&received, &requests),
                    active_beams: beams,
                    outer_iterations: 0.0,
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std)
}

fn metric_value(o: &SchemeOutcome, metric: &str) -> f64 {
    match metric {
        "e_total" => o.e_total,
        "e_charge" => o.e_charge,
        "e_charge_matched" => o.e_charge_matched,
        "received_sum" => o.received_sum,
        "efficiency" => o.efficiency,
        "active_beams" => o.active_beams.iter().sum::<usize>() as f64 / o.active_beams.len().max(1) as f64,
        "outer_iterations" => o.outer_iterations,
        _ => f64::NAN,
    }
}

/// Aggregates outcomes into one row per (value, scheme, metric).
pub fn aggregate(spec: &ExperimentSpec, outcomes: &[RealizationOutcome]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for &value in &spec.values {
        let at: Vec<&RealizationOutcome> = outcomes.iter().filter(|o| o.sweep_value == value).collect();
        let total = at.len();
        let ok: Vec<&Vec<SchemeOutcome>> = at.iter().filter_map(|o| o.result.as_ref().ok()).collect();
        for &scheme in &spec.schemes {
            let per: Vec<&SchemeOutcome> = ok.iter().filter_map(|v| v.iter().find(|s| s.scheme == scheme)).collect();
            for metric in METRICS {
                let (mean, std, n) = if metric == "infeasible_fraction" {
                    let flags: Vec<f64> = at.iter().map(|o| if o.result.is_err() { 1.0 } else { 0.0 }).collect();
                    let (m, s) = mean_std(&flags);
                    (m, s, total)
                } else {
                    let xs: Vec<f64> = per.iter().map(|o| metric_value(o, metric)).collect();
                    let (m, s) = mean_std(&xs);
                    (m, s, xs.len())
                };
                rows.push(MetricsRow {
                    sweep_var: spec.sweep_var.to_string(),
                    sweep_value: value,
                    scheme: scheme.to_string(),
                    metric: metric.to_string(),
                    mean,
                    std,
                    n,
                });
            }
        }
    }
    rows
}

/// Runs every (value, realization) pair in parallel; seeds are
/// `seed_base + realization index`, shared across sweep values.
pub fn run_experiment(spec: &ExperimentSpec, params: &SystemParams) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &value in &spec.values {
        let (p, area) = spec.point(params, value)?;
        for index in 0..spec.realizations {
            jobs.push((value, index, p.clone(), area));
        }
    }
    let outcomes: Vec<RealizationOutcome> = jobs
        .into_par_iter()
        .map(|(value, index, p, area)| {
            let seed = spec.seed_base.wrapping_add(index as u64);
            let result = run_realization(&p, area, spec.mode, &spec.schemes, seed).map_err(|e| e.to_string());
            RealizationOutcome { sweep_value: value, index, seed, result }
        })
        .collect();
    let rows = aggregate(spec, &outcomes);
    Ok(ExperimentResult { outcomes, rows })
}

/// Writes `sweep_var,sweep_value,scheme,metric,mean,std,n`.
pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            sweep_var: SweepVar::K,
            values: vec![2.0],
            realizations: 1,
            schemes: vec![Scheme::Integrated],
            seed_base: 7,
            mode: Mode::DataAndCharging,
            area: 20.0,
        }
    }

    fn desk() -> SystemParams {
        SystemParams { n_antennas: 8, n_cells: 1, ..SystemParams::default() }
    }

    #[test]
    fn spec_from_toml() {
        let spec = ExperimentSpec::from_toml(
            "sweep_var = \"K\"\nvalues = [2, 3]\nrealizations = 5\nschemes = [\"integrated\", \"equal_k\"]\nseed_base = 3\n",
        )
        .unwrap();
        assert_eq!(spec.sweep_var, SweepVar::K);
        assert_eq!(spec.schemes, vec![Scheme::Integrated, Scheme::EqualK]);
        assert_eq!(spec.mode, Mode::DataAndCharging);
        assert_eq!(spec.area, 20.0);
    }

    #[test]
    fn spec_rejects_empty() {
        let mut spec = tiny_spec();
        spec.realizations = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.values.clear();
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec();
        spec.values = vec![2.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_point_single_row_per_metric() {
        let res = run_experiment(&tiny_spec(), &desk()).unwrap();
        assert_eq!(res.rows.len(), METRICS.len());
        assert!(res.outcomes[0].result.is_ok(), "{:?}", res.outcomes[0].result);
        let eff = res.rows.iter().find(|r| r.metric == "efficiency").unwrap();
        assert!((0.0..=100.0).contains(&eff.mean));
    }

    #[test]
    fn csv_is_reproducible() {
        let a = run_experiment(&tiny_spec(), &desk()).unwrap();
        let b = run_experiment(&tiny_spec(), &desk()).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_csv(&a.rows, &mut x).unwrap();
        write_csv(&b.rows, &mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("sweep_var,sweep_value,scheme,metric,mean,std,n\n"));
    }

    #[test]
    fn charging_only_uses_whole_budget() {
        let p = SystemParams { n_users: 1, ..desk() };
        let (sc, chan) = realization(&p, 20.0, 1).unwrap();
        let rep = charging_modes(Mode::ChargingOnly, &sc.without_tasks(), &chan, &p).unwrap();
        assert_eq!(rep.cells[0].allocation.t_c, p.latency);
        let both = charging_modes(Mode::DataAndCharging, &sc, &chan, &p).unwrap();
        assert!(both.cells[0].allocation.t_c <= p.latency);
        assert!(rep.received_sum() >= both.received_sum() * (1.0 - 1e-9));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::Integrated, Scheme::Isotropic, Scheme::EqualK] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("area".parse::<SweepVar>().unwrap(), SweepVar::Area);
    }
}
