use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mecwpt::channel::{read_channel_csv, write_channel_csv};
use mecwpt::harness::{charging_modes, realization};
use mecwpt::{
    apply_config, baseline_covariance, run_experiment, write_csv, BaselineKind, ChannelRealization, ExperimentSpec, Mode,
    NetworkReport, Scheme, SweepVar, SystemParams,
};
use serde_json::{json, Map, Value};

/// Joint offloading and energy beamforming for multi-cell MEC with wireless charging.
#[derive(Parser)]
#[command(name = "mecwpt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one realization with the integrated scheme.
    Solve(SolveArgs),
    /// Solve one realization and replace the energy beams with a baseline.
    Baseline {
        #[arg(long)]
        scheme: BaselineKind,
        #[command(flatten)]
        run: SolveArgs,
    },
    /// Monte-Carlo experiment from a TOML spec.
    Mc {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Results CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep described by flags.
    Sweep {
        #[arg(long)]
        var: SweepVar,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        realizations: usize,
        /// Comma-separated schemes.
        #[arg(long, value_delimiter = ',', default_value = "integrated,isotropic,equal_k")]
        schemes: Vec<Scheme>,
        /// Run without tasks, spending the whole budget on charging.
        #[arg(long)]
        charging_only: bool,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, `KEY=VALUE`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Realization seed, or the seed base of a sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// Side of the square deployment area in m.
    #[arg(long)]
    area: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of the offloading dual iterations of every cell.
    #[arg(long)]
    dump_trace: Option<PathBuf>,
    /// Replace the small-scale channels with a channel CSV.
    #[arg(long)]
    channels: Option<PathBuf>,
    /// Write the channels used to a CSV.
    #[arg(long)]
    dump_channels: Option<PathBuf>,
}

impl Common {
    fn params(&self) -> Result<SystemParams> {
        let mut params = SystemParams::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            apply_config(&mut params, &text).with_context(|| format!("in {}", path.display()))?;
        }
        for item in &self.overrides {
            apply_config(&mut params, item).with_context(|| format!("in --set {item}"))?;
        }
        params.validate()?;
        Ok(params)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(args) => solve(&args, None),
        Command::Baseline { scheme, run } => solve(&run, Some(scheme)),
        Command::Mc { spec, common, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut spec = ExperimentSpec::from_toml(&text)?;
            if let Some(seed) = common.seed {
                spec.seed_base = seed;
            }
            if let Some(area) = common.area {
                spec.area = area;
            }
            experiment(&spec, &common.params()?, out.as_deref())
        }
        Command::Sweep { var, values, realizations, schemes, charging_only, common, out } => {
            let spec = ExperimentSpec {
                sweep_var: var,
                values,
                realizations,
                schemes,
                seed_base: common.seed.unwrap_or(0),
                mode: if charging_only { Mode::ChargingOnly } else { Mode::DataAndCharging },
                area: common.area.unwrap_or(20.0),
            };
            experiment(&spec, &common.params()?, out.as_deref())
        }
    }
}

fn experiment(spec: &ExperimentSpec, params: &SystemParams, out: Option<&Path>) -> Result<()> {
    let result = run_experiment(spec, params)?;
    let failed = result.outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} realizations failed", result.outcomes.len());
    }
    match out {
        Some(path) => write_csv(&result.rows, fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?,
        None => write_csv(&result.rows, io::stdout().lock())?,
    }
    Ok(())
}

fn load_channels(chan: &mut ChannelRealization, path: &Path) -> Result<()> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let h = read_channel_csv(BufReader::new(file)).with_context(|| format!("in {}", path.display()))?;
    if h.len() != chan.h.len() || h.first().map_or(0, Vec::len) != chan.n_antennas {
        bail!(
            "{}: {}x{} channels, expected {}x{} (users x antennas)",
            path.display(),
            h.len(),
            h.first().map_or(0, Vec::len),
            chan.h.len(),
            chan.n_antennas
        );
    }
    chan.h = h;
    Ok(())
}

fn solve(args: &SolveArgs, baseline: Option<BaselineKind>) -> Result<()> {
    let params = args.common.params()?;
    let seed = args.common.seed.unwrap_or(0);
    let area = args.common.area.unwrap_or(20.0);
    let (scenario, mut chan) = realization(&params, area, seed)?;
    if let Some(path) = &args.channels {
        load_channels(&mut chan, path)?;
    }
    if let Some(path) = &args.dump_channels {
        write_channel_csv(&chan.h, fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let report = charging_modes(Mode::DataAndCharging, &scenario, &chan, &params)?;
    if let Some(path) = &args.dump_trace {
        write_trace(&report, path)?;
    }
    let scheme = baseline.map_or("integrated".to_string(), |b| b.to_string());
    let mut obj = report_json(&report, &params, &scheme, seed, area);
    if let Some(kind) = baseline {
        apply_baseline(&mut obj, kind, &report, &chan, &params)?;
    }
    let text = serde_json::to_string_pretty(&Value::Object(obj))?;
    match &args.out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn write_trace(report: &NetworkReport, path: &Path) -> Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "cell,iter,dual_value,grad_norm,T1,T3")?;
    for (l, cell) in report.cells.iter().enumerate() {
        for r in &cell.p2_trace {
            writeln!(f, "{l},{},{:e},{:e},{:e},{:e}", r.iter, r.dual_value, r.grad_norm, r.t1, r.t3)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Flat report: scalars for the network, per-cell arrays indexed by cell and
/// per-user arrays ordered cell by cell.
fn report_json(report: &NetworkReport, params: &SystemParams, scheme: &str, seed: u64, area: f64) -> Map<String, Value> {
    let cells = &report.cells;
    let per_cell = |f: &dyn Fn(&mecwpt::SolveReport) -> Value| -> Value { Value::Array(cells.iter().map(f).collect()) };
    let per_user = |f: &dyn Fn(&mecwpt::SolveReport) -> Vec<f64>| -> Value { json!(cells.iter().flat_map(f).collect::<Vec<f64>>()) };
    let threshold = 1e-3 * params.p_ap;
    let mut m = Map::new();
    m.insert("scheme".into(), json!(scheme));
    m.insert("seed".into(), json!(seed));
    m.insert("area_m".into(), json!(area));
    m.insert("n_cells".into(), json!(cells.len()));
    m.insert("n_users".into(), json!(params.n_users));
    m.insert("n_antennas".into(), json!(params.n_antennas));
    m.insert("e_total_j".into(), json!(report.e_total()));
    m.insert("e_u_j".into(), json!(cells.iter().map(|c| c.energies.e_u).sum::<f64>()));
    m.insert("e_m_j".into(), json!(cells.iter().map(|c| c.energies.e_m).sum::<f64>()));
    m.insert("e_charge_j".into(), json!(report.e_charge()));
    m.insert("received_sum_j".into(), json!(report.received_sum()));
    m.insert("efficiency_pct".into(), json!(report.efficiency()));
    m.insert("converged".into(), json!(cells.iter().all(|c| c.converged)));
    m.insert("wall_time_s".into(), json!(cells.iter().map(|c| c.wall_time).sum::<f64>()));
    m.insert("cell_e_total_j".into(), per_cell(&|c| json!(c.energies.e_total)));
    m.insert("cell_e_charge_j".into(), per_cell(&|c| json!(c.energies.e_charge)));
    m.insert("cell_t1_s".into(), per_cell(&|c| json!(c.allocation.t1)));
    m.insert("cell_t2_s".into(), per_cell(&|c| json!(c.allocation.t2)));
    m.insert("cell_t3_s".into(), per_cell(&|c| json!(c.allocation.t3)));
    m.insert("cell_t_c_s".into(), per_cell(&|c| json!(c.allocation.t_c)));
    m.insert("cell_beam_power_w".into(), per_cell(&|c| json!(c.beams.total_power())));
    m.insert("cell_active_beams".into(), per_cell(&|c| json!(c.beams.active_beams(threshold))));
    m.insert("cell_p2_gap".into(), per_cell(&|c| json!(c.p2_gap)));
    m.insert("cell_outer_iterations".into(), per_cell(&|c| json!(c.outer_iterations)));
    m.insert("cell_inner_iterations".into(), per_cell(&|c| json!(c.inner_iterations)));
    m.insert("cell_active_constraints".into(), per_cell(&|c| json!(c.active_constraints)));
    m.insert("user_task_bits".into(), per_user(&|c| c.tasks.clone()));
    m.insert("user_request_j".into(), per_user(&|c| c.requests.clone()));
    m.insert("user_offload_bits".into(), per_user(&|c| c.allocation.s.clone()));
    m.insert("user_t_u_s".into(), per_user(&|c| c.allocation.t_u.clone()));
    m.insert("user_t_d_s".into(), per_user(&|c| c.allocation.t_d.clone()));
    m.insert("user_alpha".into(), per_user(&|c| c.alpha.clone()));
    m.insert("user_received_j".into(), per_user(&|c| c.received.clone()));
    m
}

/// Swaps the charging fields for a baseline at the integrated charging time and directions.
fn apply_baseline(
    m: &mut Map<String, Value>,
    kind: BaselineKind,
    report: &NetworkReport,
    chan: &ChannelRealization,
    params: &SystemParams,
) -> Result<()> {
    let threshold = 1e-3 * params.p_ap;
    let (mut e_total, mut e_charge) = (0.0, 0.0);
    let (mut received, mut requests, mut alpha) = (Vec::new(), Vec::new(), Vec::new());
    let (mut cell_charge, mut cell_total, mut cell_power, mut cell_beams) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (l, cell) in report.cells.iter().enumerate() {
        let t_c = cell.allocation.t_c;
        let k = cell.requests.len();
        let (charge, power, rec, a, beams) = if t_c > 0.0 {
            let b = baseline_covariance(kind, &chan.cell(l).h, &cell.requests, t_c, params, Some(&cell.beams.directions))?;
            (t_c * b.total_power(), b.total_power(), b.received.clone(), b.alpha.clone(), b.active_beams(threshold))
        } else {
            (0.0, 0.0, vec![0.0; k], vec![0.0; k], 0)
        };
        let total = cell.energies.e_total + params.weight * (charge - cell.energies.e_charge);
        e_total += total;
        e_charge += charge;
        cell_charge.push(charge);
        cell_total.push(total);
        cell_power.push(power);
        cell_beams.push(beams);
        received.extend(rec);
        alpha.extend(a);
        requests.extend(cell.requests.iter().cloned());
    }
    let e_m = report.cells.iter().map(|c| c.energies.e_m - c.energies.e_charge).sum::<f64>() + e_charge;
    m.insert("e_total_j".into(), json!(e_total));
    m.insert("e_m_j".into(), json!(e_m));
    m.insert("e_charge_j".into(), json!(e_charge));
    m.insert("received_sum_j".into(), json!(received.iter().sum::<f64>()));
    m.insert("efficiency_pct".into(), json!(mecwpt::orchestrator::efficiency_percent(&received, &requests)));
    m.insert("cell_e_total_j".into(), json!(cell_total));
    m.insert("cell_e_charge_j".into(), json!(cell_charge));
    m.insert("cell_beam_power_w".into(), json!(cell_power));
    m.insert("cell_active_beams".into(), json!(cell_beams));
    m.insert("user_alpha".into(), json!(alpha));
    m.insert("user_received_j".into(), json!(received));
    Ok(())
}
