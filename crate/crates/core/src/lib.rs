//! Joint offloading and energy-beamforming optimizer for multi-cell MEC
//! networks with wireless power transfer.

pub mod baselines;
pub mod channel;
pub mod charging;
pub mod energy;
pub mod error;
pub mod harness;
pub mod lambert;
pub mod linalg;
pub mod lp;
pub mod offload;
pub mod orchestrator;
pub mod scenario;

pub use baselines::{baseline_covariance, BaselineKind};
pub use channel::{draw_channels, CellChannels, ChannelRealization};
pub use energy::{energy_breakdown, latency_check, Allocation, EnergyBreakdown};
pub use error::{Error, Result};
pub use harness::{run_experiment, write_csv, ExperimentSpec, MetricsRow, Mode, Scheme, SweepVar};
pub use orchestrator::{outer_step, solve_cell, solve_pint, NetworkReport, SolveReport};
pub use scenario::{apply_config, generate_scenario, load_params, Scenario, SystemParams};
