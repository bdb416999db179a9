//! Fixtures shared by the criterion benches.

use mecwpt::harness::realization;
use mecwpt::orchestrator::offload_bounds;
use mecwpt::{CellChannels, SystemParams};

/// One cell of a seeded realization, with an interior offloading split.
pub struct CellFixture {
    pub params: SystemParams,
    pub chan: CellChannels,
    pub tasks: Vec<f64>,
    pub requests: Vec<f64>,
    pub offload: Vec<f64>,
}

impl CellFixture {
    pub fn new(k: usize, n: usize, seed: u64) -> Self {
        let params = SystemParams { n_users: k, n_antennas: n, n_cells: 1, ..SystemParams::default() };
        let (scenario, chan) = realization(&params, 20.0, seed).expect("valid fixture parameters");
        let tasks = scenario.tasks(0);
        let hi = offload_bounds(&tasks, &params).expect("feasible fixture").1;
        let local_half = 0.5 * params.latency * params.f_user / params.cycles_user;
        let offload = tasks.iter().zip(&hi).map(|(&u, &h)| (0.5 * u).max(u - local_half).min(h)).collect();
        Self { requests: scenario.requests(0), chan: chan.cell(0), params, tasks, offload }
    }

    /// Label used in benchmark ids.
    pub fn label(&self) -> String {
        format!("K{}_N{}", self.params.n_users, self.params.n_antennas)
    }
}

/// Sizes benchmarked by every solver group.
pub const SIZES: [(usize, usize); 3] = [(2, 16), (4, 32), (8, 64)];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_solvable() {
        for (k, n) in SIZES {
            let f = CellFixture::new(k, n, 1);
            assert_eq!(f.chan.h.len(), k);
            assert!(mecwpt::offload::solve_p2(&f.offload, &f.chan, &f.params, &f.tasks).is_ok());
        }
    }
}
