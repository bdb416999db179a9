use mecwpt::energy::{local_time, mec_time};
use mecwpt::harness::realization;
use mecwpt::offload::{p2_objective, solve_p2};
use mecwpt::orchestrator::offload_bounds;
use mecwpt::*;

fn single_user(latency: f64, seed: u64) -> (SystemParams, CellChannels, f64, f64) {
    let params = SystemParams { n_users: 1, n_cells: 1, n_antennas: 32, latency, pilot_fraction: Some(0.99), ..SystemParams::default() };
    let (sc, ch) = realization(&params, 20.0, seed).unwrap();
    let u = sc.tasks(0)[0];
    let hi = offload_bounds(&[u], &params).unwrap().1;
    let local_half = 0.5 * latency * params.f_user / params.cycles_user;
    (params, ch.cell(0), u, (0.5 * u).max(u - local_half).min(hi[0]))
}

/// Minimum over a log-spaced grid of feasible `(t_u, t_d)`.
fn log_grid(s: f64, u: f64, chan: &CellChannels, params: &SystemParams) -> f64 {
    let cap = params.latency - local_time(u - s, params);
    let budget = params.latency - mec_time(s, params);
    let n = 2000;
    let axis = |hi: f64| -> Vec<f64> { (0..n).map(|j| hi * 10f64.powf(-6.0 * (1.0 - j as f64 / (n - 1) as f64))).collect() };
    let tus = axis(cap.min(budget));
    let tds = axis(budget);
    let mut best = f64::INFINITY;
    for &tu in &tus {
        for &td in tds.iter().rev() {
            if tu + td <= budget {
                best = best.min(p2_objective(&[s], &[tu], &[td], chan, params));
                break;
            }
        }
    }
    best
}

#[test]
fn single_user_matches_log_grid() {
    for (seed, latency) in [(1, 20e-3), (2, 50e-3), (3, 200e-3)] {
        let (params, chan, u, s) = single_user(latency, seed);
        let sol = solve_p2(&[s], &chan, &params, &[u]).unwrap();
        let grid = log_grid(s, u, &chan, &params);
        assert!(sol.objective <= grid * (1.0 + 1e-3), "T_d {latency}: {} vs grid {grid}", sol.objective);
        assert!(sol.relative_gap() < 1e-6, "T_d {latency}: gap {} obj {} dual {} it {}", sol.relative_gap(), sol.objective, sol.best_dual, sol.iterations);
        assert!(sol.converged);
    }
}

#[test]
fn generous_deadline_clamps_uplink_at_user_bound() {
    // Long deadline with most of the task computed locally: the per-user latency
    // bound, not the shared window, limits the uplink.
    let params = SystemParams { n_users: 1, n_cells: 1, n_antennas: 32, latency: 1.0, pilot_fraction: Some(0.99), ..SystemParams::default() };
    let ch = realization(&params, 20.0, 4).unwrap().1;
    let u = 3e6;
    let s = u - 0.9 * params.latency * params.f_user / params.cycles_user;
    let chan = ch.cell(0);
    let sol = solve_p2(&[s], &chan, &params, &[u]).unwrap();
    let cap = params.latency - local_time(u - s, &params);
    assert!((sol.t_u[0] - cap).abs() <= 1e-9 * params.latency, "t_u {} cap {cap}", sol.t_u[0]);
    assert!(sol.relative_gap() < 1e-6);
}

#[test]
fn shrinking_deadline_never_lowers_p2_energy() {
    let base = SystemParams { n_cells: 1, n_antennas: 32, pilot_fraction: Some(0.99), ..SystemParams::default() };
    for seed in 0..10 {
        let (sc, ch) = realization(&base, 20.0, 60 + seed).unwrap();
        let u = sc.tasks(0);
        let chan = ch.cell(0);
        let long = SystemParams { latency: 2.0 * base.latency, ..base.clone() };
        let hi = offload_bounds(&u, &base).unwrap().1;
        let local_half = 0.5 * base.latency * base.f_user / base.cycles_user;
        let s: Vec<f64> = (0..u.len()).map(|i| (0.5 * u[i]).max(u[i] - local_half).min(hi[i])).collect();
        let a = solve_p2(&s, &chan, &long, &u).unwrap();
        let b = solve_p2(&s, &chan, &base, &u).unwrap();
        assert!(b.objective >= a.objective * (1.0 - 1e-9), "seed {seed}: {} < {}", b.objective, a.objective);
    }
}
