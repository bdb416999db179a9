use mecwpt::charging::solve_p3;
use mecwpt::energy::{local_time, mec_time};
use mecwpt::harness::realization;
use mecwpt::linalg::{norm_sqr, CMatrix, C64};
use mecwpt::offload::solve_p2;
use mecwpt::orchestrator::offload_bounds;
use mecwpt::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// One cell whose users all see large-scale gain `beta`.
fn cell(k: usize, n: usize, beta: f64, params: &SystemParams, seed: u64) -> CellChannels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (beta / 2.0).sqrt();
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    CellChannels {
        h: (0..k).map(|_| (0..n).map(|_| C64::new(draw(), draw()) * scale).collect()).collect(),
        chan_gain: vec![beta; k],
        sigma1_sq: vec![params.noise_ul; k],
        sigma2_sq: vec![params.noise_dl; k],
    }
}

/// `E_total` with everything offloaded or everything local.
fn endpoint_energy(chan: &CellChannels, u: &[f64], e: &[f64], params: &SystemParams, offload: bool) -> f64 {
    let k = u.len();
    let alloc = if offload {
        let s = offload_bounds(u, params).unwrap().1;
        let p2 = solve_p2(&s, chan, params, u).unwrap();
        let t_c = params.latency - p2.t1 - p2.t3;
        let beams = solve_p3(&chan.h, e, t_c, params).unwrap();
        Allocation { s, t_u: p2.t_u, t_d: p2.t_d, t1: p2.t1, t2: p2.t2, t3: p2.t3, t_c, w_q: beams.w_q, alpha: beams.alpha }
    } else {
        let beams = solve_p3(&chan.h, e, params.latency, params).unwrap();
        let mut a = Allocation::local_only(k, params.latency, beams.w_q);
        a.alpha = beams.alpha;
        a
    };
    energy_breakdown(&alloc, chan, params, u).e_total
}

#[test]
fn user_energy_dominated_with_strong_channels_offloads_everything() {
    let params = SystemParams { weight: 1e-6, n_antennas: 32, n_users: 2, ..SystemParams::default() };
    let chan = cell(2, 32, 1e-2, &params, 1);
    let u = [2e5, 2.5e5];
    let e = [2e-3, 4e-3];
    let report = solve_cell(&chan, &u, &e, &params).unwrap();
    let full = endpoint_energy(&chan, &u, &e, &params, true);
    let local = endpoint_energy(&chan, &u, &e, &params, false);
    assert!(full < local);
    let hi = offload_bounds(&u, &params).unwrap().1;
    for i in 0..2 {
        assert!(report.allocation.s[i] >= hi[i] * (1.0 - 1e-6), "s = {:?} vs {:?}", report.allocation.s, hi);
    }
    assert!(report.energies.e_total <= full * (1.0 + 1e-9));
}

#[test]
fn cheap_local_compute_with_terrible_channels_stays_local() {
    // Fast, low-capacitance user CPUs make local computing cheap; a 1e-13
    // channel gain makes any transmission expensive.
    let params = SystemParams { f_user: 1e12, kappa_user: 1e-40, n_antennas: 32, n_users: 2, ..SystemParams::default() };
    let chan = cell(2, 32, 1e-13, &params, 2);
    let u = [2e5, 2.5e5];
    let e = [2e-3, 4e-3];
    let report = solve_cell(&chan, &u, &e, &params).unwrap();
    let full = endpoint_energy(&chan, &u, &e, &params, true);
    let local = endpoint_energy(&chan, &u, &e, &params, false);
    assert!(local < full);
    for i in 0..2 {
        assert!(report.allocation.s[i] <= 1e-3 * u[i], "s = {:?}", report.allocation.s);
    }
    assert!(report.energies.e_total <= local * (1.0 + 1e-9));
}

/// Exhaustive search over offloaded bits and uplink time for one user; the
/// downlink takes the rest of the window and charging uses MRT.
fn single_user_grid(chan: &CellChannels, u: f64, e: f64, params: &SystemParams) -> f64 {
    let (lo, hi) = offload_bounds(&[u], params).unwrap();
    let g = norm_sqr(&chan.h[0]);
    let dir: Vec<C64> = chan.h[0].iter().map(|x| x / g.sqrt()).collect();
    let mut best = f64::INFINITY;
    for a in 0..50 {
        let s = lo[0] + (hi[0] - lo[0]) * a as f64 / 49.0;
        let t2 = mec_time(s, params);
        let budget = params.latency - t2;
        let cap = params.latency - local_time(u - s, params);
        let t_max = cap.min(budget);
        for b in 1..=50 {
            let (t_u, t_d) = if s > 0.0 {
                let t = t_max * b as f64 / 51.0;
                (t, budget - t)
            } else {
                (0.0, 0.0)
            };
            let t_c = params.latency - t_u - t_d;
            let power = (e / (params.efficiency * t_c * g)).min(params.p_ap);
            let mut w_q = CMatrix::zeros(dir.len(), dir.len());
            w_q.add_outer(&dir, power);
            let alloc = Allocation { s: vec![s], t_u: vec![t_u], t_d: vec![t_d], t1: t_u, t2, t3: t_d, t_c, w_q, alpha: vec![1.0] };
            let total = energy_breakdown(&alloc, chan, params, &[u]).e_total;
            if total.is_finite() {
                best = best.min(total);
            }
        }
    }
    best
}

#[test]
fn single_user_beats_exhaustive_grid() {
    for (seed, kappa) in [(3, 0.5e-12), (4, 1e-27), (5, 1e-28)] {
        let params = SystemParams { n_users: 1, n_antennas: 32, kappa_user: kappa, kappa_mec: 10.0 * kappa, ..SystemParams::default() };
        let chan = cell(1, 32, 1e-6, &params, seed);
        let (u, e) = (2e5, 3e-3);
        let report = solve_cell(&chan, &[u], &[e], &params).unwrap();
        let grid = single_user_grid(&chan, u, e, &params);
        assert!(report.energies.e_total <= grid * (1.0 + 1e-3), "kappa {kappa}: {} vs grid {grid}", report.energies.e_total);
    }
}

#[test]
fn accepted_steps_never_increase_the_objective() {
    let params = SystemParams { n_antennas: 32, n_cells: 1, kappa_user: 1e-27, kappa_mec: 1e-26, ..SystemParams::default() };
    for seed in 0..10 {
        let (sc, ch) = realization(&params, 20.0, 70 + seed).unwrap();
        let report = solve_cell(&ch.cell(0), &sc.tasks(0), &sc.requests(0), &params).unwrap();
        assert!(!report.outer_trace.is_empty());
        for row in &report.outer_trace {
            assert!(row.accepted_objective <= row.objective + 1e-12 * row.objective.abs(), "seed {seed}: {row:?}");
        }
    }
}

#[test]
fn report_energies_match_breakdown() {
    let params = SystemParams { n_antennas: 32, n_cells: 1, ..SystemParams::default() };
    let (sc, ch) = realization(&params, 20.0, 99).unwrap();
    let chan = ch.cell(0);
    let u = sc.tasks(0);
    let report = solve_cell(&chan, &u, &sc.requests(0), &params).unwrap();
    let again = energy_breakdown(&report.allocation, &chan, &params, &u);
    assert!((again.e_total - report.energies.e_total).abs() <= 1e-10 * again.e_total);
    assert!(latency_check(&report.allocation, &params, &u).is_empty());
}

#[test]
fn tighter_deadline_never_saves_energy() {
    let base = SystemParams { n_antennas: 32, n_cells: 1, kappa_user: 1e-27, kappa_mec: 1e-26, ..SystemParams::default() };
    for seed in 0..5 {
        let (sc, ch) = realization(&base, 20.0, 120 + seed).unwrap();
        let chan = ch.cell(0);
        let (u, e) = (sc.tasks(0), sc.requests(0));
        let loose = solve_cell(&chan, &u, &e, &base).unwrap().energies.e_total;
        let tight_params = SystemParams { latency: 0.75 * base.latency, ..base.clone() };
        let tight = solve_cell(&chan, &u, &e, &tight_params).unwrap().energies.e_total;
        assert!(tight >= loose * (1.0 - 1e-3), "seed {seed}: {tight} < {loose}");
    }
}
