//! Outer projected diagonal-Newton descent over the offloaded bits `s`, with
//! the time allocation and the energy beams solved inside every evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{CellChannels, ChannelRealization};
use crate::charging::{solve_p3_with, solve_p4, BeamDirections, BeamSolution, ChargingDuals, P3Options};
use crate::energy::{
    dl_noise_scale, energy_breakdown, latency_check, latency_slacks, local_energy, mec_energy, uplink_power, downlink_fraction,
    ul_noise_scale, Allocation, EnergyBreakdown,
};
use crate::error::{Error, Result};
use crate::offload::{solve_p2_with, OffloadDuals, P2Options, P2Solution, TraceRow};
use crate::scenario::{Scenario, SystemParams};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceRow {
    pub iter: usize,
    /// `φ` at the start of the iteration, on refreshed beam directions.
    pub objective: f64,
    /// `φ` at the accepted point on the same directions; `objective` when no step was taken.
    pub accepted_objective: f64,
    pub step_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub allocation: Allocation,
    pub energies: EnergyBreakdown,
    pub beams: BeamSolution,
    /// Energy credited against each request.
    pub received: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tasks: Vec<f64>,
    pub requests: Vec<f64>,
    pub offload_duals: OffloadDuals,
    pub p2_gap: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub active_constraints: Vec<String>,
    pub wall_time: f64,
    pub outer_trace: Vec<OuterTraceRow>,
    pub p2_trace: Vec<TraceRow>,
}

impl SolveReport {
    /// Mean of `received_i / e_i` over users with a request, in percent.
    pub fn efficiency(&self) -> f64 {
        efficiency_percent(&self.received, &self.requests)
    }
}

pub fn efficiency_percent(received: &[f64], requests: &[f64]) -> f64 {
    let pairs: Vec<f64> = received.iter().zip(requests).filter(|(_, &e)| e > 0.0).map(|(r, e)| (r / e).min(1.0)).collect();
    if pairs.is_empty() {
        100.0
    } else {
        100.0 * pairs.iter().sum::<f64>() / pairs.len() as f64
    }
}

/// Per-cell reports for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkReport {
    pub cells: Vec<SolveReport>,
}

impl NetworkReport {
    pub fn e_total(&self) -> f64 {
        self.cells.iter().map(|c| c.energies.e_total).sum()
    }

    pub fn e_charge(&self) -> f64 {
        self.cells.iter().map(|c| c.energies.e_charge).sum()
    }

    pub fn received_sum(&self) -> f64 {
        self.cells.iter().flat_map(|c| c.received.iter()).sum()
    }

    pub fn efficiency(&self) -> f64 {
        let rec: Vec<f64> = self.cells.iter().flat_map(|c| c.received.iter().cloned()).collect();
        let req: Vec<f64> = self.cells.iter().flat_map(|c| c.requests.iter().cloned()).collect();
        efficiency_percent(&rec, &req)
    }
}

/// Diagonal Newton step `−g/max(H, floor)` projected onto `[lo, hi]`.
///
/// The floor keeps a step within one box width when the curvature estimate is
/// tiny, zero or negative.
pub fn outer_step(s: &[f64], grad: &[f64], hess: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|i| {
            if grad[i] == 0.0 || !grad[i].is_finite() {
                return 0.0;
            }
            let width = (hi[i] - lo[i]).max(f64::MIN_POSITIVE);
            let floor = grad[i].abs() / width;
            let h = if hess[i].is_finite() && hess[i] > floor { hess[i] } else { floor };
            let target = (s[i] - grad[i] / h).clamp(lo[i], hi[i]);
            target - s[i]
        })
        .collect()
}

/// Feasible box for `s`: enough bits offloaded that local computing fits in
/// `T_d`, few enough that MEC computing fits too.
pub fn offload_bounds(u: &[f64], params: &SystemParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let td = params.latency;
    let local_cap = td * params.f_user / params.cycles_user;
    let mec_cap = td * params.f_mec() / params.cycles_mec;
    let mut lo = Vec::with_capacity(u.len());
    let mut hi = Vec::with_capacity(u.len());
    for (i, &ui) in u.iter().enumerate() {
        let l = if ui <= local_cap { 0.0 } else { ui - local_cap * (1.0 - 1e-6) };
        let h = ui.min(mec_cap * (1.0 - 1e-6));
        if l > h {
            return Err(Error::Infeasible(format!(
                "user {i}: task of {ui:e} bits fits neither locally ({local_cap:e}) nor at the MEC ({mec_cap:e})"
            )));
        }
        lo.push(l);
        hi.push(h);
    }
    Ok((lo, hi))
}

struct Evaluation {
    phi: f64,
    p2: P2Solution,
    t_c: f64,
}

struct Cell<'a> {
    chan: &'a CellChannels,
    u: &'a [f64],
    e: &'a [f64],
    params: &'a SystemParams,
    dirs: Option<BeamDirections>,
    inner_iterations: usize,
}

impl Cell<'_> {
    fn p2(&mut self, s: &[f64]) -> Result<P2Solution> {
        let sol = solve_p2_with(s, self.chan, self.params, self.u, &P2Options::from_params(self.params))?;
        self.inner_iterations += sol.iterations;
        Ok(sol)
    }

    /// Weighted energy for a time allocation and total beam power.
    fn weighted(&self, s: &[f64], p2: &P2Solution, charge: f64) -> f64 {
        let p = self.params;
        let mut e_u = 0.0;
        let mut e_m = charge;
        for i in 0..s.len() {
            if s[i] > 0.0 {
                e_u += uplink_power(s[i], p2.t_u[i], ul_noise_scale(self.chan, p, i), p) * p2.t_u[i];
                e_m += p.p_ap * downlink_fraction(s[i], p2.t_d[i], dl_noise_scale(self.chan, p, i), p) * p2.t_d[i];
            }
            e_u += local_energy((self.u[i] - s[i]).max(0.0), p);
            e_m += mec_energy(s[i], p);
        }
        (1.0 - p.weight) * e_u + p.weight * e_m
    }

    /// `φ(s)`: time allocation solved exactly, beam powers re-solved on the
    /// current directions.
    fn evaluate(&mut self, s: &[f64]) -> Result<Evaluation> {
        let p2 = self.p2(s)?;
        let t_c = self.params.latency - p2.t1 - p2.t3;
        let charge = match (&self.dirs, t_c > 0.0) {
            (Some(d), true) => {
                let p4 = solve_p4(d, &self.chan.h, self.e, t_c, self.params)?;
                t_c * p4.lambda_q.iter().sum::<f64>()
            }
            _ => 0.0,
        };
        let phi = self.weighted(s, &p2, charge);
        Ok(Evaluation { phi, p2, t_c })
    }

    fn evaluate_or_inf(&mut self, s: &[f64]) -> f64 {
        match self.evaluate(s) {
            Ok(ev) if ev.phi.is_finite() => ev.phi,
            _ => f64::INFINITY,
        }
    }

    fn beams(&mut self, t_c: f64, init: Option<ChargingDuals>) -> Result<BeamSolution> {
        let n = self.chan.n_antennas();
        if t_c <= 0.0 {
            return Ok(BeamSolution::disabled(n, self.e));
        }
        let mut opts = P3Options::from_params(self.params);
        opts.init = init;
        let sol = solve_p3_with(&self.chan.h, self.e, t_c, self.params, &opts)?;
        self.inner_iterations += sol.iterations;
        Ok(sol)
    }
}

/// Solves every cell of the network independently.
pub fn solve_pint(scenario: &Scenario, chan: &ChannelRealization, params: &SystemParams) -> Result<NetworkReport> {
    let cells = (0..scenario.n_cells())
        .map(|l| solve_cell(&chan.cell(l), &scenario.tasks(l), &scenario.requests(l), params))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkReport { cells })
}

/// Joint offloading, time allocation and energy beamforming for one cell.
pub fn solve_cell(chan: &CellChannels, u: &[f64], e: &[f64], params: &SystemParams) -> Result<SolveReport> {
    params.validate()?;
    let start = Instant::now();
    let k = u.len();
    if chan.len() != k || e.len() != k {
        return Err(Error::Dimension(format!("{} channels, {} tasks, {} requests", chan.len(), k, e.len())));
    }
    let (lo, hi) = offload_bounds(u, params)?;
    let td = params.latency;
    let mut cell = Cell { chan, u, e, params, dirs: None, inner_iterations: 0 };

    // Start from half the task, moved inside the box far enough that local
    // computing leaves at least half the budget for the uplink.
    let local_half = 0.5 * td * params.f_user / params.cycles_user;
    let mut s: Vec<f64> = (0..k).map(|i| (0.5 * u[i]).max(u[i] - local_half).clamp(lo[i], hi[i])).collect();

    let mut ev = cell.evaluate(&s)?;
    let mut tries = 0;
    while !ev.phi.is_finite() && tries < 40 {
        // Pull towards the middle of the box until the rates are representable.
        for i in 0..k {
            s[i] = 0.5 * (s[i] + 0.5 * (lo[i] + hi[i]));
        }
        ev = cell.evaluate(&s)?;
        tries += 1;
    }
    if !ev.phi.is_finite() {
        return Err(Error::Infeasible("no starting point with finite energy".into()));
    }

    let mut outer_trace = Vec::new();
    let mut converged = false;
    let mut outer_iterations = 0;
    let mut charging_init: Option<ChargingDuals> = None;

    for it in 1..=params.outer_max_iters {
        outer_iterations = it;
        let beams = cell.beams(ev.t_c, charging_init.clone())?;
        if ev.t_c > 0.0 {
            charging_init = Some(beams.duals.clone());
            cell.dirs = Some(beams.directions.clone());
        }
        ev = cell.evaluate(&s)?;
        let phi = ev.phi;

        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k];
        for i in 0..k {
            let h = (1e-4 * u[i]).max(1.0);
            let mut probe = s.clone();
            let mut at = |x: f64, cell: &mut Cell| {
                probe[i] = x;
                cell.evaluate_or_inf(&probe)
            };
            let up_ok = s[i] + h <= hi[i];
            let down_ok = s[i] - h >= lo[i];
            let (g, hh) = if up_ok && down_ok {
                let fp = at(s[i] + h, &mut cell);
                let fm = at(s[i] - h, &mut cell);
                match (fp.is_finite(), fm.is_finite()) {
                    (true, true) => ((fp - fm) / (2.0 * h), (fp - 2.0 * phi + fm) / (h * h)),
                    (true, false) => ((fp - phi) / h, 0.0),
                    (false, true) => ((phi - fm) / h, 0.0),
                    _ => (0.0, 0.0),
                }
            } else if down_ok {
                let fm = at(s[i] - h, &mut cell);
                let fmm = if s[i] - 2.0 * h >= lo[i] { at(s[i] - 2.0 * h, &mut cell) } else { f64::INFINITY };
                if fm.is_finite() {
                    let hh = if fmm.is_finite() { (phi - 2.0 * fm + fmm) / (h * h) } else { 0.0 };
                    ((phi - fm) / h, hh)
                } else {
                    (0.0, 0.0)
                }
            } else if up_ok {
                let fp = at(s[i] + h, &mut cell);
                let fpp = if s[i] + 2.0 * h <= hi[i] { at(s[i] + 2.0 * h, &mut cell) } else { f64::INFINITY };
                if fp.is_finite() {
                    let hh = if fpp.is_finite() { (fpp - 2.0 * fp + phi) / (h * h) } else { 0.0 };
                    ((fp - phi) / h, hh)
                } else {
                    (0.0, 0.0)
                }
            } else {
                (0.0, 0.0)
            };
            grad[i] = g;
            hess[i] = hh;
        }

        let delta = outer_step(&s, &grad, &hess, &lo, &hi);
        let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let scale_s = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        if step_norm <= 1e-9 * scale_s {
            // Stationary, or pinned at the box with the gradient pointing out.
            outer_trace.push(OuterTraceRow { iter: it, objective: phi, accepted_objective: phi, step_norm, step_size: 0.0 });
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = (0..k).map(|i| (s[i] + t * delta[i]).clamp(lo[i], hi[i])).collect();
            let decrease: f64 = (0..k).map(|i| grad[i] * (trial[i] - s[i])).sum();
            if let Ok(tev) = cell.evaluate(&trial) {
                if tev.phi.is_finite() && tev.phi <= phi + ARMIJO_C * decrease {
                    accepted = Some((trial, tev));
                    break;
                }
            }
            t *= 0.5;
        }
        outer_trace.push(OuterTraceRow {
            iter: it,
            objective: phi,
            accepted_objective: accepted.as_ref().map_or(phi, |(_, tev)| tev.phi),
            step_norm,
            step_size: if accepted.is_some() { t } else { 0.0 },
        });
        let Some((trial, tev)) = accepted else {
            converged = true;
            break;
        };
        let rel_change = (phi - tev.phi).abs() / phi.abs().max(f64::MIN_POSITIVE);
        s = trial;
        ev = tev;
        if rel_change <= params.eps1 {
            converged = true;
            break;
        }
    }

    // Charging recomputed from scratch at the converged point.
    let p2 = ev.p2;
    let t_c = td - p2.t1 - p2.t3;
    let beams = cell.beams(t_c, None)?;
    let allocation = Allocation {
        s: s.clone(),
        t_u: p2.t_u.clone(),
        t_d: p2.t_d.clone(),
        t1: p2.t1,
        t2: p2.t2,
        t3: p2.t3,
        t_c,
        w_q: beams.w_q.clone(),
        alpha: beams.alpha.clone(),
    };
    let energies = energy_breakdown(&allocation, chan, params, u);
    let violations = latency_check(&allocation, params, u);
    if !violations.is_empty() {
        return Err(Error::Infeasible(format!("final allocation violates {}", violations[0].constraint)));
    }
    let active_constraints = latency_slacks(&allocation, params, u)
        .into_iter()
        .filter(|c| c.slack < 1e-6 * td && allocation.s.iter().any(|&x| x > 0.0))
        .map(|c| c.constraint.to_string())
        .collect();
    Ok(SolveReport {
        received: beams.received.clone(),
        alpha: beams.alpha.clone(),
        allocation,
        energies,
        beams,
        tasks: u.to_vec(),
        requests: e.to_vec(),
        offload_duals: p2.duals.clone(),
        p2_gap: p2.relative_gap(),
        outer_iterations,
        inner_iterations: cell.inner_iterations,
        converged,
        active_constraints,
        wall_time: start.elapsed().as_secs_f64(),
        outer_trace,
        p2_trace: p2.trace,
    })
}

/// Charging alone: nothing is offloaded and the whole budget is spent charging.
pub fn solve_cell_charging_only(chan: &CellChannels, e: &[f64], params: &SystemParams) -> Result<SolveReport> {
    params.validate()?;
    let start = Instant::now();
    let k = e.len();
    if chan.len() != k {
        return Err(Error::Dimension(format!("{} channels, {} requests", chan.len(), k)));
    }
    let td = params.latency;
    let beams = solve_p3_with(&chan.h, e, td, params, &P3Options::from_params(params))?;
    let mut allocation = Allocation::local_only(k, td, beams.w_q.clone());
    allocation.alpha = beams.alpha.clone();
    let u = vec![0.0; k];
    let energies = energy_breakdown(&allocation, chan, params, &u);
    Ok(SolveReport {
        received: beams.received.clone(),
        alpha: beams.alpha.clone(),
        allocation,
        energies,
        tasks: u,
        requests: e.to_vec(),
        offload_duals: OffloadDuals::zeros(k),
        p2_gap: 0.0,
        outer_iterations: 0,
        inner_iterations: beams.iterations,
        converged: beams.converged,
        active_constraints: Vec::new(),
        wall_time: start.elapsed().as_secs_f64(),
        outer_trace: Vec::new(),
        p2_trace: Vec::new(),
        beams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_step() {
        let d = outer_step(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], &[5.0, 5.0]);
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn boundary_projection() {
        let d = outer_step(&[0.0], &[3.0], &[1.0], &[0.0], &[10.0]);
        assert_eq!(d, vec![0.0]);
    }

    #[test]
    fn quadratic_in_one_step() {
        // φ = Σ a_i (s_i − c_i)²
        let a = [2.0, 0.5, 7.0];
        let c = [3.0, 8.0, 1.5];
        let s = [1.0, 9.5, 0.2];
        let grad: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (s[i] - c[i])).collect();
        let hess: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let d = outer_step(&s, &grad, &hess, &[0.0; 3], &[10.0; 3]);
        for i in 0..3 {
            assert!((s[i] + d[i] - c[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn bounds_reject_oversized_tasks() {
        let p = SystemParams::default();
        // local fits 36 kbit, MEC fits 816 kbit
        assert!(offload_bounds(&[2e6], &p).is_err());
        let (lo, hi) = offload_bounds(&[2e4, 1e5], &p).unwrap();
        assert_eq!(lo[0], 0.0);
        assert!(lo[1] > 0.0 && hi[1] == 1e5);
    }

    #[test]
    fn efficiency_caps_at_request() {
        assert_eq!(efficiency_percent(&[1.0, 0.5], &[1.0, 1.0]), 75.0);
        assert_eq!(efficiency_percent(&[0.0], &[0.0]), 100.0);
    }
}
