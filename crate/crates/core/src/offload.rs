//! Time allocation at fixed offloaded bits: closed-form per-user times in
//! `W₀` and projected dual subgradient ascent on the latency multipliers.
//!
//! The window multipliers `β` and `φ` are maximized exactly at every dual
//! iterate: for given `(λ₁, ξ)` the inner minimization over `T1` and `T3`
//! reduces to a monotone scalar equation, and `β_i`, `φ_i` are the marginal
//! prices of the users clipped at the window edge. The remaining multipliers
//! start from the KKT point of the problem reduced to `T1` and then follow the
//! `1/√k` subgradient steps until the duality gap closes.

use std::f64::consts::{E, LN_2};

use serde::{Deserialize, Serialize};

use crate::channel::CellChannels;
use crate::energy::{dl_noise_scale, exp2_m1, local_time, mec_phase, ul_noise_scale};
use crate::error::{Error, Result};
use crate::lambert::lambert_w0;
use crate::scenario::SystemParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OffloadDuals {
    /// Total-latency multiplier.
    pub lambda1: f64,
    /// `t_u,i ≤ T1` multipliers.
    pub beta: Vec<f64>,
    /// Per-user latency multipliers.
    pub xi_dual: Vec<f64>,
    /// `t_d,i ≤ T3` multipliers.
    pub phi: Vec<f64>,
}

impl OffloadDuals {
    pub fn zeros(k: usize) -> Self {
        Self { lambda1: 0.0, beta: vec![0.0; k], xi_dual: vec![0.0; k], phi: vec![0.0; k] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub dual_value: f64,
    pub grad_norm: f64,
    pub t1: f64,
    pub t3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Solution {
    pub t_u: Vec<f64>,
    pub t_d: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub duals: OffloadDuals,
    /// `(1−w)·E_offload + w·E_download` at the returned times.
    pub objective: f64,
    /// Best dual value; a lower bound on `objective`.
    pub best_dual: f64,
    pub dual_value_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
}

impl P2Solution {
    /// `(objective − best_dual)/objective`, zero when nothing is offloaded and
    /// infinite when no finite-energy schedule was found.
    pub fn relative_gap(&self) -> f64 {
        if !self.objective.is_finite() {
            f64::INFINITY
        } else if self.objective <= 0.0 {
            0.0
        } else {
            ((self.objective - self.best_dual) / self.objective).max(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Options {
    pub max_iters: usize,
    pub eps2: f64,
    /// Relative duality gap required in addition to the gradient-change test.
    pub gap_tol: f64,
}

impl P2Options {
    pub fn from_params(params: &SystemParams) -> Self {
        Self { max_iters: params.p2_max_iters, eps2: params.eps2, gap_tol: 1e-6 }
    }
}

/// Per-user energy `k·t·(2^{a/t} − 1)` of sending `a·B'` bits in `t`.
fn link_energy(a: f64, k: f64, t: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if t <= 0.0 {
        f64::INFINITY
    } else {
        k * t * exp2_m1(a / t)
    }
}

/// `d/dt` of [`link_energy`]: `k·(2^x(1 − x ln2) − 1)`, `x = a/t`. Always ≤ 0.
fn link_energy_dt(a: f64, k: f64, t: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let z = a / t * LN_2;
    // e^z(1 − z) − 1 = expm1(z)(1 − z) − z
    k * (z.exp_m1() * (1.0 - z) - z)
}

fn link_energy_dt2(a: f64, k: f64, t: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let z = a / t * LN_2;
    k * z * z * z.exp() / t
}

/// Solves `e^z(1 − z) = 1 − c` for `z ≥ 0`, i.e. `z = 1 + W₀((c − 1)/e)`.
fn stationary_exponent(c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Ok(0.0);
    }
    let mut z = if c < 1e-3 {
        // branch-point series of W₀ in p = sqrt(2c)
        let p = (2.0 * c).sqrt();
        p - p * p / 3.0 + 11.0 / 72.0 * p.powi(3) - 43.0 / 540.0 * p.powi(4) + 769.0 / 17280.0 * p.powi(5)
            - 221.0 / 8505.0 * p.powi(6)
    } else {
        1.0 + lambert_w0((c - 1.0) / E)?.value
    };
    if !z.is_finite() {
        return Ok(z);
    }
    for _ in 0..3 {
        let f = z.exp_m1() * (1.0 - z) - z + c;
        let df = -z * z.exp();
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let step = f / df;
        z -= step;
        if step.abs() <= 1e-16 * z.abs() {
            break;
        }
    }
    Ok(z.max(0.0))
}

/// Minimizer over `t ∈ (0, t_max]` of `weight·k·t(2^{a/t} − 1) + price·t`.
fn closed_form_time(a: f64, k: f64, weight: f64, price: f64, t_max: f64) -> Result<f64> {
    if a <= 0.0 {
        return Ok(0.0);
    }
    let z = stationary_exponent(price / (weight * k))?;
    if z <= 0.0 {
        return Ok(t_max);
    }
    Ok((a * LN_2 / z).min(t_max))
}

/// Per-user constants of one P2 instance.
struct Instance {
    active: Vec<bool>,
    a_ul: Vec<f64>,
    a_dl: Vec<f64>,
    k_ul: Vec<f64>,
    k_dl: Vec<f64>,
    cap: Vec<f64>,
    wu: f64,
    wd: f64,
    latency: f64,
    t2: f64,
}

impl Instance {
    fn new(s: &[f64], chan: &CellChannels, params: &SystemParams, u: &[f64]) -> Result<Self> {
        let k = s.len();
        if chan.len() != k || u.len() != k {
            return Err(Error::Dimension(format!("s has {k} users, channels {}, tasks {}", chan.len(), u.len())));
        }
        let td = params.latency;
        let nu_b = params.nu() * params.bandwidth;
        let w = params.weight_clamped();
        let mut inst = Instance {
            active: vec![false; k],
            a_ul: vec![0.0; k],
            a_dl: vec![0.0; k],
            k_ul: vec![0.0; k],
            k_dl: vec![0.0; k],
            cap: vec![td; k],
            wu: 1.0 - w,
            wd: w,
            latency: td,
            t2: mec_phase(s, params),
        };
        for i in 0..k {
            if !(s[i] >= 0.0 && s[i] <= u[i] * (1.0 + 1e-12)) {
                return Err(Error::Infeasible(format!("user {i}: s = {} outside [0, u = {}]", s[i], u[i])));
            }
            let local = local_time((u[i] - s[i]).max(0.0), params);
            if local > td * (1.0 + 1e-12) {
                return Err(Error::Infeasible(format!("user {i}: local computing takes {local:e} s > T_d")));
            }
            inst.cap[i] = td - local;
            if s[i] > 0.0 {
                if inst.cap[i] <= 0.0 {
                    return Err(Error::Infeasible(format!("user {i}: no time left for the uplink")));
                }
                inst.active[i] = true;
                inst.a_ul[i] = s[i] / nu_b;
                inst.a_dl[i] = params.result_ratio * s[i] / params.bandwidth;
                inst.k_ul[i] = ul_noise_scale(chan, params, i);
                inst.k_dl[i] = dl_noise_scale(chan, params, i);
            }
        }
        if inst.any_active() && inst.t2 >= td {
            return Err(Error::Infeasible(format!("MEC computing alone takes {:e} s >= T_d", inst.t2)));
        }
        Ok(inst)
    }

    fn any_active(&self) -> bool {
        self.active.iter().any(|&a| a)
    }

    fn budget(&self) -> f64 {
        self.latency - self.t2
    }

    fn objective(&self, t_u: &[f64], t_d: &[f64]) -> f64 {
        (0..t_u.len())
            .filter(|&i| self.active[i])
            .map(|i| self.wu * link_energy(self.a_ul[i], self.k_ul[i], t_u[i]) + self.wd * link_energy(self.a_dl[i], self.k_dl[i], t_d[i]))
            .sum()
    }

    /// Root of `λ₁ + Σ_{i: t*_i > T} (w·g'_i(T) + price_i) = 0` on `(0, max t*]`.
    fn window_edge(&self, lambda1: f64, t_star: &[f64], a: &[f64], kk: &[f64], weight: f64, price: &[f64]) -> f64 {
        let hi0 = (0..t_star.len()).filter(|&i| self.active[i]).map(|i| t_star[i]).fold(0.0, f64::max);
        if lambda1 <= 0.0 || hi0 <= 0.0 {
            return hi0;
        }
        let eval = |t: f64| -> (f64, f64) {
            let mut d = lambda1;
            let mut dd = 0.0;
            for i in 0..t_star.len() {
                if self.active[i] && t_star[i] > t {
                    d += weight * link_energy_dt(a[i], kk[i], t) + price[i];
                    dd += weight * link_energy_dt2(a[i], kk[i], t);
                }
            }
            (d, dd)
        };
        let (mut lo, mut hi) = (0.0f64, hi0);
        let mut t = hi0;
        for _ in 0..200 {
            let (d, dd) = eval(t);
            if d.is_nan() {
                hi = t;
            } else if d > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = if dd > 0.0 && d.is_finite() { t - d / dd } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
            if (next - t).abs() <= 1e-14 * t || hi - lo <= 1e-15 * hi {
                t = next;
                break;
            }
            t = next;
        }
        t.clamp(0.0, hi0)
    }
}

/// Multipliers `(λ₁, ξ)` from the KKT conditions of the reduced problem.
///
/// With `t_u,i = min(T1, cap_i)` and `t_d,i = T3 = budget − T1` optimal for a
/// given `T1`, the objective is convex in `T1` alone; its stationary point is
/// found by bisection on the derivative and the multipliers read off it.
fn kkt_start(inst: &Instance) -> (f64, Vec<f64>) {
    let k = inst.active.len();
    let budget = inst.budget() * (1.0 - 1e-12);
    let slope = |t1: f64| -> f64 {
        let mut d = 0.0;
        for i in (0..k).filter(|&i| inst.active[i]) {
            if inst.cap[i] > t1 {
                d += inst.wu * link_energy_dt(inst.a_ul[i], inst.k_ul[i], t1);
            }
            d -= inst.wd * link_energy_dt(inst.a_dl[i], inst.k_dl[i], budget - t1);
        }
        d
    };
    let (mut lo, mut hi) = (0.0f64, budget);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = slope(mid);
        if d.is_nan() || d > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t1 = 0.5 * (lo + hi);
    let t3 = budget - t1;
    let lambda1: f64 = (0..k).filter(|&i| inst.active[i]).map(|i| -inst.wd * link_energy_dt(inst.a_dl[i], inst.k_dl[i], t3)).sum();
    let tol = 1e-9 * t1;
    let mut xi = vec![0.0; k];
    let mut beta_sum = 0.0;
    let mut kink = Vec::new();
    for i in (0..k).filter(|&i| inst.active[i]) {
        if inst.cap[i] > t1 + tol {
            beta_sum += -inst.wu * link_energy_dt(inst.a_ul[i], inst.k_ul[i], t1);
        } else if inst.cap[i] < t1 - tol {
            xi[i] = -inst.wu * link_energy_dt(inst.a_ul[i], inst.k_ul[i], inst.cap[i]);
        } else {
            kink.push(i);
        }
    }
    // Users whose cap sits at the window edge split their marginal between
    // the window and their own latency constraint.
    let mut rem = (lambda1 - beta_sum).max(0.0);
    for &i in &kink {
        let m = -inst.wu * link_energy_dt(inst.a_ul[i], inst.k_ul[i], t1);
        let b = rem.min(m);
        rem -= b;
        xi[i] = m - b;
    }
    (lambda1, xi)
}

/// Minimizer of the partial Lagrangian at fixed `(λ₁, ξ)` with exact window prices.
struct InnerPoint {
    t_u: Vec<f64>,
    t_d: Vec<f64>,
    t1: f64,
    t3: f64,
    beta: Vec<f64>,
    phi: Vec<f64>,
    dual_value: f64,
    grad_lambda: f64,
    grad_xi: Vec<f64>,
}

fn inner_minimize(inst: &Instance, lambda1: f64, xi: &[f64]) -> Result<InnerPoint> {
    let k = xi.len();
    let td = inst.latency;
    let mut t_star_ul = vec![0.0; k];
    for i in 0..k {
        if inst.active[i] {
            t_star_ul[i] = closed_form_time(inst.a_ul[i], inst.k_ul[i], inst.wu, xi[i], td)?;
        }
    }
    let t1 = inst.window_edge(lambda1, &t_star_ul, &inst.a_ul, &inst.k_ul, inst.wu, xi);
    let t_star_dl: Vec<f64> = (0..k).map(|i| if inst.active[i] { td } else { 0.0 }).collect();
    let zeros = vec![0.0; k];
    let t3 = inst.window_edge(lambda1, &t_star_dl, &inst.a_dl, &inst.k_dl, inst.wd, &zeros);

    let mut t_u = vec![0.0; k];
    let mut t_d = vec![0.0; k];
    let mut beta = vec![0.0; k];
    let mut phi = vec![0.0; k];
    for i in 0..k {
        if !inst.active[i] {
            continue;
        }
        t_u[i] = t_star_ul[i].min(t1);
        t_d[i] = t3;
        if t_star_ul[i] > t1 {
            beta[i] = (-(inst.wu * link_energy_dt(inst.a_ul[i], inst.k_ul[i], t1)) - xi[i]).max(0.0);
        }
        phi[i] = (-(inst.wd * link_energy_dt(inst.a_dl[i], inst.k_dl[i], t3))).max(0.0);
    }
    let grad_lambda = t1 + inst.t2 + t3 - td;
    let grad_xi: Vec<f64> = (0..k).map(|i| if inst.active[i] { t_u[i] - inst.cap[i] } else { 0.0 }).collect();
    let dual_value = inst.objective(&t_u, &t_d) + lambda1 * grad_lambda + (0..k).map(|i| xi[i] * grad_xi[i]).sum::<f64>();
    Ok(InnerPoint { t_u, t_d, t1, t3, beta, phi, dual_value, grad_lambda, grad_xi })
}

/// Clips uplink times to their per-user caps, then rescales all times so that
/// `T1 + T3` fills the time left after MEC computing.
fn repair(inst: &Instance, t_u: &[f64], t_d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = t_u.len();
    let mut tu: Vec<f64> = (0..k).map(|i| if inst.active[i] { t_u[i].min(inst.cap[i]) } else { 0.0 }).collect();
    let mut tdv: Vec<f64> = (0..k).map(|i| if inst.active[i] { t_d[i] } else { 0.0 }).collect();
    let t1 = tu.iter().cloned().fold(0.0, f64::max);
    let t3 = tdv.iter().cloned().fold(0.0, f64::max);
    let total = t1 + t3;
    if total > 0.0 {
        let f = inst.budget() * (1.0 - 1e-12) / total;
        for i in 0..k {
            tu[i] = (tu[i] * f).min(inst.cap[i]);
            tdv[i] *= f;
        }
    }
    (tu, tdv)
}

/// Closed-form per-user times for given multipliers.
pub fn primal_times(duals: &OffloadDuals, s: &[f64], chan: &CellChannels, params: &SystemParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = params.weight_clamped();
    let td = params.latency;
    let nu_b = params.nu() * params.bandwidth;
    let mut t_u = vec![0.0; s.len()];
    let mut t_d = vec![0.0; s.len()];
    for i in 0..s.len() {
        if s[i] <= 0.0 {
            continue;
        }
        let price_u = duals.beta[i] + duals.xi_dual[i];
        t_u[i] = closed_form_time(s[i] / nu_b, ul_noise_scale(chan, params, i), 1.0 - w, price_u, td)?;
        let a_dl = params.result_ratio * s[i] / params.bandwidth;
        t_d[i] = closed_form_time(a_dl, dl_noise_scale(chan, params, i), w, duals.phi[i], td)?;
    }
    Ok((t_u, t_d))
}

/// `(1−w)·E_offload + w·E_download` for the given times.
pub fn p2_objective(s: &[f64], t_u: &[f64], t_d: &[f64], chan: &CellChannels, params: &SystemParams) -> f64 {
    let w = params.weight_clamped();
    let nu_b = params.nu() * params.bandwidth;
    (0..s.len())
        .filter(|&i| s[i] > 0.0)
        .map(|i| {
            (1.0 - w) * link_energy(s[i] / nu_b, ul_noise_scale(chan, params, i), t_u[i])
                + w * link_energy(params.result_ratio * s[i] / params.bandwidth, dl_noise_scale(chan, params, i), t_d[i])
        })
        .sum()
}

pub fn solve_p2(s: &[f64], chan: &CellChannels, params: &SystemParams, u: &[f64]) -> Result<P2Solution> {
    solve_p2_with(s, chan, params, u, &P2Options::from_params(params))
}

pub fn solve_p2_with(s: &[f64], chan: &CellChannels, params: &SystemParams, u: &[f64], opts: &P2Options) -> Result<P2Solution> {
    let inst = Instance::new(s, chan, params, u)?;
    let k = s.len();
    let td = inst.latency;
    if !inst.any_active() {
        return Ok(P2Solution {
            t_u: vec![0.0; k],
            t_d: vec![0.0; k],
            t1: 0.0,
            t2: 0.0,
            t3: 0.0,
            duals: OffloadDuals::zeros(k),
            objective: 0.0,
            best_dual: 0.0,
            dual_value_history: Vec::new(),
            trace: Vec::new(),
            converged: true,
            iterations: 0,
        });
    }

    // Fixed dual step scales from the curvature of the energy terms at an even
    // split of the budget: a unit normalized subgradient then moves the times
    // by roughly `T_d`.
    let half = 0.5 * inst.budget();
    let mut curv_ul = 0.0;
    let mut curv_dl = 0.0;
    let mut marg = 0.0;
    let mut xi_scale = vec![0.0; k];
    for i in (0..k).filter(|&i| inst.active[i]) {
        let tu = half.min(inst.cap[i]);
        let c = inst.wu * link_energy_dt2(inst.a_ul[i], inst.k_ul[i], tu);
        curv_ul += c;
        curv_dl += inst.wd * link_energy_dt2(inst.a_dl[i], inst.k_dl[i], half);
        marg += -inst.wd * link_energy_dt(inst.a_dl[i], inst.k_dl[i], half);
        xi_scale[i] = c * td;
    }
    let lambda_scale = finite_or(td / (1.0 / curv_ul + 1.0 / curv_dl), 1.0).max(f64::MIN_POSITIVE);
    for x in &mut xi_scale {
        *x = finite_or(*x, lambda_scale).max(lambda_scale * 1e-12);
    }
    let lambda_init = finite_or(marg, lambda_scale);

    let (mut lambda1, mut xi) = kkt_start(&inst);
    if !lambda1.is_finite() || xi.iter().any(|x| !x.is_finite()) {
        lambda1 = lambda_init;
        xi = vec![0.0; k];
    }

    let mut best_dual = f64::NEG_INFINITY;
    let mut best_duals = OffloadDuals::zeros(k);
    let mut best_primal = f64::INFINITY;
    let mut best_times: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iters {
        iterations = it;
        let pt = inner_minimize(&inst, lambda1, &xi)?;
        if pt.dual_value > best_dual {
            best_dual = pt.dual_value;
            best_duals = OffloadDuals { lambda1, beta: pt.beta.clone(), xi_dual: xi.clone(), phi: pt.phi.clone() };
        }
        let (tu, tdv) = repair(&inst, &pt.t_u, &pt.t_d);
        let primal = inst.objective(&tu, &tdv);
        if primal < best_primal || best_times.is_none() {
            best_primal = primal;
            best_times = Some((tu, tdv));
        }
        history.push(pt.dual_value);

        let mut grad = Vec::with_capacity(k + 1);
        grad.push(pt.grad_lambda / td);
        grad.extend(pt.grad_xi.iter().map(|g| g / td));
        let grad_change = prev_grad.as_ref().map_or(f64::INFINITY, |p| {
            p.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        });
        trace.push(TraceRow { iter: it, dual_value: pt.dual_value, grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(), t1: pt.t1, t3: pt.t3 });

        let gap = if best_primal.is_finite() && best_primal > 0.0 { (best_primal - best_dual) / best_primal } else { f64::INFINITY };
        if gap <= opts.gap_tol && grad_change <= opts.eps2 {
            converged = true;
            break;
        }
        if gap <= 0.01 * opts.gap_tol {
            converged = true;
            break;
        }
        prev_grad = Some(grad.clone());

        let step = 1.0 / (it as f64).sqrt();
        lambda1 = (lambda1 + step * lambda_scale * grad[0]).max(0.0);
        for i in 0..k {
            if inst.active[i] {
                xi[i] = (xi[i] + step * xi_scale[i] * grad[i + 1]).max(0.0);
            }
        }
    }

    let (t_u, t_d) = best_times.expect("at least one iteration");
    let t1 = t_u.iter().cloned().fold(0.0, f64::max);
    let t3 = t_d.iter().cloned().fold(0.0, f64::max);
    Ok(P2Solution {
        t_u,
        t_d,
        t1,
        t2: inst.t2,
        t3,
        duals: best_duals,
        objective: best_primal,
        best_dual,
        dual_value_history: history,
        trace,
        converged,
        iterations,
    })
}

fn finite_or(x: f64, fallback: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        fallback
    }
}
