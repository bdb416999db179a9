//! Rates, implied transmit powers, latencies and energy accounting for one cell.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::CellChannels;
use crate::linalg::CMatrix;
use crate::scenario::SystemParams;

/// Decision variables for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Offloaded bits per user.
    pub s: Vec<f64>,
    pub t_u: Vec<f64>,
    pub t_d: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_c: f64,
    /// Energy-beam covariance.
    pub w_q: CMatrix,
    pub alpha: Vec<f64>,
}

impl Allocation {
    /// All-local allocation with the whole budget spent charging under `w_q`.
    pub fn local_only(k: usize, latency: f64, w_q: CMatrix) -> Self {
        Self {
            s: vec![0.0; k],
            t_u: vec![0.0; k],
            t_d: vec![0.0; k],
            t1: 0.0,
            t2: 0.0,
            t3: 0.0,
            t_c: latency,
            w_q,
            alpha: vec![0.0; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_offload: f64,
    pub e_local: f64,
    pub e_mec_compute: f64,
    pub e_download: f64,
    pub e_charge: f64,
    pub e_u: f64,
    pub e_m: f64,
    pub e_total: f64,
    /// `ξ·T_c·h_i*W_q h_i` per user.
    pub received: Vec<f64>,
}

/// `Γ₁σ₁²/(Nγ)`: transmit power needed per unit of `2^r − 1` on the uplink.
pub fn ul_noise_scale(chan: &CellChannels, params: &SystemParams, i: usize) -> f64 {
    params.gap_ul * chan.sigma1_sq[i] / (params.n_antennas as f64 * chan.chan_gain[i])
}

/// `Γ₂σ₂²/(Nγ)`: AP power needed per unit of `2^r − 1` on the downlink.
pub fn dl_noise_scale(chan: &CellChannels, params: &SystemParams, i: usize) -> f64 {
    params.gap_dl * chan.sigma2_sq[i] / (params.n_antennas as f64 * chan.chan_gain[i])
}

/// Uplink spectral efficiency in bit/s/Hz at transmit power `p`.
pub fn uplink_rate(p: f64, chan: &CellChannels, params: &SystemParams, i: usize) -> f64 {
    params.nu() * (p / ul_noise_scale(chan, params, i)).ln_1p() / std::f64::consts::LN_2
}

/// Downlink spectral efficiency in bit/s/Hz at power fraction `eta`.
pub fn downlink_rate(eta: f64, chan: &CellChannels, params: &SystemParams, i: usize) -> f64 {
    (params.p_ap * eta / dl_noise_scale(chan, params, i)).ln_1p() / std::f64::consts::LN_2
}

/// `2^x − 1` without cancellation for small `x`.
pub fn exp2_m1(x: f64) -> f64 {
    (x * std::f64::consts::LN_2).exp_m1()
}

/// Uplink power that carries `s` bits in `t` seconds.
pub fn uplink_power(s: f64, t: f64, noise_scale: f64, params: &SystemParams) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    exp2_m1(s / (params.nu() * t * params.bandwidth)) * noise_scale
}

/// Downlink power fraction that returns `μ·s` bits in `t` seconds.
pub fn downlink_fraction(s: f64, t: f64, noise_scale: f64, params: &SystemParams) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    exp2_m1(params.result_ratio * s / (t * params.bandwidth)) * noise_scale / params.p_ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedPowers {
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
    /// Users whose implied uplink power exceeds `p_max`.
    pub over_p_max: Vec<usize>,
    /// `Σ η > 1`.
    pub eta_overloaded: bool,
}

impl ImpliedPowers {
    pub fn is_within_limits(&self) -> bool {
        self.over_p_max.is_empty() && !self.eta_overloaded
    }
}

pub fn implied_powers(alloc: &Allocation, chan: &CellChannels, params: &SystemParams) -> ImpliedPowers {
    let k = alloc.s.len();
    let mut p = Vec::with_capacity(k);
    let mut eta = Vec::with_capacity(k);
    for i in 0..k {
        p.push(uplink_power(alloc.s[i], alloc.t_u[i], ul_noise_scale(chan, params, i), params));
        eta.push(downlink_fraction(alloc.s[i], alloc.t_d[i], dl_noise_scale(chan, params, i), params));
    }
    let over_p_max = (0..k).filter(|&i| p[i] > params.p_user_max).collect();
    let eta_overloaded = eta.iter().sum::<f64>() > 1.0;
    ImpliedPowers { p, eta, over_p_max, eta_overloaded }
}

/// Local computing energy for `bits` processed on the user CPU.
pub fn local_energy(bits: f64, params: &SystemParams) -> f64 {
    params.kappa_user * params.cycles_user * bits * params.f_user * params.f_user
}

/// MEC computing energy for `bits` offloaded.
pub fn mec_energy(bits: f64, params: &SystemParams) -> f64 {
    let f = params.f_mec();
    params.kappa_mec * params.cycles_mec * f * f * bits
}

pub fn local_time(bits: f64, params: &SystemParams) -> f64 {
    params.cycles_user * bits / params.f_user
}

pub fn mec_time(bits: f64, params: &SystemParams) -> f64 {
    params.cycles_mec * bits / params.f_mec()
}

/// `T₂ = max_i d_m s_i / f_m`.
pub fn mec_phase(s: &[f64], params: &SystemParams) -> f64 {
    s.iter().map(|&si| mec_time(si, params)).fold(0.0, f64::max)
}

/// Energy accounting of an allocation. `u` are the task sizes in bits.
pub fn energy_breakdown(alloc: &Allocation, chan: &CellChannels, params: &SystemParams, u: &[f64]) -> EnergyBreakdown {
    let powers = implied_powers(alloc, chan, params);
    let k = alloc.s.len();
    let mut e_offload = 0.0;
    let mut e_download = 0.0;
    let mut e_local = 0.0;
    let mut e_mec_compute = 0.0;
    for i in 0..k {
        if alloc.s[i] > 0.0 {
            e_offload += powers.p[i] * alloc.t_u[i];
            e_download += params.p_ap * powers.eta[i] * alloc.t_d[i];
        }
        e_local += local_energy((u[i] - alloc.s[i]).max(0.0), params);
        e_mec_compute += mec_energy(alloc.s[i], params);
    }
    let charge_time = params.latency - alloc.t1 - alloc.t3;
    let e_charge = charge_time * alloc.w_q.trace().re;
    let received =
        chan.h.iter().map(|h| params.efficiency * alloc.t_c * alloc.w_q.quad_form(h)).collect();
    let e_u = e_offload + e_local;
    let e_m = e_download + e_mec_compute + e_charge;
    let w = params.weight;
    EnergyBreakdown {
        e_offload,
        e_local,
        e_mec_compute,
        e_download,
        e_charge,
        e_u,
        e_m,
        e_total: (1.0 - w) * e_u + w * e_m,
        received,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// `T1 + T2 + T3 ≤ T_d`.
    TotalLatency,
    /// `c_i(u_i − s_i)/f_u + t_u,i ≤ T_d`.
    UserLatency(usize),
    /// `t_u,i ≤ T1`.
    UplinkWindow(usize),
    /// `t_d,i ≤ T3`.
    DownlinkWindow(usize),
    /// `d_m s_i / f_m ≤ T2`.
    MecWindow(usize),
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::TotalLatency => write!(f, "total_latency"),
            Constraint::UserLatency(i) => write!(f, "user_latency[{i}]"),
            Constraint::UplinkWindow(i) => write!(f, "uplink_window[{i}]"),
            Constraint::DownlinkWindow(i) => write!(f, "downlink_window[{i}]"),
            Constraint::MecWindow(i) => write!(f, "mec_window[{i}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSlack {
    pub constraint: Constraint,
    /// `rhs − lhs`; negative means violated.
    pub slack: f64,
}

/// Slack of every latency constraint.
pub fn latency_slacks(alloc: &Allocation, params: &SystemParams, u: &[f64]) -> Vec<ConstraintSlack> {
    let td = params.latency;
    let mut out = vec![ConstraintSlack {
        constraint: Constraint::TotalLatency,
        slack: td - (alloc.t1 + alloc.t2 + alloc.t3),
    }];
    for i in 0..alloc.s.len() {
        let local = local_time((u[i] - alloc.s[i]).max(0.0), params);
        out.push(ConstraintSlack { constraint: Constraint::UserLatency(i), slack: td - (local + alloc.t_u[i]) });
        out.push(ConstraintSlack { constraint: Constraint::UplinkWindow(i), slack: alloc.t1 - alloc.t_u[i] });
        out.push(ConstraintSlack { constraint: Constraint::DownlinkWindow(i), slack: alloc.t3 - alloc.t_d[i] });
        out.push(ConstraintSlack {
            constraint: Constraint::MecWindow(i),
            slack: alloc.t2 - mec_time(alloc.s[i], params),
        });
    }
    out
}

/// Latency constraints violated by more than `1e-9·T_d`.
pub fn latency_check(alloc: &Allocation, params: &SystemParams, u: &[f64]) -> Vec<ConstraintSlack> {
    let tol = 1e-9 * params.latency;
    latency_slacks(alloc, params, u).into_iter().filter(|c| c.slack < -tol).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_sqr, C64};

    fn unit_chan(n: usize, k: usize) -> CellChannels {
        CellChannels {
            h: (0..k).map(|i| (0..n).map(|a| C64::new(((a + i) as f64).cos(), ((a * i) as f64).sin())).collect()).collect(),
            chan_gain: vec![1.0; k],
            sigma1_sq: vec![1.0; k],
            sigma2_sq: vec![1.0; k],
        }
    }

    fn params_nu1() -> SystemParams {
        SystemParams { pilot_fraction: Some(1.0), ..SystemParams::default() }
    }

    #[test]
    fn zero_power_zero_rate() {
        let c = unit_chan(100, 1);
        assert_eq!(uplink_rate(0.0, &c, &params_nu1(), 0), 0.0);
        assert_eq!(downlink_rate(0.0, &c, &params_nu1(), 0), 0.0);
    }

    #[test]
    fn uplink_rate_direct_value() {
        // log2(1 + 100/1.25) = log2(81)
        let c = unit_chan(100, 1);
        let r = uplink_rate(1.0, &c, &params_nu1(), 0);
        assert!((r - 6.339_850_002_884_624).abs() < 1e-12, "{r}");
    }

    #[test]
    fn downlink_rate_direct_value() {
        // N P γ η/(Γ2 σ2²) = 100 · P · 0.01 / 1.25
        let p = SystemParams { p_ap: 1.0, ..params_nu1() };
        let c = unit_chan(100, 1);
        let r = downlink_rate(0.01, &c, &p, 0);
        assert!((r - (1.0f64 + 0.8).log2()).abs() < 1e-14);
    }

    #[test]
    fn rates_grow_with_antennas() {
        let c = unit_chan(100, 1);
        let p1 = params_nu1();
        let p2 = SystemParams { n_antennas: 200, ..p1.clone() };
        assert!(uplink_rate(0.1, &c, &p2, 0) > uplink_rate(0.1, &c, &p1, 0));
        assert!(downlink_rate(0.1, &c, &p2, 0) > downlink_rate(0.1, &c, &p1, 0));
    }

    fn alloc(s: Vec<f64>, t_u: Vec<f64>, t_d: Vec<f64>, n: usize, params: &SystemParams) -> Allocation {
        let t1 = t_u.iter().cloned().fold(0.0, f64::max);
        let t3 = t_d.iter().cloned().fold(0.0, f64::max);
        let t2 = mec_phase(&s, params);
        let k = s.len();
        Allocation { s, t_u, t_d, t1, t2, t3, t_c: params.latency - t1 - t3, w_q: CMatrix::zeros(n, n), alpha: vec![0.0; k] }
    }

    #[test]
    fn no_offload_no_power() {
        let p = SystemParams::default();
        let c = unit_chan(8, 2);
        let a = alloc(vec![0.0, 1e4], vec![0.0, 1e-3], vec![0.0, 1e-3], 8, &p);
        let ip = implied_powers(&a, &c, &p);
        assert_eq!((ip.p[0], ip.eta[0]), (0.0, 0.0));
        assert!(ip.p[1] > 0.0 && ip.eta[1] > 0.0);
    }

    #[test]
    fn implied_power_inverts_rate() {
        let p = SystemParams::default();
        let c = unit_chan(8, 1);
        let (s, t) = (3e4, 2e-3);
        let a = alloc(vec![s], vec![t], vec![t], 8, &p);
        let ip = implied_powers(&a, &c, &p);
        let r_ul = uplink_rate(ip.p[0], &c, &p, 0) / p.nu();
        let expect = s / (p.nu() * t * p.bandwidth);
        assert!((r_ul / expect - 1.0).abs() < 1e-12);
        let r_dl = downlink_rate(ip.eta[0], &c, &p, 0);
        let expect = p.result_ratio * s / (t * p.bandwidth);
        assert!((r_dl / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shorter_uplink_needs_more_power() {
        let p = SystemParams::default();
        let c = unit_chan(8, 1);
        let long = implied_powers(&alloc(vec![2e4], vec![2e-3], vec![2e-3], 8, &p), &c, &p).p[0];
        let short = implied_powers(&alloc(vec![2e4], vec![1e-3], vec![2e-3], 8, &p), &c, &p).p[0];
        assert!(short > long);
    }

    #[test]
    fn local_only_energy() {
        let p = SystemParams::default();
        let c = unit_chan(8, 2);
        let u = [1e4, 3e4];
        let a = alloc(vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 2], 8, &p);
        let e = energy_breakdown(&a, &c, &p, &u);
        assert_eq!(e.e_m, 0.0);
        let expect = p.kappa_user * p.cycles_user * 4e4 * p.f_user * p.f_user;
        assert!((e.e_u / expect - 1.0).abs() < 1e-14);
    }

    #[test]
    fn isotropic_covariance_identity() {
        let p = SystemParams { n_antennas: 8, ..SystemParams::default() };
        let c = unit_chan(8, 2);
        let mut a = alloc(vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 2], 8, &p);
        a.w_q = CMatrix::scaled_identity(8, p.p_ap / 8.0);
        let e = energy_breakdown(&a, &c, &p, &[0.0, 0.0]);
        assert!((e.e_charge / (p.latency * p.p_ap) - 1.0).abs() < 1e-14);
        for (i, h) in c.h.iter().enumerate() {
            let power = e.received[i] / a.t_c;
            let expect = p.efficiency * p.p_ap / 8.0 * norm_sqr(h);
            assert!((power / expect - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_single_user() {
        // Independent evaluation with explicit constants.
        let p = SystemParams {
            n_antennas: 10,
            pilot_fraction: Some(0.9),
            weight: 0.3,
            f_mec: Some(1e10),
            ..SystemParams::default()
        };
        let c = CellChannels {
            h: vec![vec![C64::new(1.0, 0.0); 10]],
            chan_gain: vec![2.0],
            sigma1_sq: vec![1e-9],
            sigma2_sq: vec![3e-9],
        };
        let (u, s, tu, td) = (5e4, 2e4, 4e-3, 3e-3);
        let mut a = alloc(vec![s], vec![tu], vec![td], 10, &p);
        a.w_q = CMatrix::scaled_identity(10, 0.5);
        let e = energy_breakdown(&a, &c, &p, &[u]);

        let ul_scale = 1.25 * 1e-9 / (10.0 * 2.0);
        let pw = (2f64.powf(s / (0.9 * tu * 5e6)) - 1.0) * ul_scale;
        let dl_scale = 1.25 * 3e-9 / (10.0 * 2.0);
        let eta = (2f64.powf(2.0 * s / (td * 5e6)) - 1.0) * dl_scale / p.p_ap;
        let e_u = pw * tu + 0.5e-12 * 1000.0 * (u - s) * 1.8e9 * 1.8e9;
        let t2 = 500.0 * s / 1e10;
        let tc = 0.02 - tu - td;
        let e_m = p.p_ap * eta * td + 5e-12 * 500.0 * 1e20 * s + tc * 5.0;
        let total = 0.7 * e_u + 0.3 * e_m;
        assert!((a.t2 - t2).abs() < 1e-18);
        assert!((e.e_total / total - 1.0).abs() < 1e-10, "{} vs {}", e.e_total, total);
        assert!((e.e_u / e_u - 1.0).abs() < 1e-10);
        assert!((e.e_m / e_m - 1.0).abs() < 1e-10);
    }

    #[test]
    fn latency_feasible_allocation() {
        let p = SystemParams::default();
        let a = alloc(vec![1e4, 2e4], vec![1e-3, 2e-3], vec![2e-3, 1e-3], 4, &p);
        assert!(latency_check(&a, &p, &[2e4, 3e4]).is_empty());
    }

    #[test]
    fn full_uplink_budget_breaks_total() {
        let p = SystemParams::default();
        let mut a = alloc(vec![1e4], vec![p.latency], vec![1e-3], 4, &p);
        a.t1 = p.latency;
        let v = latency_check(&a, &p, &[1e4]);
        assert!(v.iter().any(|c| c.constraint == Constraint::TotalLatency));
    }

    #[test]
    fn closed_form_t2_is_tight_not_violated() {
        let p = SystemParams::default();
        let a = alloc(vec![1e4, 7e4], vec![1e-3; 2], vec![1e-3; 2], 4, &p);
        let slacks = latency_slacks(&a, &p, &[1e5, 1e5]);
        let g = slacks.iter().find(|c| c.constraint == Constraint::MecWindow(1)).unwrap();
        assert_eq!(g.slack, 0.0);
        assert!(latency_check(&a, &p, &[1e5, 1e5]).iter().all(|c| !matches!(c.constraint, Constraint::MecWindow(_))));
    }
}
