//! System parameters, config parsing and random scenario generation.
//!
//! All values are held in SI units (bits, s, Hz, W, J, F). The config reader
//! accepts common engineering units (`ms`, `MHz`, `dBm`, `mJ`, `kbit`, `pF`)
//! and converts on load.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_antennas: usize,
    /// Users per access point.
    pub n_users: usize,
    pub n_cells: usize,
    pub bandwidth: f64,
    /// Round-trip latency budget `T_d`.
    pub latency: f64,
    /// Weight of MEC-side energy in the objective; users get `1 - weight`.
    pub weight: f64,
    pub gap_ul: f64,
    pub gap_dl: f64,
    /// Result bits produced per offloaded bit.
    pub result_ratio: f64,
    /// Data fraction of the coherence block. `None` derives it from the pilot
    /// length (one pilot symbol per user) and `τ_c = B·T_d`.
    pub pilot_fraction: Option<f64>,
    /// RF-to-DC conversion efficiency.
    pub efficiency: f64,
    pub kappa_user: f64,
    pub kappa_mec: f64,
    pub cycles_user: f64,
    pub cycles_mec: f64,
    pub f_user: f64,
    /// Aggregate MEC CPU capacity, shared equally among a cell's users.
    pub mec_capacity: f64,
    /// Per-task MEC frequency override.
    pub f_mec: Option<f64>,
    pub p_user_max: f64,
    pub p_ap: f64,
    pub noise_ul: f64,
    pub noise_dl: f64,
    pub pathloss_exp: f64,
    pub shadowing_db: f64,
    /// Channel-estimate quality factor in (0, 1]; 1 is perfect CSI.
    pub chan_gain_scale: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub task_min: f64,
    pub task_max: f64,
    pub request_min: f64,
    pub request_max: f64,
    pub p2_max_iters: usize,
    pub p3_max_iters: usize,
    pub outer_max_iters: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_antennas: 100,
            n_users: 4,
            n_cells: 4,
            bandwidth: 5e6,
            latency: 20e-3,
            weight: 1e-3,
            gap_ul: 1.25,
            gap_dl: 1.25,
            result_ratio: 2.0,
            pilot_fraction: None,
            efficiency: 0.5,
            kappa_user: 0.5e-12,
            kappa_mec: 5e-12,
            cycles_user: 1000.0,
            cycles_mec: 500.0,
            f_user: 1.8e9,
            mec_capacity: 24.0 * 3.4e9,
            f_mec: None,
            p_user_max: dbm_to_watts(23.0),
            p_ap: dbm_to_watts(46.0),
            noise_ul: dbm_to_watts(-127.0),
            noise_dl: dbm_to_watts(-122.0),
            pathloss_exp: 2.2,
            shadowing_db: 2.7,
            chan_gain_scale: 1.0,
            eps1: 1e-4,
            eps2: 1e-6,
            task_min: 100e3,
            task_max: 300e3,
            request_min: 1e-3,
            request_max: 10e-3,
            p2_max_iters: 5000,
            p3_max_iters: 2000,
            outer_max_iters: 200,
        }
    }
}

impl SystemParams {
    /// `ν`, the data-carrying share of the coherence block.
    pub fn nu(&self) -> f64 {
        self.pilot_fraction.unwrap_or_else(|| {
            let tau_c = self.bandwidth * self.latency;
            (1.0 - self.n_users as f64 / tau_c).clamp(f64::MIN_POSITIVE, 1.0)
        })
    }

    /// Per-task MEC CPU frequency `f_m`.
    pub fn f_mec(&self) -> f64 {
        self.f_mec.unwrap_or(self.mec_capacity / self.n_users as f64)
    }

    /// Objective weight clamped away from {0, 1} so neither closed form degenerates.
    pub fn weight_clamped(&self) -> f64 {
        self.weight.clamp(1e-6, 1.0 - 1e-6)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, msg: impl Into<String>) -> Result<()> {
            Err(Error::Validation { field, msg: msg.into() })
        }
        let positive = [
            ("bandwidth", self.bandwidth),
            ("latency", self.latency),
            ("kappa_user", self.kappa_user),
            ("kappa_mec", self.kappa_mec),
            ("cycles_user", self.cycles_user),
            ("cycles_mec", self.cycles_mec),
            ("f_user", self.f_user),
            ("mec_capacity", self.mec_capacity),
            ("p_user_max", self.p_user_max),
            ("p_ap", self.p_ap),
            ("noise_ul", self.noise_ul),
            ("noise_dl", self.noise_dl),
            ("result_ratio", self.result_ratio),
            ("pathloss_exp", self.pathloss_exp),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("task_min", self.task_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be finite and > 0, got {v}"));
            }
        }
        if self.n_antennas == 0 || self.n_users == 0 || self.n_cells == 0 {
            return bad("n_antennas", "N, K and L must all be >= 1");
        }
        if self.n_antennas < self.n_users {
            return bad("n_antennas", format!("need N >= K, got N = {} < K = {}", self.n_antennas, self.n_users));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return bad("weight", format!("w must lie in [0, 1], got {}", self.weight));
        }
        if !(self.gap_ul >= 1.0) {
            return bad("gap_ul", format!("capacity gap must be >= 1, got {}", self.gap_ul));
        }
        if !(self.gap_dl >= 1.0) {
            return bad("gap_dl", format!("capacity gap must be >= 1, got {}", self.gap_dl));
        }
        let nu = self.nu();
        if !(nu > 0.0 && nu <= 1.0) {
            return bad("pilot_fraction", format!("nu must lie in (0, 1], got {nu}"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency", format!("xi must lie in (0, 1], got {}", self.efficiency));
        }
        if !(self.chan_gain_scale > 0.0 && self.chan_gain_scale <= 1.0) {
            return bad("chan_gain_scale", format!("must lie in (0, 1], got {}", self.chan_gain_scale));
        }
        if let Some(f) = self.f_mec {
            if !(f > 0.0 && f.is_finite()) {
                return bad("f_mec", format!("must be > 0, got {f}"));
            }
        }
        if !(self.shadowing_db >= 0.0) {
            return bad("shadowing_db", "must be >= 0");
        }
        if self.task_max < self.task_min {
            return bad("task_max", "task_max < task_min");
        }
        if !(self.request_min >= 0.0) || self.request_max < self.request_min {
            return bad("request_min", "need 0 <= request_min <= request_max");
        }
        if self.p2_max_iters == 0 || self.p3_max_iters == 0 || self.outer_max_iters == 0 {
            return bad("p2_max_iters", "iteration caps must be >= 1");
        }
        Ok(())
    }

    /// Writes every field as `key = value` in SI units; parses back to an equal value.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = key.get(self) {
                let _ = writeln!(out, "{} = {}", key.name, v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Count,
    Ratio,
    Time,
    Freq,
    Power,
    Energy,
    Bits,
    Capacitance,
    Decibel,
}

struct Key {
    name: &'static str,
    aliases: &'static [&'static str],
    dim: Dim,
}

macro_rules! keys {
    ($( $name:literal [$($alias:literal),*] $dim:ident ),* $(,)?) => {
        const KEYS: &[Key] = &[ $( Key { name: $name, aliases: &[$($alias),*], dim: Dim::$dim } ),* ];
    };
}

keys! {
    "n_antennas" ["N"] Count,
    "n_users" ["K"] Count,
    "n_cells" ["L"] Count,
    "bandwidth" ["B"] Freq,
    "latency" ["T_d"] Time,
    "weight" ["w"] Ratio,
    "gap_ul" ["Gamma1", "Gamma_1"] Ratio,
    "gap_dl" ["Gamma2", "Gamma_2"] Ratio,
    "result_ratio" ["mu"] Ratio,
    "pilot_fraction" ["nu"] Ratio,
    "efficiency" ["xi"] Ratio,
    "kappa_user" ["kappa_i"] Capacitance,
    "kappa_mec" ["kappa_m"] Capacitance,
    "cycles_user" ["c_i"] Ratio,
    "cycles_mec" ["d_m"] Ratio,
    "f_user" ["f_u"] Freq,
    "mec_capacity" [] Freq,
    "f_mec" ["f_m"] Freq,
    "p_user_max" ["p_max"] Power,
    "p_ap" ["P"] Power,
    "noise_ul" ["sigma_r2"] Power,
    "noise_dl" ["sigma_k2"] Power,
    "pathloss_exp" ["gamma"] Ratio,
    "shadowing_db" ["sigma_shadow"] Decibel,
    "chan_gain_scale" [] Ratio,
    "eps1" [] Ratio,
    "eps2" [] Ratio,
    "task_min" ["u_min"] Bits,
    "task_max" ["u_max"] Bits,
    "request_min" ["e_min"] Energy,
    "request_max" ["e_max"] Energy,
    "p2_max_iters" [] Count,
    "p3_max_iters" [] Count,
    "outer_max_iters" [] Count,
}

impl Key {
    fn get(&self, p: &SystemParams) -> Option<String> {
        let f = |v: f64| Some(format!("{v:?}"));
        let n = |v: usize| Some(v.to_string());
        match self.name {
            "n_antennas" => n(p.n_antennas),
            "n_users" => n(p.n_users),
            "n_cells" => n(p.n_cells),
            "bandwidth" => f(p.bandwidth),
            "latency" => f(p.latency),
            "weight" => f(p.weight),
            "gap_ul" => f(p.gap_ul),
            "gap_dl" => f(p.gap_dl),
            "result_ratio" => f(p.result_ratio),
            "pilot_fraction" => p.pilot_fraction.and_then(f),
            "efficiency" => f(p.efficiency),
            "kappa_user" => f(p.kappa_user),
            "kappa_mec" => f(p.kappa_mec),
            "cycles_user" => f(p.cycles_user),
            "cycles_mec" => f(p.cycles_mec),
            "f_user" => f(p.f_user),
            "mec_capacity" => f(p.mec_capacity),
            "f_mec" => p.f_mec.and_then(f),
            "p_user_max" => f(p.p_user_max),
            "p_ap" => f(p.p_ap),
            "noise_ul" => f(p.noise_ul),
            "noise_dl" => f(p.noise_dl),
            "pathloss_exp" => f(p.pathloss_exp),
            "shadowing_db" => f(p.shadowing_db),
            "chan_gain_scale" => f(p.chan_gain_scale),
            "eps1" => f(p.eps1),
            "eps2" => f(p.eps2),
            "task_min" => f(p.task_min),
            "task_max" => f(p.task_max),
            "request_min" => f(p.request_min),
            "request_max" => f(p.request_max),
            "p2_max_iters" => n(p.p2_max_iters),
            "p3_max_iters" => n(p.p3_max_iters),
            "outer_max_iters" => n(p.outer_max_iters),
            _ => unreachable!("unknown key {}", self.name),
        }
    }

    fn set(&self, p: &mut SystemParams, v: f64) -> std::result::Result<(), String> {
        let count = |v: f64| -> std::result::Result<usize, String> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(format!("`{}` expects a non-negative integer, got {v}", self.name))
            }
        };
        match self.name {
            "n_antennas" => p.n_antennas = count(v)?,
            "n_users" => p.n_users = count(v)?,
            "n_cells" => p.n_cells = count(v)?,
            "bandwidth" => p.bandwidth = v,
            "latency" => p.latency = v,
            "weight" => p.weight = v,
            "gap_ul" => p.gap_ul = v,
            "gap_dl" => p.gap_dl = v,
            "result_ratio" => p.result_ratio = v,
            "pilot_fraction" => p.pilot_fraction = Some(v),
            "efficiency" => p.efficiency = v,
            "kappa_user" => p.kappa_user = v,
            "kappa_mec" => p.kappa_mec = v,
            "cycles_user" => p.cycles_user = v,
            "cycles_mec" => p.cycles_mec = v,
            "f_user" => p.f_user = v,
            "mec_capacity" => p.mec_capacity = v,
            "f_mec" => p.f_mec = Some(v),
            "p_user_max" => p.p_user_max = v,
            "p_ap" => p.p_ap = v,
            "noise_ul" => p.noise_ul = v,
            "noise_dl" => p.noise_dl = v,
            "pathloss_exp" => p.pathloss_exp = v,
            "shadowing_db" => p.shadowing_db = v,
            "chan_gain_scale" => p.chan_gain_scale = v,
            "eps1" => p.eps1 = v,
            "eps2" => p.eps2 = v,
            "task_min" => p.task_min = v,
            "task_max" => p.task_max = v,
            "request_min" => p.request_min = v,
            "request_max" => p.request_max = v,
            "p2_max_iters" => p.p2_max_iters = count(v)?,
            "p3_max_iters" => p.p3_max_iters = count(v)?,
            "outer_max_iters" => p.outer_max_iters = count(v)?,
            _ => unreachable!(),
        }
        Ok(())
    }
}

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name || k.aliases.contains(&name))
}

/// Parses `number [unit]` for a key of the given dimension.
fn parse_value(raw: &str, dim: Dim) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    let split = raw
        .char_indices()
        .find(|&(i, c)| c.is_ascii_alphabetic() && !is_exponent(raw, i))
        .map_or(raw.len(), |(i, _)| i);
    let (num, unit) = raw.split_at(split);
    let num: f64 = num.trim().parse().map_err(|_| format!("cannot parse number in `{raw}`"))?;
    let unit = unit.trim();
    let scale = |table: &[(&str, f64)]| -> std::result::Result<f64, String> {
        table
            .iter()
            .find(|(u, _)| *u == unit)
            .map(|&(_, s)| num * s)
            .ok_or_else(|| format!("unit `{unit}` not valid here"))
    };
    match dim {
        Dim::Count | Dim::Ratio => scale(&[("", 1.0)]),
        Dim::Time => scale(&[("", 1.0), ("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("ns", 1e-9)]),
        Dim::Freq => scale(&[("", 1.0), ("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)]),
        Dim::Energy => scale(&[("", 1.0), ("J", 1.0), ("mJ", 1e-3), ("uJ", 1e-6), ("nJ", 1e-9)]),
        Dim::Bits => scale(&[("", 1.0), ("bit", 1.0), ("kbit", 1e3), ("Mbit", 1e6), ("Gbit", 1e9)]),
        Dim::Capacitance => scale(&[("", 1.0), ("F", 1.0), ("nF", 1e-9), ("pF", 1e-12), ("fF", 1e-15)]),
        Dim::Decibel => scale(&[("", 1.0), ("dB", 1.0)]),
        Dim::Power => match unit {
            "dBm" => Ok(dbm_to_watts(num)),
            "dBW" => Ok(10f64.powf(num / 10.0)),
            _ => scale(&[("", 1.0), ("W", 1.0), ("mW", 1e-3), ("uW", 1e-6)]),
        },
    }
}

// `e`/`E` inside a float literal such as `1e-3` is not a unit.
fn is_exponent(s: &str, i: usize) -> bool {
    let b = s.as_bytes();
    if !(b[i] == b'e' || b[i] == b'E') || i == 0 || !b[i - 1].is_ascii_digit() && b[i - 1] != b'.' {
        return false;
    }
    match b.get(i + 1) {
        Some(c) if c.is_ascii_digit() => true,
        Some(b'+') | Some(b'-') => b.get(i + 2).is_some_and(u8::is_ascii_digit),
        _ => false,
    }
}

/// Parses a flat `key = value [unit]` document on top of the defaults.
pub fn load_params(config_text: &str) -> Result<SystemParams> {
    let mut params = SystemParams::default();
    apply_config(&mut params, config_text)?;
    params.validate()?;
    Ok(params)
}

/// Applies config lines onto `params` without validating.
pub fn apply_config(params: &mut SystemParams, config_text: &str) -> Result<()> {
    for (idx, line) in config_text.lines().enumerate() {
        let line_no = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected `key = value`, got `{content}`") })?;
        let k = k.trim();
        let key = lookup(k).ok_or_else(|| Error::Parse { line: line_no, msg: format!("unknown key `{k}`") })?;
        let value = parse_value(v, key.dim).map_err(|msg| Error::Parse { line: line_no, msg })?;
        key.set(params, value).map_err(|msg| Error::Parse { line: line_no, msg })?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub position: [f64; 2],
    pub cell: usize,
    /// Task size `u_i` in bits.
    pub task_bits: f64,
    /// Requested energy `e_i` in J.
    pub request: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_side: f64,
    pub ap_positions: Vec<[f64; 2]>,
    /// `users[l * K + i]` is user `i` of cell `l`.
    pub users: Vec<User>,
    pub users_per_cell: usize,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn n_cells(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn cell_users(&self, cell: usize) -> &[User] {
        let k = self.users_per_cell;
        &self.users[cell * k..(cell + 1) * k]
    }

    pub fn tasks(&self, cell: usize) -> Vec<f64> {
        self.cell_users(cell).iter().map(|u| u.task_bits).collect()
    }

    pub fn requests(&self, cell: usize) -> Vec<f64> {
        self.cell_users(cell).iter().map(|u| u.request).collect()
    }

    /// Same geometry and requests with every task removed.
    pub fn without_tasks(&self) -> Scenario {
        let mut s = self.clone();
        for u in &mut s.users {
            u.task_bits = 0.0;
        }
        s
    }
}

/// Grid layout: `cols × rows` cells tiling the square, AP at each cell centre.
fn grid_shape(l: usize) -> (usize, usize) {
    let cols = (l as f64).sqrt().ceil() as usize;
    let rows = l.div_ceil(cols);
    (cols, rows)
}

/// Places `L` APs on a regular grid over an `area_side`² square and drops `K`
/// users uniformly inside each AP's grid cell.
pub fn generate_scenario(params: &SystemParams, area_side: f64, seed: u64) -> Result<Scenario> {
    params.validate()?;
    if !(area_side > 0.0 && area_side.is_finite()) {
        return Err(Error::Validation { field: "area_side", msg: format!("must be > 0, got {area_side}") });
    }
    let l = params.n_cells;
    let k = params.n_users;
    let (cols, rows) = grid_shape(l);
    let cw = area_side / cols as f64;
    let ch = area_side / rows as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ap_positions = Vec::with_capacity(l);
    let mut users = Vec::with_capacity(l * k);
    for cell in 0..l {
        let (cx, cy) = ((cell % cols) as f64, (cell / cols) as f64);
        ap_positions.push([(cx + 0.5) * cw, (cy + 0.5) * ch]);
        for _ in 0..k {
            let position = [(cx + rng.random::<f64>()) * cw, (cy + rng.random::<f64>()) * ch];
            let task_bits = uniform(&mut rng, params.task_min, params.task_max);
            let request = uniform(&mut rng, params.request_min, params.request_max);
            users.push(User { position, cell, task_bits, request });
        }
    }
    Ok(Scenario { area_side, ap_positions, users, users_per_cell: k, rng_seed: seed })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
