//! Large-scale fading, Rayleigh small-scale fading and the effective
//! interference-plus-noise powers seen by each user.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::{Scenario, SystemParams};

/// Distances below this are clamped to avoid the path-loss singularity.
pub const MIN_DISTANCE: f64 = 0.5;

/// `d^{-γ}·10^{X/10}` with `d` clamped to [`MIN_DISTANCE`]; unit gain at 1 m
/// with no shadowing.
pub fn large_scale_gain(distance: f64, shadow_db: f64, pathloss_exp: f64) -> f64 {
    distance.max(MIN_DISTANCE).powf(-pathloss_exp) * 10f64.powf(shadow_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub n_antennas: usize,
    pub users_per_cell: usize,
    /// `h[j]`: channel from user `j`'s serving AP, length `N`.
    pub h: Vec<Vec<C64>>,
    /// `beta[ap][j]`: large-scale gain between AP `ap` and user `j`.
    pub beta: Vec<Vec<f64>>,
    /// Effective channel gain `γ_j` towards the serving AP.
    pub chan_gain: Vec<f64>,
    pub sigma1_sq: Vec<f64>,
    pub sigma2_sq: Vec<f64>,
}

/// One cell's slice of a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CellChannels {
    pub h: Vec<Vec<C64>>,
    pub chan_gain: Vec<f64>,
    pub sigma1_sq: Vec<f64>,
    pub sigma2_sq: Vec<f64>,
}

impl CellChannels {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }
}

impl ChannelRealization {
    pub fn n_cells(&self) -> usize {
        self.beta.len()
    }

    pub fn cell(&self, cell: usize) -> CellChannels {
        let k = self.users_per_cell;
        let r = cell * k..(cell + 1) * k;
        CellChannels {
            h: self.h[r.clone()].to_vec(),
            chan_gain: self.chan_gain[r.clone()].to_vec(),
            sigma1_sq: self.sigma1_sq[r.clone()].to_vec(),
            sigma2_sq: self.sigma2_sq[r].to_vec(),
        }
    }
}

/// Draws one realization. The same `(scenario, params, seed)` always gives
/// the same channels.
pub fn draw_channels(scenario: &Scenario, params: &SystemParams, seed: u64) -> Result<ChannelRealization> {
    let n = params.n_antennas;
    let k = scenario.users_per_cell;
    if k != params.n_users || scenario.n_cells() != params.n_cells {
        return Err(Error::Dimension(format!(
            "scenario has L={} K={}, params have L={} K={}",
            scenario.n_cells(),
            k,
            params.n_cells,
            params.n_users
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, params.shadowing_db).map_err(|e| Error::Validation { field: "shadowing_db", msg: e.to_string() })?;
    let cn = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("fixed std");

    let beta: Vec<Vec<f64>> = scenario
        .ap_positions
        .iter()
        .map(|ap| {
            scenario
                .users
                .iter()
                .map(|u| {
                    let d = ((u.position[0] - ap[0]).powi(2) + (u.position[1] - ap[1]).powi(2)).sqrt();
                    large_scale_gain(d, shadow.sample(&mut rng), params.pathloss_exp)
                })
                .collect()
        })
        .collect();

    let mut h = Vec::with_capacity(scenario.users.len());
    let mut chan_gain = Vec::with_capacity(scenario.users.len());
    for (j, u) in scenario.users.iter().enumerate() {
        let b = beta[u.cell][j];
        let amp = b.sqrt();
        h.push((0..n).map(|_| C64::new(cn.sample(&mut rng), cn.sample(&mut rng)) * amp).collect());
        chan_gain.push(b * params.chan_gain_scale);
    }
    let (sigma1_sq, sigma2_sq) = interference_powers(&beta, scenario, params);
    Ok(ChannelRealization { n_antennas: n, users_per_cell: k, h, beta, chan_gain, sigma1_sq, sigma2_sq })
}

/// Effective uplink and downlink interference-plus-noise powers.
///
/// Uplink at AP `l` for user `(l, i)`: noise, plus pilot contamination from the
/// same-index user of every other cell at `p_max`, plus all other-cell users
/// at `p_max/N`. Downlink mirrors this with per-user AP power `P/K`.
pub fn interference_powers(beta: &[Vec<f64>], scenario: &Scenario, params: &SystemParams) -> (Vec<f64>, Vec<f64>) {
    let k = scenario.users_per_cell;
    let n = params.n_antennas as f64;
    let l_count = scenario.n_cells();
    let p_user = params.p_user_max;
    let p_dl = params.p_ap / k as f64;
    let mut s1 = Vec::with_capacity(scenario.users.len());
    let mut s2 = Vec::with_capacity(scenario.users.len());
    for (j, u) in scenario.users.iter().enumerate() {
        let l = u.cell;
        let idx = j - l * k;
        let mut ul = params.noise_ul;
        let mut dl = params.noise_dl;
        for other in (0..l_count).filter(|&o| o != l) {
            let twin = other * k + idx;
            ul += beta[l][twin] * p_user;
            ul += (0..k).map(|m| beta[l][other * k + m]).sum::<f64>() * p_user / n;
            dl += beta[other][j] * p_dl;
            dl += beta[other][j] * k as f64 * p_dl / n;
        }
        s1.push(ul);
        s2.push(dl);
    }
    (s1, s2)
}

/// Writes one row per user: `re_0,im_0,re_1,im_1,…` over the `N` antennas,
/// preceded by a header row naming the columns.
pub fn write_channel_csv<W: Write>(h: &[Vec<C64>], mut out: W) -> Result<()> {
    let n = h.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..n).map(|a| format!("re_{a},im_{a}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for hj in h {
        let row: Vec<String> = hj.iter().map(|z| format!("{:?},{:?}", z.re, z.im)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads channels written by [`write_channel_csv`]. The header row is optional.
pub fn read_channel_csv<R: BufRead>(input: R) -> Result<Vec<Vec<C64>>> {
    let mut h: Vec<Vec<C64>> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let t = line.trim();
        if t.is_empty() || (idx == 0 && t.starts_with("re_")) {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() % 2 != 0 {
            return Err(Error::Parse { line: line_no, msg: format!("odd column count {}", fields.len()) });
        }
        let vals = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let row: Vec<C64> = vals.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        if let Some(first) = h.first() {
            if first.len() != row.len() {
                return Err(Error::Dimension(format!("line {line_no}: {} antennas, expected {}", row.len(), first.len())));
            }
        }
        h.push(row);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_sqr;
    use crate::scenario::generate_scenario;

    #[test]
    fn reference_distance_gain_is_one() {
        assert_eq!(large_scale_gain(1.0, 0.0, 2.2), 1.0);
    }

    #[test]
    fn distance_is_clamped() {
        assert_eq!(large_scale_gain(0.0, 0.0, 2.2), large_scale_gain(0.5, 0.0, 2.2));
        assert!(large_scale_gain(0.0, 0.0, 2.2).is_finite());
    }

    #[test]
    fn pathloss_value() {
        // 10 m, exponent 2.2, +3 dB shadowing
        let g = large_scale_gain(10.0, 3.0, 2.2);
        let expect = 10f64.powf(-2.2) * 10f64.powf(0.3);
        assert!((g / expect - 1.0).abs() < 1e-14);
    }

    #[test]
    fn same_seed_same_channels() {
        let p = SystemParams::default();
        let s = generate_scenario(&p, 20.0, 1).unwrap();
        let a = draw_channels(&s, &p, 5).unwrap();
        let b = draw_channels(&s, &p, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, draw_channels(&s, &p, 6).unwrap());
    }

    #[test]
    fn sample_power_matches_beta() {
        let p = SystemParams { n_cells: 1, n_users: 1, ..SystemParams::default() };
        let s = generate_scenario(&p, 20.0, 2).unwrap();
        let draws = 400;
        let mut acc = 0.0;
        for seed in 0..draws {
            let r = draw_channels(&s, &p, seed).unwrap();
            acc += norm_sqr(&r.h[0]) / (p.n_antennas as f64 * r.beta[0][0]);
        }
        let ratio = acc / draws as f64;
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn single_cell_sees_only_noise() {
        let p = SystemParams { n_cells: 1, ..SystemParams::default() };
        let s = generate_scenario(&p, 20.0, 4).unwrap();
        let r = draw_channels(&s, &p, 4).unwrap();
        assert!(r.sigma1_sq.iter().all(|&v| v == p.noise_ul));
        assert!(r.sigma2_sq.iter().all(|&v| v == p.noise_dl));
    }

    #[test]
    fn interference_hand_computed() {
        // two cells, one user each
        let p = SystemParams { n_cells: 2, n_users: 1, n_antennas: 10, ..SystemParams::default() };
        let s = generate_scenario(&p, 20.0, 4).unwrap();
        let beta = vec![vec![1.0, 0.01], vec![0.02, 2.0]];
        let (s1, s2) = interference_powers(&beta, &s, &p);
        let pu = p.p_user_max;
        let pd = p.p_ap;
        assert!((s1[0] - (p.noise_ul + 0.01 * pu * 1.1)).abs() < 1e-18);
        assert!((s1[1] - (p.noise_ul + 0.02 * pu * 1.1)).abs() < 1e-18);
        assert!((s2[0] - (p.noise_dl + 0.02 * pd * 1.1)).abs() < 1e-15);
        assert!((s2[1] - (p.noise_dl + 0.01 * pd * 1.1)).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let p = SystemParams { n_antennas: 6, n_cells: 1, n_users: 3, ..SystemParams::default() };
        let s = generate_scenario(&p, 20.0, 1).unwrap();
        let r = draw_channels(&s, &p, 2).unwrap();
        let mut buf = Vec::new();
        write_channel_csv(&r.h, &mut buf).unwrap();
        let back = read_channel_csv(buf.as_slice()).unwrap();
        assert_eq!(back, r.h);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "re_0,im_0,re_1,im_1\n1,0,0,1\n1,1\n";
        assert!(matches!(read_channel_csv(text.as_bytes()), Err(Error::Dimension(_))));
        assert!(matches!(read_channel_csv("1,x\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_channel_csv("1,2,3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
