//! Reference charging schemes: isotropic radiation and equal power over the
//! energy-beam directions, both scaled down so no user exceeds its request.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::charging::{beam_directions, initial_charging_duals, BeamDirections, BeamSolution, ChargingDuals};
use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, C64};
use crate::scenario::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `W_q = (P/N)·I`.
    Isotropic,
    /// `P/K` on each of the `K` energy-beam directions.
    EqualK,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Isotropic => "isotropic",
            Self::EqualK => "equal_k",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(Self::Isotropic),
            "equal_k" => Ok(Self::EqualK),
            other => Err(Error::Validation { field: "scheme", msg: format!("unknown baseline '{other}'") }),
        }
    }
}

/// Unscaled directions and per-direction powers of a scheme.
fn shape(kind: BaselineKind, h: &[Vec<C64>], e: &[f64], params: &SystemParams, dirs: Option<&BeamDirections>) -> Result<BeamDirections> {
    let n = h.first().map_or(0, Vec::len);
    match kind {
        BaselineKind::Isotropic => {
            let beams = (0..n)
                .map(|j| {
                    let mut v = vec![C64::new(0.0, 0.0); n];
                    v[j] = C64::new(1.0, 0.0);
                    v
                })
                .collect();
            Ok(BeamDirections { beams, weight_eigs: vec![0.0; n] })
        }
        BaselineKind::EqualK => match dirs {
            Some(d) if !d.beams.is_empty() => Ok(d.clone()),
            _ => {
                let psi = initial_charging_duals(h, e, params).psi;
                let weights: Vec<f64> = psi.iter().zip(e).map(|(p, &x)| if x > 0.0 { *p } else { 0.0 }).collect();
                beam_directions(h, &weights, e)
            }
        },
    }
}

/// Energy harvested by each user per joule of total transmit power, over `T_c`.
fn unit_harvest(dirs: &BeamDirections, h: &[Vec<C64>], t_c: f64, params: &SystemParams) -> Vec<f64> {
    let per_beam = 1.0 / dirs.beams.len().max(1) as f64;
    dirs.gains(h).iter().map(|row| params.efficiency * t_c * per_beam * row.iter().sum::<f64>()).collect()
}

/// Largest `c ∈ [0, 1]` with `c·harvest_i ≤ e_i` for every requesting user.
fn scale_factor(harvest: &[f64], e: &[f64]) -> f64 {
    harvest
        .iter()
        .zip(e)
        .filter(|(_, &ei)| ei > 0.0)
        .map(|(&hv, &ei)| if hv > 0.0 { ei / hv } else { f64::INFINITY })
        .fold(1.0, f64::min)
}

/// Baseline covariance at charging time `t_c`. `EqualK` uses `dirs` when
/// given, otherwise directions at the initial multipliers.
pub fn baseline_covariance(
    kind: BaselineKind,
    h: &[Vec<C64>],
    e: &[f64],
    t_c: f64,
    params: &SystemParams,
    dirs: Option<&BeamDirections>,
) -> Result<BeamSolution> {
    if !(t_c > 0.0) {
        return Err(Error::ChargingDisabled(t_c));
    }
    let directions = shape(kind, h, e, params, dirs)?;
    let full = unit_harvest(&directions, h, t_c, params).iter().map(|x| x * params.p_ap).collect::<Vec<_>>();
    let c = scale_factor(&full, e);
    let per_beam = c * params.p_ap / directions.beams.len().max(1) as f64;
    let lambda_q = vec![per_beam; directions.beams.len()];
    let k = h.len();
    let duals = ChargingDuals { psi: vec![0.0; k], lambda5: 0.0 };
    let mut sol = BeamSolution::assemble(directions, lambda_q, vec![0.0; k], duals, h, e, t_c, params)?;
    sol.alpha = sol.received.iter().zip(e).map(|(r, &ei)| if ei > 0.0 { r / ei } else { 1.0 }).collect();
    sol.capped = c < 1.0;
    Ok(sol)
}

/// Charging energy a baseline needs to give every user at least `target_i`,
/// ignoring the power cap. Infinite when some target user is unreachable.
pub fn matched_charge_energy(
    kind: BaselineKind,
    h: &[Vec<C64>],
    e: &[f64],
    target: &[f64],
    t_c: f64,
    params: &SystemParams,
    dirs: Option<&BeamDirections>,
) -> Result<f64> {
    if !(t_c > 0.0) {
        return Err(Error::ChargingDisabled(t_c));
    }
    let directions = shape(kind, h, e, params, dirs)?;
    let unit = unit_harvest(&directions, h, t_c, params);
    let power = target
        .iter()
        .zip(&unit)
        .filter(|(&g, _)| g > 0.0)
        .map(|(&g, &hv)| if hv > 0.0 { g / hv } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(power * t_c)
}

/// Isotropic harvest at full power, `ξ·T_c·(P/N)·‖h_i‖²`.
pub fn isotropic_harvest(h: &[Vec<C64>], t_c: f64, params: &SystemParams) -> Vec<f64> {
    let n = h.first().map_or(1, Vec::len) as f64;
    h.iter().map(|hi| params.efficiency * t_c * params.p_ap / n * norm_sqr(hi)).collect()
}
