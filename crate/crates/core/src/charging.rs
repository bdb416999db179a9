//! Energy beamforming at fixed charging time: beam directions from the
//! eigenstructure of `B`, beam powers from a small LP, and dual subgradient
//! updates of the request and power multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complete_basis, dot, eigh_ascending, norm_sqr, orthonormalize, CMatrix, C64};
use crate::lp::{solve_lp, Relation, Row};
use crate::scenario::SystemParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChargingDuals {
    /// Received-energy multipliers.
    pub psi: Vec<f64>,
    /// Sum-power multiplier.
    pub lambda5: f64,
}

/// `(T_c + λ₅)·I − ξ·T_c·Σ ψ_i α_i h_i h_i*`.
pub fn build_b(duals: &ChargingDuals, alpha: &[f64], h: &[Vec<C64>], t_c: f64, params: &SystemParams) -> Result<CMatrix> {
    if !(t_c > 0.0) {
        return Err(Error::ChargingDisabled(t_c));
    }
    let n = h.first().map_or(0, Vec::len);
    let mut b = CMatrix::scaled_identity(n, t_c + duals.lambda5);
    for (i, hi) in h.iter().enumerate() {
        let w = duals.psi[i] * alpha[i];
        if w != 0.0 {
            b.add_outer(hi, -params.efficiency * t_c * w);
        }
    }
    Ok(b)
}

/// The `K` energy-beam directions, ordered by ascending eigenvalue of `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDirections {
    /// Orthonormal, each of length `N`.
    pub beams: Vec<Vec<C64>>,
    /// Eigenvalue of `Σ ω_i h_i h_i*` along each beam (descending).
    pub weight_eigs: Vec<f64>,
}

impl BeamDirections {
    /// `A[i][j] = |h_i* u_j|²`.
    pub fn gains(&self, h: &[Vec<C64>]) -> Vec<Vec<f64>> {
        h.iter().map(|hi| self.beams.iter().map(|u| dot(hi, u).norm_sqr()).collect()).collect()
    }

    /// Full unitary `U_B` whose first `K` columns are the beams.
    pub fn unitary(&self, n: usize) -> CMatrix {
        CMatrix::from_columns(&complete_basis(&self.beams, n))
    }
}

/// Eigenvectors of `Σ ω_i h_i h_i*` with the largest eigenvalues, i.e. the
/// eigenvectors of `B` with the smallest. Directions whose weight eigenvalue
/// vanishes are resolved with the `fallback` weights instead.
///
/// The `K × K` problem is solved in an orthonormal basis of `span{h_i}`; every
/// direction outside that span has weight eigenvalue zero.
pub fn beam_directions(h: &[Vec<C64>], weights: &[f64], fallback: &[f64]) -> Result<BeamDirections> {
    let k = h.len();
    let n = h.first().map_or(0, Vec::len);
    let q = orthonormalize(h, 1e-10);
    let r = q.len();
    let coords: Vec<Vec<C64>> = h.iter().map(|hi| q.iter().map(|qa| dot(qa, hi)).collect()).collect();

    let gram = |w: &[f64]| -> CMatrix {
        let mut m = CMatrix::zeros(r, r);
        for (i, c) in coords.iter().enumerate() {
            if w[i] != 0.0 {
                m.add_outer(c, -w[i]);
            }
        }
        m
    };

    let mut v = CMatrix::identity(r);
    let mut eigs = vec![0.0; r];
    if r > 0 {
        let e = eigh_ascending(&gram(weights))?;
        v = e.vectors;
        eigs = e.values.iter().map(|x| -x).collect();
        let top = eigs.iter().cloned().fold(0.0, f64::max);
        let null: Vec<usize> = (0..r).filter(|&j| eigs[j] <= 1e-12 * top).collect();
        if null.len() > 1 || (null.len() == 1 && top == 0.0) {
            // Rotate the degenerate block by the fallback weights.
            let z = CMatrix::from_columns(&null.iter().map(|&j| v.column(j)).collect::<Vec<_>>());
            let f = z.adjoint().matmul(&gram(fallback)).matmul(&z);
            let ef = eigh_ascending(&f)?;
            let rotated = z.matmul(&ef.vectors);
            for (c, &j) in null.iter().enumerate() {
                for a in 0..r {
                    v[(a, j)] = rotated[(a, c)];
                }
                eigs[j] = 0.0;
            }
        }
    }

    let mut beams: Vec<Vec<C64>> = (0..r)
        .map(|j| {
            let mut u = vec![C64::new(0.0, 0.0); n];
            for (a, qa) in q.iter().enumerate() {
                let coef = v[(a, j)];
                for (ui, qi) in u.iter_mut().zip(qa) {
                    *ui += qi * coef;
                }
            }
            u
        })
        .collect();
    if r < k {
        let full = complete_basis(&beams, n);
        beams.extend(full.into_iter().skip(r).take(k - r));
        eigs.resize(beams.len(), 0.0);
    }
    Ok(BeamDirections { beams, weight_eigs: eigs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct P4Solution {
    /// Beam powers, descending.
    pub lambda_q: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Uncapped minimum-power solution at `α = 1`.
    pub lambda_uncapped: Vec<f64>,
    /// Whether the sum-power cap forced scaling.
    pub capped: bool,
    /// Users with a request that no beam reaches; served with `α = 0`.
    pub relaxed: Vec<usize>,
}

/// Beam powers for fixed directions with gain matrix `A`:
/// `min Σλ` s.t. `Aλ ≥ π`, `λ₁ ≥ … ≥ λ_K ≥ 0`, then scaled to the power cap.
pub fn solve_p4_gains(a: &[Vec<f64>], e: &[f64], t_c: f64, params: &SystemParams) -> Result<P4Solution> {
    if !(t_c > 0.0) {
        return Err(Error::ChargingDisabled(t_c));
    }
    let k = e.len();
    let nb = a.first().map_or(0, Vec::len);
    let pi: Vec<f64> = e.iter().map(|ei| ei / (params.efficiency * t_c)).collect();
    let amax = a.iter().flatten().cloned().fold(0.0, f64::max);
    let pimax = pi.iter().cloned().fold(0.0, f64::max);
    let mut relaxed = Vec::new();
    let mut rows = Vec::new();
    for i in 0..k {
        if pi[i] <= 0.0 {
            continue;
        }
        if a[i].iter().all(|&v| v <= 1e-14 * amax) {
            relaxed.push(i);
            continue;
        }
        // λ_j = Σ_{m ≥ j} d_m, so (Aλ)_i = Σ_m d_m Σ_{j ≤ m} A_ij. Gains and
        // targets are normalized to O(1) for the simplex tolerances.
        let mut acc = 0.0;
        let coeffs = (0..nb)
            .map(|m| {
                acc += a[i][m] / amax;
                acc
            })
            .collect();
        rows.push(Row::new(coeffs, Relation::Ge, pi[i] / pimax));
    }
    let mut lambda0 = vec![0.0; nb];
    if !rows.is_empty() {
        let cost: Vec<f64> = (1..=nb).map(|m| m as f64).collect();
        let sol = solve_lp(&cost, &rows)?;
        let mut tail = 0.0;
        for j in (0..nb).rev() {
            tail += sol.x[j];
            lambda0[j] = tail * pimax / amax;
        }
    }
    let total: f64 = lambda0.iter().sum();
    let mut alpha = vec![1.0; k];
    for &i in &relaxed {
        alpha[i] = 0.0;
    }
    let (lambda_q, capped) = if total <= params.p_ap {
        (lambda0.clone(), false)
    } else {
        let scale = params.p_ap / total;
        let lq: Vec<f64> = lambda0.iter().map(|l| l * scale).collect();
        for i in 0..k {
            if pi[i] > 0.0 && !relaxed.contains(&i) {
                let got: f64 = (0..nb).map(|j| a[i][j] * lq[j]).sum();
                alpha[i] = (got / pi[i]).min(1.0);
            }
        }
        (lq, true)
    };
    Ok(P4Solution { lambda_q, alpha, lambda_uncapped: lambda0, capped, relaxed })
}

/// Beam powers for the given directions.
pub fn solve_p4(dirs: &BeamDirections, h: &[Vec<C64>], e: &[f64], t_c: f64, params: &SystemParams) -> Result<P4Solution> {
    solve_p4_gains(&dirs.gains(h), e, t_c, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSolution {
    pub directions: BeamDirections,
    /// Full unitary; the first `K` columns are the energy beams.
    pub u_b: CMatrix,
    pub lambda_q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w_q: CMatrix,
    pub b_matrix: CMatrix,
    /// Physical harvested energy `ξ·T_c·h_i*W_q h_i`.
    pub harvested: Vec<f64>,
    /// Harvested energy credited against each request, `min(harvested, e)`.
    pub received: Vec<f64>,
    pub duals: ChargingDuals,
    pub iterations: usize,
    pub converged: bool,
    pub capped: bool,
    pub relaxed: Vec<usize>,
}

impl BeamSolution {
    /// Assembles the covariance and energy bookkeeping for given beams and powers.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        directions: BeamDirections,
        lambda_q: Vec<f64>,
        alpha: Vec<f64>,
        duals: ChargingDuals,
        h: &[Vec<C64>],
        e: &[f64],
        t_c: f64,
        params: &SystemParams,
    ) -> Result<Self> {
        let n = h.first().map_or(0, Vec::len);
        let mut w_q = CMatrix::zeros(n, n);
        for (u, &l) in directions.beams.iter().zip(&lambda_q) {
            if l > 0.0 {
                w_q.add_outer(u, l);
            }
        }
        let a = directions.gains(h);
        let harvested: Vec<f64> = a
            .iter()
            .map(|row| params.efficiency * t_c * row.iter().zip(&lambda_q).map(|(g, l)| g * l).sum::<f64>())
            .collect();
        let received = harvested.iter().zip(e).map(|(h, &ei)| h.min(ei)).collect();
        let b_matrix = build_b(&duals, &alpha, h, t_c, params)?;
        let u_b = directions.unitary(n);
        Ok(Self {
            directions,
            u_b,
            lambda_q,
            alpha,
            w_q,
            b_matrix,
            harvested,
            received,
            duals,
            iterations: 0,
            converged: true,
            capped: false,
            relaxed: Vec::new(),
        })
    }

    /// No charging: zero covariance, nothing delivered.
    pub fn disabled(n: usize, e: &[f64]) -> Self {
        let k = e.len();
        Self {
            directions: BeamDirections { beams: Vec::new(), weight_eigs: Vec::new() },
            u_b: CMatrix::identity(n),
            lambda_q: vec![0.0; k],
            alpha: e.iter().map(|&x| if x > 0.0 { 0.0 } else { 1.0 }).collect(),
            w_q: CMatrix::zeros(n, n),
            b_matrix: CMatrix::zeros(n, n),
            harvested: vec![0.0; k],
            received: vec![0.0; k],
            duals: ChargingDuals { psi: vec![0.0; k], lambda5: 0.0 },
            iterations: 0,
            converged: true,
            capped: false,
            relaxed: Vec::new(),
        }
    }

    pub fn total_power(&self) -> f64 {
        self.lambda_q.iter().sum()
    }

    /// Beams carrying more than `threshold` W.
    pub fn active_beams(&self, threshold: f64) -> usize {
        self.lambda_q.iter().filter(|&&l| l > threshold).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P3Options {
    pub max_iters: usize,
    /// Relative duality gap at which the cutting-plane loop stops.
    pub gap_tol: f64,
    pub init: Option<ChargingDuals>,
}

impl P3Options {
    pub fn from_params(params: &SystemParams) -> Self {
        Self { max_iters: params.p3_max_iters, gap_tol: 1e-6, init: None }
    }
}

/// Default multiplier start: `ψ_i = 1/(ξ‖h_i‖²)` for users with a request.
pub fn initial_charging_duals(h: &[Vec<C64>], e: &[f64], params: &SystemParams) -> ChargingDuals {
    ChargingDuals {
        psi: h
            .iter()
            .zip(e)
            .map(|(hi, &ei)| {
                let g = norm_sqr(hi);
                if ei > 0.0 && g > 0.0 {
                    1.0 / (params.efficiency * g)
                } else {
                    0.0
                }
            })
            .collect(),
        lambda5: 0.0,
    }
}

pub fn solve_p3(h: &[Vec<C64>], e: &[f64], t_c: f64, params: &SystemParams) -> Result<BeamSolution> {
    solve_p3_with(h, e, t_c, params, &P3Options::from_params(params))
}

/// Dual ascent on the request multipliers by cutting planes. Each round
/// solves `max πᵀψ s.t. Σ ψ_i |g_i* v|² ≤ 1` over the directions collected so
/// far and adds the eigenvectors of `Σ ψ_i g_i g_i*` that violate it, so
/// `1 − 1/λ_max` bounds the relative gap. The minimum-power covariance over the
/// collected directions is diagonalized and its eigenvectors, which are the
/// null directions of `B` at the dual optimum, are priced by the beam LP.
pub fn solve_p3_with(h: &[Vec<C64>], e: &[f64], t_c: f64, params: &SystemParams, opts: &P3Options) -> Result<BeamSolution> {
    if !(t_c > 0.0) {
        return Err(Error::ChargingDisabled(t_c));
    }
    let k = h.len();
    if e.len() != k {
        return Err(Error::Dimension(format!("{} channels but {} requests", k, e.len())));
    }
    let n = h.first().map_or(0, Vec::len);
    if e.iter().all(|&x| x <= 0.0) {
        let mut sol = BeamSolution::disabled(n, e);
        sol.b_matrix = CMatrix::scaled_identity(n, t_c);
        sol.directions = beam_directions(h, &vec![0.0; k], &vec![1.0; k])?;
        sol.u_b = sol.directions.unitary(n);
        return Ok(sol);
    }

    let q = orthonormalize(h, 1e-10);
    let r = q.len();
    let coords: Vec<Vec<C64>> = h.iter().map(|hi| q.iter().map(|qa| dot(qa, hi)).collect()).collect();
    let pi: Vec<f64> = e.iter().map(|ei| ei / (params.efficiency * t_c)).collect();
    let gmax = coords.iter().map(|c| norm_sqr(c)).fold(0.0, f64::max);
    let active: Vec<usize> = (0..k).filter(|&i| pi[i] > 0.0 && norm_sqr(&coords[i]) > 1e-14 * gmax).collect();
    if active.is_empty() {
        let dirs = beam_directions(h, &vec![0.0; k], e)?;
        let p4 = solve_p4(&dirs, h, e, t_c, params)?;
        let mut sol = BeamSolution::assemble(dirs, p4.lambda_q, p4.alpha, ChargingDuals { psi: vec![0.0; k], lambda5: 0.0 }, h, e, t_c, params)?;
        sol.relaxed = p4.relaxed;
        return Ok(sol);
    }

    // The LPs see gains scaled by 1/gmax and targets by 1/pimax.
    let pimax = active.iter().map(|&i| pi[i]).fold(0.0, f64::max);
    let gain = |v: &[C64], i: usize| dot(&coords[i], v).norm_sqr() / gmax;
    let mut cuts: Vec<Vec<C64>> = active
        .iter()
        .map(|&i| {
            let norm = norm_sqr(&coords[i]).sqrt();
            coords[i].iter().map(|c| c / norm).collect()
        })
        .collect();
    if let Some(init) = opts.init.as_ref().filter(|d| d.psi.len() == k && d.psi.iter().any(|&x| x > 0.0)) {
        let mut m = CMatrix::zeros(r, r);
        for &i in &active {
            m.add_outer(&coords[i], init.psi[i]);
        }
        let eig = eigh_ascending(&m)?;
        cuts.push(eig.vectors.column(r - 1));
    }

    let cost: Vec<f64> = active.iter().map(|&i| -pi[i] / pimax).collect();
    let mut psi = vec![0.0; active.len()];
    let mut lam_max = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let rows: Vec<Row> =
            cuts.iter().map(|v| Row::new(active.iter().map(|&i| gain(v, i)).collect(), Relation::Le, 1.0)).collect();
        psi = solve_lp(&cost, &rows)?.x;
        let mut m = CMatrix::zeros(r, r);
        for (a, &i) in active.iter().enumerate() {
            if psi[a] > 0.0 {
                m.add_outer(&coords[i], psi[a] / gmax);
            }
        }
        let eig = eigh_ascending(&m)?;
        lam_max = eig.values[r - 1];
        if lam_max <= 1.0 + opts.gap_tol {
            converged = true;
            break;
        }
        let before = cuts.len();
        for j in (0..r).rev() {
            if eig.values[j] > 1.0 + 0.5 * opts.gap_tol {
                cuts.push(eig.vectors.column(j));
            }
        }
        if cuts.len() == before {
            break;
        }
    }

    // Minimum-power covariance over the collected directions.
    let rows: Vec<Row> = active
        .iter()
        .map(|&i| Row::new(cuts.iter().map(|v| gain(v, i)).collect(), Relation::Ge, pi[i] / pimax))
        .collect();
    let w = solve_lp(&vec![1.0; cuts.len()], &rows)?.x;
    let mut w_red = CMatrix::zeros(r, r);
    for (v, &wj) in cuts.iter().zip(&w) {
        if wj > 0.0 {
            w_red.add_outer(v, wj);
        }
    }
    let eig = eigh_ascending(&w_red)?;
    let mut beams: Vec<Vec<C64>> = (0..r)
        .rev()
        .map(|j| {
            let mut u = vec![C64::new(0.0, 0.0); n];
            for (a, qa) in q.iter().enumerate() {
                let coef = eig.vectors[(a, j)];
                for (ui, qi) in u.iter_mut().zip(qa) {
                    *ui += qi * coef;
                }
            }
            u
        })
        .collect();
    let mut eigs: Vec<f64> = eig.values.iter().rev().map(|v| v.max(0.0)).collect();
    if r < k {
        let full = complete_basis(&beams, n);
        beams.extend(full.into_iter().skip(r).take(k - r));
        eigs.resize(beams.len(), 0.0);
    }
    let dirs = BeamDirections { beams, weight_eigs: eigs };
    let p4 = solve_p4(&dirs, h, e, t_c, params)?;

    // Rescaled so that ξ·Σ ψ_i h_i h_i* ⪯ I, i.e. B ⪰ 0 at λ₅ = 0.
    let scale = 1.0 / (params.efficiency * lam_max.max(1.0));
    let mut dual_psi = vec![0.0; k];
    for (a, &i) in active.iter().enumerate() {
        dual_psi[i] = psi[a] * scale / gmax;
    }
    let duals = ChargingDuals { psi: dual_psi, lambda5: 0.0 };
    let mut sol = BeamSolution::assemble(dirs, p4.lambda_q, p4.alpha, duals, h, e, t_c, params)?;
    sol.iterations = iterations;
    sol.converged = converged;
    sol.capped = p4.capped;
    sol.relaxed = p4.relaxed;
    Ok(sol)
}
