//! Dense two-phase simplex with Bland's rule for small linear programs
//! `min cᵀx` subject to linear rows and `x ≥ 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    m: usize,
    width: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.width]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, line) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                line[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Runs Bland's rule on the objective row over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, pivots: &mut usize) -> Result<()> {
        let obj = self.m;
        loop {
            let entering = (0..allowed).find(|&j| self.t[obj][j] < -1e-11);
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-14 * bratio.abs().max(1.0)
                                || (ratio <= bratio + 1e-14 * bratio.abs().max(1.0) && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else { return Err(Error::LpUnbounded) };
            self.pivot(row, col);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::Infeasible("simplex pivot limit reached".into()));
            }
        }
    }
}

/// Solves `min cᵀx` over `rows` with `x ≥ 0`.
pub fn solve_lp(cost: &[f64], rows: &[Row]) -> Result<LpSolution> {
    let n = cost.len();
    for (i, r) in rows.iter().enumerate() {
        if r.coeffs.len() != n {
            return Err(Error::Dimension(format!("row {i} has {} coefficients, expected {n}", r.coeffs.len())));
        }
        if r.coeffs.iter().any(|v| !v.is_finite()) || !r.rhs.is_finite() {
            return Err(Error::Dimension(format!("row {i} has non-finite entries")));
        }
    }
    let m = rows.len();
    // Normalize rows and make every rhs nonnegative.
    let mut norm_rows: Vec<(Vec<f64>, Relation, f64)> = rows
        .iter()
        .map(|r| {
            let scale = r.coeffs.iter().fold(r.rhs.abs(), |a, v| a.max(v.abs()));
            let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
            let mut coeffs: Vec<f64> = r.coeffs.iter().map(|v| v * s).collect();
            let mut rhs = r.rhs * s;
            let mut rel = r.relation;
            if rhs < 0.0 {
                coeffs.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            (coeffs, rel, rhs)
        })
        .collect();

    let n_slack = norm_rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = norm_rows.iter().filter(|r| r.1 != Relation::Le).count();
    let width = n + n_slack + n_art;
    let mut t = vec![vec![0.0; width + 1]; m + 1];
    let mut basis = vec![0; m];
    let mut slack_col = n;
    let mut art_col = n + n_slack;
    for (r, (coeffs, rel, rhs)) in norm_rows.drain(..).enumerate() {
        t[r][..n].copy_from_slice(&coeffs);
        t[r][width] = rhs;
        match rel {
            Relation::Le => {
                t[r][slack_col] = 1.0;
                basis[r] = slack_col;
                slack_col += 1;
            }
            Relation::Ge => {
                t[r][slack_col] = -1.0;
                slack_col += 1;
                t[r][art_col] = 1.0;
                basis[r] = art_col;
                art_col += 1;
            }
            Relation::Eq => {
                t[r][art_col] = 1.0;
                basis[r] = art_col;
                art_col += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, m, width };
    let mut pivots = 0;

    // Phase 1: minimize the sum of artificials.
    let art_start = n + n_slack;
    if n_art > 0 {
        for j in art_start..width {
            tab.t[m][j] = 1.0;
        }
        for r in 0..m {
            if tab.basis[r] >= art_start {
                for j in 0..=width {
                    let v = tab.t[r][j];
                    tab.t[m][j] -= v;
                }
            }
        }
        tab.optimize(width, &mut pivots)?;
        let infeas = -tab.t[m][width];
        if infeas > 1e-9 {
            return Err(Error::LpInfeasible);
        }
        // Drive zero-level artificials out of the basis.
        for r in 0..m {
            if tab.basis[r] >= art_start {
                if let Some(col) = (0..art_start).find(|&j| tab.t[r][j].abs() > 1e-9) {
                    tab.pivot(r, col);
                    pivots += 1;
                }
            }
        }
    }

    // Phase 2 over the original and slack columns only.
    for j in 0..=width {
        tab.t[m][j] = 0.0;
    }
    tab.t[m][..n].copy_from_slice(cost);
    for r in 0..m {
        let b = tab.basis[r];
        let cb = tab.t[m][b];
        if cb != 0.0 && b < art_start {
            for j in 0..=width {
                let v = tab.t[r][j];
                tab.t[m][j] -= cb * v;
            }
        }
    }
    tab.optimize(art_start, &mut pivots)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective, pivots })
}
