//! Dense two-phase simplex with Bland's rule.
//!
//! Solves `min c^T x  s.t.  A x = b,  G x <= h,  x >= 0`. Inequality rows get
//! slack columns; every row gets an artificial column for phase one. The
//! artificial columns stay in the tableau during phase two (barred from
//! entering) so the final basis inverse, and with it the duals, can be read
//! off directly. Final primal and dual values are recomputed from the
//! original data through an LU solve of the optimal basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-10;
const COST_EPS: f64 = 1e-10;
const PHASE1_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: Vec<f64>,
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
}

impl LinearProgram {
    pub fn new(
        c: Vec<f64>,
        a_eq: DMatrix<f64>,
        b_eq: Vec<f64>,
        g: DMatrix<f64>,
        h: Vec<f64>,
    ) -> Result<Self> {
        let n = c.len();
        let a_eq = if a_eq.nrows() == 0 { DMatrix::zeros(0, n) } else { a_eq };
        let g = if g.nrows() == 0 { DMatrix::zeros(0, n) } else { g };
        if a_eq.ncols() != n || g.ncols() != n {
            return Err(Error::Dimension(format!(
                "objective has {n} entries but constraint blocks have {} and {} columns",
                a_eq.ncols(),
                g.ncols()
            )));
        }
        if a_eq.nrows() != b_eq.len() || g.nrows() != h.len() {
            return Err(Error::Dimension("right-hand side length mismatch".into()));
        }
        let finite = c.iter().chain(&b_eq).chain(&h).all(|v| v.is_finite())
            && a_eq.iter().chain(g.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("LP data must be finite".into()));
        }
        Ok(Self { c, a_eq, b_eq, g, h })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Largest violation of `A x = b`, `G x <= h`, `x >= 0`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let eq = (&self.a_eq * &xv - DVector::from_column_slice(&self.b_eq))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let ineq = (&self.g * &xv - DVector::from_column_slice(&self.h))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(*v));
        let neg = x.iter().fold(0.0f64, |acc, v| acc.max(-v));
        eq.max(ineq).max(neg)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Primal and dual objective after one phase-two pivot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DualitySnapshot {
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
    /// Multipliers `mu >= 0` of the inequality rows `G x <= h`.
    pub duals: Vec<f64>,
    /// Free multipliers of the equality rows (sign convention `c - A^T y >= 0`).
    pub eq_duals: Vec<f64>,
    pub basis: Vec<usize>,
    pub pivots: usize,
    pub snapshots: Vec<DualitySnapshot>,
}

impl LpSolution {
    fn without_point(status: LpStatus, pivots: usize) -> Self {
        let value = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        Self {
            status,
            value,
            point: Vec::new(),
            duals: Vec::new(),
            eq_duals: Vec::new(),
            basis: Vec::new(),
            pivots,
            snapshots: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

struct Tableau {
    /// `rows x (cols + 1)`; last column is the right-hand side.
    t: DMatrix<f64>,
    /// Objective row, length `cols + 1`; last entry is `-objective`.
    obj: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.cols + 1;
        let p = self.t[(row, col)];
        for j in 0..width {
            self.t[(row, j)] /= p;
        }
        for r in 0..self.t.nrows() {
            if r == row {
                continue;
            }
            let f = self.t[(r, col)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(row, j)];
                    self.t[(r, j)] -= f * v;
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..width {
                self.obj[j] -= f * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let width = self.cols + 1;
        self.obj = cost.to_vec();
        self.obj.push(0.0);
        for r in 0..self.t.nrows() {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..width {
                    self.obj[j] -= cb * self.t[(r, j)];
                }
            }
        }
    }

    fn rhs(&self, row: usize) -> f64 {
        self.t[(row, self.cols)]
    }

    /// Bland's rule: lowest-index improving column, ties in the ratio test
    /// broken by lowest basic index.
    fn run(
        &mut self,
        allowed: usize,
        pivots: &mut usize,
        mut on_pivot: impl FnMut(&Tableau),
    ) -> Result<bool> {
        loop {
            let Some(col) = (0..allowed).find(|&j| self.obj[j] < -COST_EPS) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.nrows() {
                let a = self.t[(r, col)];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.pivot(row, col);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::LpNumerical(format!(
                    "pivot cap {MAX_PIVOTS} exceeded despite Bland's rule"
                )));
            }
            on_pivot(self);
        }
    }
}

/// Solves the LP, returning a certified status.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    let p = lp.a_eq.nrows();
    let q = lp.g.nrows();
    let rows = p + q;
    let structural = n + q;
    let cols = structural + rows;

    // Standard form [A 0; G I] with rows flipped so rhs >= 0.
    let mut full = DMatrix::zeros(rows, structural);
    let mut rhs = vec![0.0; rows];
    let mut sign = vec![1.0; rows];
    for i in 0..p {
        for j in 0..n {
            full[(i, j)] = lp.a_eq[(i, j)];
        }
        rhs[i] = lp.b_eq[i];
    }
    for i in 0..q {
        for j in 0..n {
            full[(p + i, j)] = lp.g[(i, j)];
        }
        full[(p + i, n + i)] = 1.0;
        rhs[p + i] = lp.h[i];
    }
    for i in 0..rows {
        if rhs[i] < 0.0 {
            sign[i] = -1.0;
            rhs[i] = -rhs[i];
            for j in 0..structural {
                full[(i, j)] = -full[(i, j)];
            }
        }
    }

    let mut t = DMatrix::zeros(rows, cols + 1);
    for i in 0..rows {
        for j in 0..structural {
            t[(i, j)] = full[(i, j)];
        }
        t[(i, structural + i)] = 1.0;
        t[(i, cols)] = rhs[i];
    }
    let mut tab = Tableau {
        t,
        obj: Vec::new(),
        basis: (structural..cols).collect(),
        cols,
    };
    let mut pivots = 0;

    // Phase one: minimise the sum of artificials.
    let mut phase1_cost = vec![0.0; cols];
    phase1_cost[structural..].fill(1.0);
    tab.set_objective(&phase1_cost);
    tab.run(cols, &mut pivots, |_| {})?;
    let infeasibility: f64 = (0..rows)
        .filter(|&r| tab.basis[r] >= structural)
        .map(|r| tab.rhs(r))
        .sum();
    if infeasibility > PHASE1_EPS {
        return Ok(LpSolution::without_point(LpStatus::Infeasible, pivots));
    }

    // Drive zero-level artificials out of the basis; rows that cannot be
    // cleared are redundant and dropped.
    let mut redundant = vec![false; rows];
    #[allow(clippy::needless_range_loop)]
    for r in 0..rows {
        if tab.basis[r] < structural {
            continue;
        }
        match (0..structural).find(|&j| tab.t[(r, j)].abs() > 1e-9) {
            Some(j) => {
                tab.pivot(r, j);
                pivots += 1;
            }
            None => redundant[r] = true,
        }
    }

    // Phase two.
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.c);
    tab.set_objective(&cost);
    let mut snapshots = Vec::new();
    let snapshot = |tab: &Tableau, snaps: &mut Vec<DualitySnapshot>| {
        let primal = -tab.obj[cols];
        let dual: f64 = (0..rows).map(|r| -tab.obj[structural + r] * rhs[r]).sum();
        snaps.push(DualitySnapshot { primal, dual });
    };
    snapshot(&tab, &mut snapshots);
    let bounded = tab.run(structural, &mut pivots, |tab| snapshot(tab, &mut snapshots))?;
    if !bounded {
        let mut sol = LpSolution::without_point(LpStatus::Unbounded, pivots);
        sol.snapshots = snapshots;
        return Ok(sol);
    }

    // Recompute primal and dual values from the original data.
    let kept: Vec<usize> = (0..rows).filter(|&r| !redundant[r]).collect();
    let basic: Vec<usize> = kept.iter().map(|&r| tab.basis[r]).collect();
    let full_with_art = {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..structural {
                m[(i, j)] = full[(i, j)];
            }
            m[(i, structural + i)] = 1.0;
        }
        m
    };
    let b_mat = DMatrix::from_fn(kept.len(), basic.len(), |i, k| full_with_art[(kept[i], basic[k])]);
    let rhs_kept = DVector::from_iterator(kept.len(), kept.iter().map(|&r| rhs[r]));
    let cost_b = DVector::from_iterator(basic.len(), basic.iter().map(|&j| cost[j]));
    let lu = b_mat.clone().lu();
    let (x_b, y_kept) = match (lu.solve(&rhs_kept), b_mat.transpose().lu().solve(&cost_b)) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::LpNumerical("optimal basis is singular".into()));
        }
    };
    let mut x_all = vec![0.0; cols];
    for (k, &j) in basic.iter().enumerate() {
        x_all[j] = x_b[k].max(0.0);
    }
    let mut y = vec![0.0; rows];
    for (i, &r) in kept.iter().enumerate() {
        y[r] = y_kept[i] * sign[r];
    }
    let point = x_all[..n].to_vec();
    let eq_duals = y[..p].to_vec();
    let duals = y[p..].iter().map(|v| (-v).max(0.0)).collect();
    let value = lp.objective(&point);
    let mut basis = basic;
    basis.sort_unstable();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        value,
        point,
        duals,
        eq_duals,
        basis,
        pivots,
        snapshots,
    })
}
