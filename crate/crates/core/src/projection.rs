//! Euclidean projection onto the probability simplex and onto the
//! state-action polytope `{theta >= 0, sum theta = 1, flow balance}`.
//!
//! Polytope projection runs Dykstra's alternating projections between the
//! affine hull and the nonnegative orthant. The support of the Dykstra
//! iterate is periodically handed to a small active-set solve, which returns
//! the exact minimiser once the support is right and certifies it through
//! the KKT conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpModel, OccupancyVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

const POLISH_EVERY: usize = 8;
/// Relative norm below which a row counts as dependent on earlier ones.
const RANK_TOL: f64 = 1e-9;

/// Projects `y` onto the probability simplex by sort-and-threshold.
pub fn project_simplex(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    Ok(y.iter().map(|v| (v - shift).max(0.0)).collect())
}

/// Equality description `A theta = b` of the state-action polytope with one
/// redundant balance row removed.
#[derive(Debug, Clone)]
pub struct PolyhedronSpec {
    num_states: usize,
    num_actions: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    affine: RowSpaceSolver,
}

/// Minimum-norm solutions of `M z = r`: keeps a maximal independent row
/// subset (modified Gram-Schmidt in row order) and factors its transpose
/// by Householder QR.
#[derive(Debug, Clone)]
struct RowSpaceSolver {
    rows: Vec<usize>,
    total_rows: usize,
    m_r: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl RowSpaceSolver {
    fn new(m: &DMatrix<f64>) -> Option<Self> {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut rows = Vec::new();
        for i in 0..m.nrows() {
            let row: DVector<f64> = m.row(i).transpose();
            let norm = row.norm();
            if norm == 0.0 {
                continue;
            }
            let mut v = row;
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&v);
                    v -= q * c;
                }
            }
            let rest = v.norm();
            if rest > RANK_TOL * norm {
                basis.push(v / rest);
                rows.push(i);
            }
        }
        if rows.is_empty() {
            return None;
        }
        let m_r = m.select_rows(&rows);
        let qr = m_r.transpose().qr();
        Some(Self {
            rows,
            total_rows: m.nrows(),
            m_r,
            q: qr.q(),
            r: qr.r(),
        })
    }

    /// `(z, nu)` with `z = M^T nu` the least-norm solution of the kept rows
    /// of `M z = rhs`; dropped rows get a zero multiplier.
    fn solve(&self, rhs: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let rhs_r = rhs.select_rows(&self.rows);
        let w = self.r.transpose().solve_lower_triangular(&rhs_r)?;
        let nu_r = self.r.solve_upper_triangular(&w)?;
        let z = &self.q * w;
        let mut nu = DVector::zeros(self.total_rows);
        for (i, &row) in self.rows.iter().enumerate() {
            nu[row] = nu_r[i];
        }
        debug_assert_eq!(self.m_r.ncols(), z.len());
        Some((z, nu))
    }
}

impl PolyhedronSpec {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `||A x - b||_inf`.
    pub fn equality_residual(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).amax()
    }

    fn project_affine(&self, x: &DVector<f64>) -> DVector<f64> {
        let (z, _) = self
            .affine
            .solve(&(&self.b - &self.a * x))
            .expect("the kept rows are independent");
        x + z
    }
}

/// Builds `A, b`: a row of ones (`sum theta = 1`) followed by the balance
/// rows `sum_{s,a} theta(s,a) (P_a(s,s') - 1[s = s']) = 0` for every `s'`
/// except the last.
pub fn build_polyhedron(m: &MdpModel) -> PolyhedronSpec {
    let (ns, na) = (m.num_states(), m.num_actions());
    let n = ns * na;
    let rows = ns;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    a.row_mut(0).fill(1.0);
    b[0] = 1.0;
    for target in 0..ns.saturating_sub(1) {
        for s in 0..ns {
            for act in 0..na {
                let stay = if s == target { 1.0 } else { 0.0 };
                a[(target + 1, s * na + act)] = m.transition(act)[(s, target)] - stay;
            }
        }
    }
    let affine = RowSpaceSolver::new(&a).expect("the row of ones is nonzero");
    PolyhedronSpec {
        num_states: ns,
        num_actions: na,
        a,
        b,
        affine,
    }
}

/// Outcome of [`project_theta`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub point: OccupancyVector,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active_set_size: usize,
}

struct Certified {
    x: DVector<f64>,
    kkt: f64,
    active: usize,
}

/// Solves the equality-constrained least squares problem on `support` (all
/// other coordinates fixed at zero) and returns `(x, multipliers)`.
fn solve_on_support(
    spec: &PolyhedronSpec,
    y: &DVector<f64>,
    support: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let a_s = spec.a.select_columns(support);
    let y_s = y.select_rows(support);
    let rhs = &spec.b - &a_s * &y_s;
    let (z, nu) = RowSpaceSolver::new(&a_s)?.solve(&rhs)?;
    let x_s = y_s + z;
    let mut x = DVector::zeros(y.len());
    for (i, &j) in support.iter().enumerate() {
        x[j] = x_s[i];
    }
    Some((x, nu))
}

/// KKT residual of `x` for `min ||x - y||^2 / 2 s.t. A x = b, x >= 0` with
/// equality multipliers `nu`; bound multipliers are recovered as
/// `lambda = x - y - A^T nu` off the support and zero on it.
fn kkt_residual(
    spec: &PolyhedronSpec,
    y: &DVector<f64>,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    in_support: &[bool],
) -> f64 {
    let grad = x - y - spec.a.transpose() * nu;
    let mut worst = spec.equality_residual(x);
    for j in 0..x.len() {
        worst = worst.max(-x[j]);
        if in_support[j] {
            worst = worst.max(grad[j].abs());
        } else {
            let lambda = grad[j];
            worst = worst.max(-lambda).max((lambda * x[j]).abs());
        }
    }
    worst
}

/// Active-set refinement from an initial support guess. Returns a
/// certified exact minimiser or `None` if the guess does not lead to one.
fn polish(spec: &PolyhedronSpec, y: &DVector<f64>, guess: &[bool], tol: f64) -> Option<Certified> {
    let n = y.len();
    let mut in_support = guess.to_vec();
    for _ in 0..2 * n + 2 {
        let support: Vec<usize> = (0..n).filter(|&j| in_support[j]).collect();
        if support.is_empty() {
            return None;
        }
        let (x, nu) = solve_on_support(spec, y, &support)?;
        if spec.equality_residual(&x) > tol {
            return None;
        }
        let (neg_j, neg_v) = support
            .iter()
            .map(|&j| (j, x[j]))
            .fold((usize::MAX, 0.0), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc });
        if neg_v < -tol {
            in_support[neg_j] = false;
            continue;
        }
        let grad = &x - y - spec.a.transpose() * &nu;
        let (add_j, add_v) = (0..n)
            .filter(|&j| !in_support[j])
            .map(|j| (j, grad[j]))
            .fold((usize::MAX, 0.0), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc });
        if add_v < -tol {
            in_support[add_j] = true;
            continue;
        }
        let kkt = kkt_residual(spec, y, &x, &nu, &in_support);
        if kkt <= tol {
            let active = in_support.iter().filter(|s| !**s).count();
            return Some(Certified { x, kkt, active });
        }
        return None;
    }
    None
}

/// Projects `y` onto the polytope described by `spec` with the default
/// iteration cap.
pub fn project_theta(spec: &PolyhedronSpec, y: &[f64], tol: f64) -> Result<ProjectionReport> {
    project_theta_with_cap(spec, y, tol, DEFAULT_MAX_ITER)
}

pub fn project_theta_with_cap(
    spec: &PolyhedronSpec,
    y: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ProjectionReport> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("projection tolerance must be positive, got {tol}")));
    }
    if y.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "point has length {}, polytope dimension is {}",
            y.len(),
            spec.dim()
        )));
    }
    let y = DVector::from_column_slice(y);
    let n = y.len();

    let mut x = y.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let mut best_residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let u = spec.project_affine(&(&x + &q));
        q = &x + &q - &u;
        let shifted = &u + &p;
        x = shifted.map(|v| v.max(0.0));
        p = shifted - &x;

        if iter == 1 || iter % POLISH_EVERY == 0 {
            let from_orthant: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
            let from_affine: Vec<bool> = u.iter().map(|v| *v > 0.0).collect();
            for guess in [from_orthant, from_affine] {
                if let Some(done) = polish(spec, &y, &guess, tol) {
                    return Ok(ProjectionReport {
                        point: OccupancyVector::new(
                            spec.num_states,
                            spec.num_actions,
                            done.x.iter().copied().collect(),
                        )?,
                        iterations: iter,
                        kkt_residual: done.kkt,
                        active_set_size: done.active,
                    });
                }
            }
            best_residual = best_residual.min(spec.equality_residual(&x));
        }
    }
    Err(Error::ProjectionDiverged {
        iterations: max_iter,
        kkt_residual: best_residual,
        best: x.iter().copied().collect(),
    })
}
