//! Stationary benchmarks over the product of occupancy polytopes: the best
//! stationary policy in hindsight, its constraint-relaxed variant, the
//! Slater margin, and the closed-form constants of the regret and
//! constraint-violation bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpSolution, LpStatus};
use crate::mdp::{MdpModel, OccupancyVector};
use crate::projection::build_polyhedron;

/// Stacks the per-MDP equality blocks into one block-diagonal system.
fn stacked_equalities(models: &[MdpModel]) -> (DMatrix<f64>, Vec<f64>) {
    let specs: Vec<_> = models.iter().map(build_polyhedron).collect();
    let rows: usize = specs.iter().map(|s| s.matrix().nrows()).sum();
    let cols: usize = specs.iter().map(|s| s.dim()).sum();
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = Vec::with_capacity(rows);
    let (mut r0, mut c0) = (0, 0);
    for spec in &specs {
        let block = spec.matrix();
        a.view_mut((r0, c0), (block.nrows(), block.ncols())).copy_from(block);
        b.extend(spec.rhs().iter());
        r0 += block.nrows();
        c0 += block.ncols();
    }
    (a, b)
}

fn check_tables(models: &[MdpModel], mean_f: &[Vec<f64>], mean_g: &[Vec<Vec<f64>>]) -> Result<()> {
    if mean_f.len() != models.len() {
        return Err(Error::Dimension(format!(
            "{} penalty tables for {} models",
            mean_f.len(),
            models.len()
        )));
    }
    for (k, m) in models.iter().enumerate() {
        if mean_f[k].len() != m.num_pairs() {
            return Err(Error::Dimension(format!("penalty table {k} has wrong length")));
        }
        for (i, g) in mean_g.iter().enumerate() {
            if g.len() != models.len() || g[k].len() != m.num_pairs() {
                return Err(Error::Dimension(format!("constraint table ({i},{k}) has wrong shape")));
            }
        }
    }
    Ok(())
}

/// `min sum_k <f_k, th_k>  s.t.  sum_k <g_ik, th_k> <= slack,  th_k in Theta_k`.
pub fn coupled_lp(
    models: &[MdpModel],
    mean_f: &[Vec<f64>],
    mean_g: &[Vec<Vec<f64>>],
    slack: f64,
) -> Result<LinearProgram> {
    check_tables(models, mean_f, mean_g)?;
    let (a, b) = stacked_equalities(models);
    let c: Vec<f64> = mean_f.iter().flatten().copied().collect();
    let n = c.len();
    let rows: Vec<Vec<f64>> = mean_g
        .iter()
        .map(|gi| gi.iter().flatten().copied().collect())
        .collect();
    let g = DMatrix::from_fn(mean_g.len(), n, |i, j| rows[i][j]);
    LinearProgram::new(c, a, b, g, vec![slack; mean_g.len()])
}

/// Splits a concatenated LP point into per-MDP occupancy vectors.
pub fn split_point(models: &[MdpModel], point: &[f64]) -> Vec<OccupancyVector> {
    let mut offset = 0;
    models
        .iter()
        .map(|m| {
            let n = m.num_pairs();
            let th = point[offset..offset + n].to_vec();
            offset += n;
            OccupancyVector {
                num_states: m.num_states(),
                num_actions: m.num_actions(),
                theta: th,
            }
        })
        .collect()
}

fn require_optimal(sol: LpSolution, what: &str) -> Result<LpSolution> {
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        LpStatus::Infeasible => Err(Error::InfeasibleScenario(format!("{what} is infeasible"))),
        LpStatus::Unbounded => Err(Error::LpNumerical(format!("{what} is unbounded"))),
    }
}

/// Best stationary policy in hindsight against the time-averaged expected
/// penalty tables.
pub fn best_stationary(
    models: &[MdpModel],
    mean_f: &[Vec<f64>],
    mean_g: &[Vec<Vec<f64>>],
) -> Result<LpSolution> {
    let lp = coupled_lp(models, mean_f, mean_g, 0.0)?;
    require_optimal(solve_lp(&lp)?, "stationary benchmark")
}

/// Same program with every coupling row relaxed to `<= slack`.
pub fn relaxed_stationary(
    models: &[MdpModel],
    mean_f: &[Vec<f64>],
    mean_g: &[Vec<Vec<f64>>],
    slack: f64,
) -> Result<LpSolution> {
    if !(slack >= 0.0) {
        return Err(Error::Domain(format!("slack must be nonnegative, got {slack}")));
    }
    let lp = coupled_lp(models, mean_f, mean_g, slack)?;
    require_optimal(solve_lp(&lp)?, "relaxed benchmark")
}

/// Largest `eta` with `sum_k <g_ik, th_k> <= -eta` for all `i` over the
/// product polytope, with a witness. Infinite when there are no constraints.
pub fn slater_margin(
    models: &[MdpModel],
    mean_g: &[Vec<Vec<f64>>],
) -> Result<(f64, Vec<OccupancyVector>)> {
    let zeros: Vec<Vec<f64>> = models.iter().map(|m| vec![0.0; m.num_pairs()]).collect();
    check_tables(models, &zeros, mean_g)?;
    let (a, b) = stacked_equalities(models);
    let n: usize = zeros.iter().map(Vec::len).sum();
    if mean_g.is_empty() {
        // Any occupancy works; solve the feasibility problem for a witness.
        let lp = LinearProgram::new(vec![0.0; n], a, b, DMatrix::zeros(0, n), vec![])?;
        let sol = require_optimal(solve_lp(&lp)?, "occupancy feasibility")?;
        return Ok((f64::INFINITY, split_point(models, &sol.point)));
    }
    // Variables: theta, eta_plus, eta_minus.
    let width = n + 2;
    let mut a_ext = DMatrix::zeros(a.nrows(), width);
    a_ext.view_mut((0, 0), (a.nrows(), n)).copy_from(&a);
    let mut g = DMatrix::zeros(mean_g.len(), width);
    for (i, gi) in mean_g.iter().enumerate() {
        for (j, v) in gi.iter().flatten().enumerate() {
            g[(i, j)] = *v;
        }
        g[(i, n)] = 1.0;
        g[(i, n + 1)] = -1.0;
    }
    let mut c = vec![0.0; width];
    c[n] = -1.0;
    c[n + 1] = 1.0;
    let lp = LinearProgram::new(c, a_ext, b, g, vec![0.0; mean_g.len()])?;
    let sol = require_optimal(solve_lp(&lp)?, "slater margin program")?;
    let eta = sol.point[n] - sol.point[n + 1];
    Ok((eta, split_point(models, &sol.point[..n])))
}

/// Relaxed-versus-original benchmark comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub original: f64,
    pub relaxed: f64,
    pub slack: f64,
    /// `original - relaxed`, nonnegative by feasible-set monotonicity.
    pub gap: f64,
    /// `sum_i mu_i * slack` with the original program's multipliers; exact
    /// while the optimal basis is unchanged.
    pub dual_bound: f64,
    /// `slack * sqrt(m) * K * Psi / eta`.
    pub tight_bound: f64,
    /// `2 * slack * sqrt(m) * K * Psi / eta`, the multiplier bound that also
    /// covers penalties of either sign.
    pub multiplier_bound: f64,
    pub within_tight_bound: bool,
}

/// Solves both programs and checks `0 <= original - relaxed <= multiplier_bound`.
/// A violation beyond `1e-6` is reported as a hard failure.
pub fn perturbation_gap_check(
    models: &[MdpModel],
    mean_f: &[Vec<f64>],
    mean_g: &[Vec<Vec<f64>>],
    psi: f64,
    eta: f64,
    slack: f64,
) -> Result<GapReport> {
    if !(eta > 0.0) {
        return Err(Error::Slater { eta });
    }
    let original = best_stationary(models, mean_f, mean_g)?;
    let relaxed = relaxed_stationary(models, mean_f, mean_g, slack)?;
    let gap = original.value - relaxed.value;
    let k = models.len() as f64;
    let root_m = (mean_g.len() as f64).sqrt();
    let tight_bound = slack * root_m * k * psi / eta;
    let multiplier_bound = 2.0 * tight_bound;
    let dual_bound = original.duals.iter().sum::<f64>() * slack;
    let report = GapReport {
        original: original.value,
        relaxed: relaxed.value,
        slack,
        gap,
        dual_bound,
        tight_bound,
        multiplier_bound,
        within_tight_bound: gap <= tight_bound + 1e-6,
    };
    if gap < -1e-6 || gap > multiplier_bound + 1e-6 {
        return Err(Error::Invariant {
            module: "baseline-lp",
            name: "perturbation-gap",
            slot: None,
            detail: format!(
                "gap {gap:e} outside [0, {multiplier_bound:e}] (original {}, relaxed {})",
                original.value, relaxed.value
            ),
        });
    }
    Ok(report)
}

/// Closed-form constants from the queue, regret and violation bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub m: usize,
    pub k: usize,
    pub psi: f64,
    pub eta: f64,
    pub horizon: usize,
    /// `C(m, K, Psi, eta)`: `E||Q(t)||_2 <= C sqrt(T)`.
    pub queue_constant: f64,
    /// Stationary regret `<= regret_constant * sqrt(T)`.
    pub regret_constant: f64,
    /// Stationary constraint violation `<= violation_constant * sqrt(T)`.
    pub violation_constant: f64,
}

impl TheoryConstants {
    pub fn queue_bound(&self) -> f64 {
        self.queue_constant * (self.horizon as f64).sqrt()
    }

    pub fn regret_bound(&self) -> f64 {
        self.regret_constant * (self.horizon as f64).sqrt()
    }

    pub fn violation_bound(&self) -> f64 {
        self.violation_constant * (self.horizon as f64).sqrt()
    }
}

/// `C(m,K,Psi,eta) = 8K Psi/eta + 3mK^2 Psi^2/eta^2 + (4K + m Psi)/eta
///   + 2mK Psi + eta + 4 sqrt(m) K Psi ln(1 + 8 e^{1/4})`.
pub fn queue_constant(m: usize, k: usize, psi: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let (m, k) = (m as f64, k as f64);
    Ok(8.0 * k * psi / eta
        + 3.0 * m * k * k * psi * psi / (eta * eta)
        + (4.0 * k + m * psi) / eta
        + 2.0 * m * k * psi
        + eta
        + 4.0 * m.sqrt() * k * psi * (1.0 + 8.0 * 0.25f64.exp()).ln())
}

/// All bound constants for MDPs with `pairs[k] = |S_k| |A_k|`.
pub fn theory_constants(
    m: usize,
    pairs: &[usize],
    psi: f64,
    eta: f64,
    horizon: usize,
) -> Result<TheoryConstants> {
    let k = pairs.len();
    let c = queue_constant(m, k, psi, eta)?;
    let sum_pairs: f64 = pairs.iter().map(|&p| p as f64).sum();
    let regret_constant =
        2.0 * k as f64 + psi * psi / 2.0 * sum_pairs + 2.5 * m as f64 * (k * k) as f64 * psi * psi;
    let violation_constant = c
        + pairs
            .iter()
            .map(|&p| (m as f64 * p as f64).sqrt() * psi * c)
            .sum::<f64>()
        + sum_pairs * psi * psi;
    Ok(TheoryConstants {
        m,
        k,
        psi,
        eta,
        horizon,
        queue_constant: c,
        regret_constant,
        violation_constant,
    })
}
