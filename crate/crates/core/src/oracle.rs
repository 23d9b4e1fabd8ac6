//! Brute-force reference solvers. They share no code path with the
//! production projection or simplex routines and exist to check them, both
//! from the test suites and from [`crate::harness::verify_suite`].

use nalgebra::{DMatrix, DVector};

use crate::lp::LinearProgram;
use crate::mdp::{policy_to_theta, MdpModel, OccupancyVector, PolicyTable};
use crate::projection::PolyhedronSpec;

/// Exact projection onto `{A x = b, x >= 0}` by enumerating every zero
/// pattern, solving the equality-constrained least-squares problem on the
/// remaining coordinates and keeping the closest feasible candidate.
/// Exponential in the dimension; intended for `n <= 12`.
pub fn active_set_projection(spec: &PolyhedronSpec, y: &[f64]) -> Vec<f64> {
    let a = spec.matrix();
    let b = spec.rhs();
    let n = y.len();
    assert!(n <= 20, "active-set enumeration is exponential in n = {n}");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let a_s = a.select_columns(&support);
        let y_s = DVector::from_iterator(support.len(), support.iter().map(|&j| y[j]));
        let Some(x_s) = bordered_solve(&a_s, &y_s, b) else {
            continue;
        };
        if (&a_s * &x_s - b).amax() > 1e-9 || x_s.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (i, &j) in support.iter().enumerate() {
            x[j] = x_s[i];
        }
        let dist: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("the occupancy polytope is nonempty").1
}

/// `min ||x - y||^2 s.t. A x = b` through the KKT system
/// `[I A^T; A -eps I] (x, nu) = (y, b)`; the tiny regularisation keeps the
/// system nonsingular when rows of `A` are dependent.
fn bordered_solve(a: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    const EPS: f64 = 1e-13;
    let (p, n) = a.shape();
    let mut k = DMatrix::zeros(n + p, n + p);
    let mut rhs = DVector::zeros(n + p);
    for j in 0..n {
        k[(j, j)] = 1.0;
        rhs[j] = y[j];
    }
    for i in 0..p {
        for j in 0..n {
            k[(j, n + i)] = a[(i, j)];
            k[(n + i, j)] = a[(i, j)];
        }
        k[(n + i, n + i)] = -EPS;
        rhs[n + i] = b[i];
    }
    let sol = k.lu().solve(&rhs)?;
    Some(sol.rows(0, n).into_owned())
}

/// Optimal value of an LP by enumerating all bases of its standard form
/// (`[A 0; G I] (x, s) = (b, h)`, `x, s >= 0`). Returns `None` when no basis
/// is feasible. Assumes the constraint matrix has full row rank and the
/// feasible region is bounded.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let p = lp.a_eq.nrows();
    let q = lp.g.nrows();
    let rows = p + q;
    let cols = n + q;
    let mut m = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for i in 0..p {
        for j in 0..n {
            m[(i, j)] = lp.a_eq[(i, j)];
        }
        rhs[i] = lp.b_eq[i];
    }
    for i in 0..q {
        for j in 0..n {
            m[(p + i, j)] = lp.g[(i, j)];
        }
        m[(p + i, n + i)] = 1.0;
        rhs[p + i] = lp.h[i];
    }
    let mut best: Option<f64> = None;
    for_each_combination(cols, rows, &mut |basis| {
        let bm = m.select_columns(basis);
        let Some(xb) = bm.lu().solve(&rhs) else {
            return;
        };
        if (&m.select_columns(basis) * &xb - &rhs).amax() > 1e-9 || xb.iter().any(|v| *v < -1e-9) {
            return;
        }
        let value: f64 = basis
            .iter()
            .zip(xb.iter())
            .filter(|(j, _)| **j < n)
            .map(|(j, v)| lp.c[*j] * v)
            .sum();
        if best.is_none_or(|b| value < b) {
            best = Some(value);
        }
    });
    best
}

fn for_each_combination(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Unconstrained optimum over each polytope by scanning every pure policy:
/// `sum_k min_{pure pi} <f_k, theta_pi>`.
pub fn pure_policy_minimum(models: &[MdpModel], mean_f: &[Vec<f64>]) -> f64 {
    models
        .iter()
        .zip(mean_f)
        .map(|(m, f)| {
            (0..m.num_pure_policies())
                .map(|i| {
                    let pi = PolicyTable::pure(&m.pure_policy(i), m.num_actions());
                    let th = policy_to_theta(m, &pi).expect("unichain model");
                    dot(f, th.as_slice())
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_by_two_theta(m: &MdpModel, p0: f64, p1: f64) -> OccupancyVector {
    let probs = DMatrix::from_row_slice(2, 2, &[p0, 1.0 - p0, p1, 1.0 - p1]);
    policy_to_theta(m, &PolicyTable::new(probs).expect("valid rows")).expect("unichain model")
}

/// Grid search for the coupled problem over two 2-state/2-action MDPs:
/// `min <f_1, th_1> + <f_2, th_2>` subject to
/// `<g_i1, th_1> + <g_i2, th_2> <= 0` for every constraint `i`.
///
/// Each polytope is parameterised by the policy `(pi(0|s0), pi(0|s1))` on a
/// `1/resolution` grid; the best feasible grid point is then refined by two
/// local zooms of ten-fold finer resolution. Returns `None` if no grid
/// point is feasible.
pub fn grid_search_two_mdps(
    models: &[MdpModel; 2],
    mean_f: &[Vec<f64>; 2],
    mean_g: &[[Vec<f64>; 2]],
    resolution: usize,
) -> Option<f64> {
    assert!(models.iter().all(|m| m.num_states() == 2 && m.num_actions() == 2));
    let h = 1.0 / resolution as f64;
    let features = |k: usize, th: &OccupancyVector| -> (f64, Vec<f64>) {
        let f = dot(&mean_f[k], th.as_slice());
        let g = mean_g.iter().map(|gi| dot(&gi[k], th.as_slice())).collect();
        (f, g)
    };
    let grid = |k: usize| -> Vec<([f64; 2], f64, Vec<f64>)> {
        let mut out = Vec::with_capacity((resolution + 1).pow(2));
        for i in 0..=resolution {
            for j in 0..=resolution {
                let p = [i as f64 * h, j as f64 * h];
                let th = two_by_two_theta(&models[k], p[0], p[1]);
                let (f, g) = features(k, &th);
                out.push((p, f, g));
            }
        }
        out
    };
    let first = grid(0);
    let second = grid(1);
    let mut best: Option<(f64, [f64; 4])> = None;
    for (p1, f1, g1) in &first {
        for (p2, f2, g2) in &second {
            let value = f1 + f2;
            if best.is_some_and(|(b, _)| value >= b) {
                continue;
            }
            if g1.iter().zip(g2).all(|(a, b)| a + b <= 0.0) {
                best = Some((value, [p1[0], p1[1], p2[0], p2[1]]));
            }
        }
    }
    let (mut value, mut point) = best?;

    let mut step = h;
    for _ in 0..2 {
        let window = 2.0 * step;
        step /= 10.0;
        let cells = (2.0 * window / step).round() as usize;
        let axis = |c: f64| -> Vec<f64> {
            (0..=cells)
                .map(|i| c - window + i as f64 * step)
                .filter(|v| (0.0..=1.0).contains(v))
                .collect()
        };
        let local = |k: usize, c0: f64, c1: f64| -> Vec<([f64; 2], f64, Vec<f64>)> {
            let mut out = Vec::new();
            for a in axis(c0) {
                for b in axis(c1) {
                    let th = two_by_two_theta(&models[k], a, b);
                    let (f, g) = features(k, &th);
                    out.push(([a, b], f, g));
                }
            }
            out
        };
        let first = local(0, point[0], point[1]);
        let second = local(1, point[2], point[3]);
        for (p1, f1, g1) in &first {
            for (p2, f2, g2) in &second {
                let v = f1 + f2;
                if v < value && g1.iter().zip(g2).all(|(a, b)| a + b <= 0.0) {
                    value = v;
                    point = [p1[0], p1[1], p2[0], p2[1]];
                }
            }
        }
    }
    Some(value)
}
