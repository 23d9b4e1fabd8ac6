//! Finite MDP data model, policy/occupancy algebra and mixing diagnostics.
//!
//! Occupancy vectors are laid out state-major: entry `s * |A| + a` holds the
//! stationary probability of being in state `s` and playing action `a`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance used when validating stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// State marginals below this are treated as unvisited by [`theta_to_policy`].
pub const ZERO_MASS: f64 = 1e-12;

const POWER_ITER_CAP: usize = 1_000_000;
const STATIONARY_RESIDUAL: f64 = 1e-10;
const ENUMERATION_LIMIT: f64 = 1e6;
const SAMPLED_SEQUENCES: usize = 10_000;

/// A finite MDP: one row-stochastic `|S| x |S|` matrix per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct MdpModel {
    num_states: usize,
    num_actions: usize,
    kernel: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    num_states: usize,
    num_actions: usize,
    kernel: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawMdp> for MdpModel {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        let model = MdpModel::from_rows(raw.kernel)?;
        if model.num_states != raw.num_states || model.num_actions != raw.num_actions {
            return Err(Error::InvalidModel(format!(
                "declared {}x{} but kernel is {}x{}",
                raw.num_states, raw.num_actions, model.num_states, model.num_actions
            )));
        }
        Ok(model)
    }
}

impl From<MdpModel> for RawMdp {
    fn from(m: MdpModel) -> Self {
        let kernel = m
            .kernel
            .iter()
            .map(|p| {
                (0..m.num_states)
                    .map(|s| p.row(s).iter().copied().collect())
                    .collect()
            })
            .collect();
        RawMdp {
            num_states: m.num_states,
            num_actions: m.num_actions,
            kernel,
        }
    }
}

fn validate_stochastic(p: &DMatrix<f64>, what: &str) -> Result<()> {
    for (s, row) in p.row_iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidModel(format!("{what} row {s} has entry {v}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidModel(format!(
                "{what} row {s} sums to {sum:.15}"
            )));
        }
    }
    Ok(())
}

impl MdpModel {
    /// Builds a model from per-action transition matrices, validating shapes
    /// and stochasticity.
    pub fn new(kernel: Vec<DMatrix<f64>>) -> Result<Self> {
        let num_actions = kernel.len();
        if num_actions == 0 {
            return Err(Error::InvalidModel("no actions".into()));
        }
        let num_states = kernel[0].nrows();
        if num_states == 0 {
            return Err(Error::InvalidModel("no states".into()));
        }
        for (a, p) in kernel.iter().enumerate() {
            if p.nrows() != num_states || p.ncols() != num_states {
                return Err(Error::InvalidModel(format!(
                    "P_{a} is {}x{}, expected {num_states}x{num_states}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            validate_stochastic(p, &format!("P_{a}"))?;
        }
        Ok(Self {
            num_states,
            num_actions,
            kernel,
        })
    }

    /// Builds a model from nested `[action][state][next_state]` rows.
    pub fn from_rows(kernel: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mats = kernel
            .into_iter()
            .enumerate()
            .map(|(a, rows)| {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidModel(format!("P_{a} is not square")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `|S| * |A|`, the length of an occupancy vector.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.kernel[action]
    }

    pub fn kernel(&self) -> &[DMatrix<f64>] {
        &self.kernel
    }

    /// Number of deterministic stationary policies, `|A|^|S|`.
    pub fn num_pure_policies(&self) -> usize {
        self.num_actions.pow(self.num_states as u32)
    }

    /// Transition matrix of the pure policy playing `choice[s]` in state `s`.
    pub fn pure_policy_matrix(&self, choice: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_states, self.num_states, |s, t| {
            self.kernel[choice[s]][(s, t)]
        })
    }

    /// Decodes pure policy number `index` (mixed radix `|A|`, state 0 least
    /// significant) into per-state action choices.
    pub fn pure_policy(&self, mut index: usize) -> Vec<usize> {
        (0..self.num_states)
            .map(|_| {
                let a = index % self.num_actions;
                index /= self.num_actions;
                a
            })
            .collect()
    }
}

/// Conditional action distribution `pi(a|s)`, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    probs: DMatrix<f64>,
}

impl PolicyTable {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum:.15}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    pub fn pure(choice: &[usize], num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_fn(choice.len(), num_actions, |s, a| {
                if choice[s] == a {
                    1.0
                } else {
                    0.0
                }
            }),
        }
    }

    /// A policy with i.i.d. uniform-on-the-simplex rows.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut probs = DMatrix::zeros(num_states, num_actions);
        for s in 0..num_states {
            let row = random_distribution(num_actions, rng);
            for a in 0..num_actions {
                probs[(s, a)] = row[a];
            }
        }
        Self { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Draws an action from `pi(.|s)` by inverse CDF.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.probs.row(s).iter().copied(), rng)
    }
}

/// Stationary state-action probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyVector {
    pub num_states: usize,
    pub num_actions: usize,
    pub theta: Vec<f64>,
}

impl OccupancyVector {
    pub fn new(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "occupancy length {} != {num_states}*{num_actions}",
                theta.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            theta,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.theta[s * self.num_actions + a]
    }

    pub fn state_marginal(&self, s: usize) -> f64 {
        self.theta[s * self.num_actions..(s + 1) * self.num_actions]
            .iter()
            .sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// `max_s' |sum_{s,a} theta(s,a) P_a(s,s') - sum_a theta(s',a)|`.
    pub fn balance_residual(&self, m: &MdpModel) -> f64 {
        let mut inflow = vec![0.0; m.num_states];
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                let th = self.get(s, a);
                let p = m.transition(a);
                for (t, slot) in inflow.iter_mut().enumerate() {
                    *slot += th * p[(s, t)];
                }
            }
        }
        inflow
            .iter()
            .enumerate()
            .map(|(t, v)| (v - self.state_marginal(t)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation among nonnegativity, normalisation and balance.
    pub fn feasibility_residual(&self, m: &MdpModel) -> f64 {
        let neg = self.theta.iter().fold(0.0f64, |acc, v| acc.max(-v));
        let sum = (self.theta.iter().sum::<f64>() - 1.0).abs();
        neg.max(sum).max(self.balance_residual(m))
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(pub Vec<f64>);

impl StateDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Constructive mixing constants: every product of `r` policy matrices
/// contracts l1 distances between distributions by `1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub r: usize,
    pub tau: f64,
    pub delta: f64,
    /// False when the positivity scan was sampled rather than exhaustive.
    pub exhaustive: bool,
}

impl MixingEstimate {
    fn from_delta(r: usize, delta: f64, exhaustive: bool) -> Self {
        let delta = delta.min(1.0);
        let tau = if delta < 1.0 {
            -1.0 / (1.0 - delta).ln()
        } else {
            0.0
        };
        Self {
            r,
            tau,
            delta,
            exhaustive,
        }
    }

    /// `e^{-1/tau}`, which equals `1 - delta` (0 when `delta == 1`).
    pub fn contraction_factor(&self) -> f64 {
        if self.delta >= 1.0 {
            0.0
        } else {
            (-1.0 / self.tau).exp()
        }
    }
}

/// `P_pi(s,s') = sum_a pi(a|s) P_a(s,s')`.
pub fn policy_transition_matrix(m: &MdpModel, p: &PolicyTable) -> Result<DMatrix<f64>> {
    if p.num_states() != m.num_states || p.num_actions() != m.num_actions {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, model is {}x{}",
            p.num_states(),
            p.num_actions(),
            m.num_states,
            m.num_actions
        )));
    }
    let n = m.num_states;
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..m.num_actions {
            let w = p.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let row = m.kernel[a].row(s);
            for t in 0..n {
                out[(s, t)] += w * row[t];
            }
        }
    }
    Ok(out)
}

fn l1_residual(d: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let next = p.tr_mul(d);
    (next - d).lp_norm(1)
}

/// Stationary distribution of a stochastic matrix: power iteration, then a
/// dense solve of `d (I - P + 1 1^T) = 1^T` if iteration stalls.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<StateDistribution> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Dimension(format!(
            "stationary_distribution needs a square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let pt = p.transpose();
    let mut d = DVector::zeros(n);
    d[0] = 1.0;
    let mut next = DVector::zeros(n);
    for _ in 0..POWER_ITER_CAP {
        pt.mul_to(&d, &mut next);
        let diff = (&next - &d).lp_norm(1);
        std::mem::swap(&mut d, &mut next);
        if diff <= 1e-15 * n as f64 {
            break;
        }
    }
    let s: f64 = d.sum();
    d /= s;
    if l1_residual(&d, p) <= STATIONARY_RESIDUAL {
        return Ok(StateDistribution(d.iter().copied().collect()));
    }

    let mut lhs = DMatrix::<f64>::identity(n, n) - p + DMatrix::from_element(n, n, 1.0);
    lhs.transpose_mut();
    let rhs = DVector::from_element(n, 1.0);
    let solved = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::StationaryNotFound { residual: f64::INFINITY })?;
    let residual = l1_residual(&solved, p);
    let sum = solved.sum();
    if residual > STATIONARY_RESIDUAL
        || (sum - 1.0).abs() > 1e-9
        || solved.iter().any(|v| *v < -1e-12)
    {
        return Err(Error::StationaryNotFound { residual });
    }
    Ok(StateDistribution(
        solved.iter().map(|v| v.max(0.0) / sum).collect(),
    ))
}

/// Recovers `pi(a|s) = theta(s,a) / sum_a theta(s,a)`; states with marginal
/// below [`ZERO_MASS`] get the uniform row. Tiny negative entries left by a
/// projection are clamped to zero.
pub fn theta_to_policy(m: &MdpModel, th: &OccupancyVector) -> PolicyTable {
    let (ns, na) = (m.num_states, m.num_actions);
    let probs = DMatrix::from_fn(ns, na, |s, a| {
        let row = &th.theta[s * na..(s + 1) * na];
        let mass: f64 = row.iter().map(|v| v.max(0.0)).sum();
        if mass >= ZERO_MASS {
            row[a].max(0.0) / mass
        } else {
            1.0 / na as f64
        }
    });
    PolicyTable { probs }
}

/// `theta(s,a) = pi(a|s) d_pi(s)`.
pub fn policy_to_theta(m: &MdpModel, p: &PolicyTable) -> Result<OccupancyVector> {
    let pp = policy_transition_matrix(m, p)?;
    let d = stationary_distribution(&pp)?;
    let na = m.num_actions;
    let theta = (0..m.num_pairs())
        .map(|i| p.prob(i / na, i % na) * d.0[i / na])
        .collect();
    OccupancyVector::new(m.num_states, na, theta)
}

/// Stationary occupancies of every pure policy, indexed like
/// [`MdpModel::pure_policy`]. These are the vertices of the occupancy
/// polytope.
pub fn pure_policy_occupancies(m: &MdpModel) -> Result<Vec<OccupancyVector>> {
    (0..m.num_pure_policies())
        .map(|i| policy_to_theta(m, &PolicyTable::pure(&m.pure_policy(i), m.num_actions)))
        .collect()
}

fn min_entry(p: &DMatrix<f64>) -> f64 {
    p.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Minimum entry over all products of `r` pure-policy matrices, with the
/// sequence that attains it.
fn exhaustive_min_product(pure: &[DMatrix<f64>], r: usize) -> (f64, Vec<usize>) {
    fn walk(
        pure: &[DMatrix<f64>],
        prefix: &DMatrix<f64>,
        depth: usize,
        seq: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if depth == 0 {
            let v = min_entry(prefix);
            if v < best.0 {
                *best = (v, seq.clone());
            }
            return;
        }
        for (i, p) in pure.iter().enumerate() {
            seq.push(i);
            walk(pure, &(prefix * p), depth - 1, seq, best);
            seq.pop();
        }
    }
    let n = pure[0].nrows();
    let mut best = (f64::INFINITY, Vec::new());
    walk(pure, &DMatrix::identity(n, n), r, &mut Vec::new(), &mut best);
    best
}

fn sampled_min_product(pure: &[DMatrix<f64>], r: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = pure[0].nrows();
    let mut best = (f64::INFINITY, Vec::new());
    for _ in 0..SAMPLED_SEQUENCES {
        let seq: Vec<usize> = (0..r).map(|_| rng.random_range(0..pure.len())).collect();
        let prod = seq
            .iter()
            .fold(DMatrix::identity(n, n), |acc, &i| acc * &pure[i]);
        let v = min_entry(&prod);
        if v < best.0 {
            best = (v, seq);
        }
    }
    best
}

/// Finds the smallest `r <= r_max` such that every product of `r`
/// pure-policy matrices is entrywise positive, and returns
/// `delta = |S| * min entry`, `tau = -1/ln(1 - delta)`.
///
/// Products are enumerated exhaustively while `|A|^(|S| r) <= 10^6`;
/// beyond that 10^4 random sequences are scanned and the estimate is
/// flagged as non-exhaustive.
pub fn check_unichain(m: &MdpModel, r_max: usize) -> Result<MixingEstimate> {
    if r_max == 0 {
        return Err(Error::Domain("r_max must be at least 1".into()));
    }
    let pure: Vec<DMatrix<f64>> = (0..m.num_pure_policies())
        .map(|i| m.pure_policy_matrix(&m.pure_policy(i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d69_7869_6e67);
    let mut witness = Vec::new();
    for r in 1..=r_max {
        let count = (pure.len() as f64).powi(r as i32);
        let exhaustive = count <= ENUMERATION_LIMIT;
        let (min, seq) = if exhaustive {
            exhaustive_min_product(&pure, r)
        } else {
            sampled_min_product(&pure, r, &mut rng)
        };
        if min > 0.0 {
            return Ok(MixingEstimate::from_delta(
                r,
                m.num_states as f64 * min,
                exhaustive,
            ));
        }
        witness = seq;
    }
    Err(Error::NotUnichain {
        r_max,
        witness: witness.into_iter().map(|i| m.pure_policy(i)).collect(),
    })
}

/// Uniform draw from the probability simplex (normalised exponentials).
pub fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Largest observed `||(d1 - d2) P_{pi_1} ... P_{pi_r}||_1 / ||d1 - d2||_1`
/// over random distributions and random policy sequences of length `est.r`.
pub fn mixing_contraction_check(
    m: &MdpModel,
    est: &MixingEstimate,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.num_states;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let d1 = DVector::from_vec(random_distribution(n, &mut rng));
        let d2 = DVector::from_vec(random_distribution(n, &mut rng));
        let diff = &d1 - &d2;
        let before = diff.lp_norm(1);
        if before == 0.0 {
            continue;
        }
        let mut x = diff.transpose();
        for _ in 0..est.r {
            let pi = PolicyTable::random(n, m.num_actions, &mut rng);
            let p = policy_transition_matrix(m, &pi).expect("shapes agree by construction");
            x *= p;
        }
        worst = worst.max(x.lp_norm(1) / before);
    }
    worst
}

fn sample_index<I: IntoIterator<Item = f64>, R: Rng + ?Sized>(weights: I, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just below u.
    last_positive
}

/// Draws `s'` from `P_a(s, .)`.
pub fn sample_next_state<R: Rng + ?Sized>(
    m: &MdpModel,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<usize> {
    if s >= m.num_states {
        return Err(Error::Index {
            index: s,
            size: m.num_states,
        });
    }
    if a >= m.num_actions {
        return Err(Error::Index {
            index: a,
            size: m.num_actions,
        });
    }
    Ok(sample_index(m.kernel[a].row(s).iter().copied(), rng))
}
