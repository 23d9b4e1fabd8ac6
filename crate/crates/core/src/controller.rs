//! The online controller: virtual queues, per-MDP proximal projection steps,
//! policy recovery and action selection.
//!
//! A slot is split into two calls. [`ControllerState::decide`] fixes
//! `theta_t` using only slot `t - 1` functions and samples actions;
//! [`ControllerState::reveal`] then hands over the slot `t` functions and
//! advances the queues. Calling them out of order is a sequencing error.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    check_unichain, policy_to_theta, pure_policy_occupancies, theta_to_policy, MdpModel, OccupancyVector,
    PolicyTable,
};
use crate::projection::{build_polyhedron, project_theta, PolyhedronSpec, DEFAULT_TOL};
use crate::scenario::FunctionSample;

/// Horizon up to which the unichain check in [`init_controller`] runs.
const UNICHAIN_R_MAX: usize = 8;
/// Run per-MDP projections on the rayon pool from this many MDPs on.
const PARALLEL_MDPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub v: f64,
    pub alpha: f64,
    pub horizon: usize,
}

impl ControllerParams {
    pub fn new(v: f64, alpha: f64, horizon: usize) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("V must be positive and finite, got {v}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive and finite, got {alpha}")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self { v, alpha, horizon })
    }

    /// `V = sqrt(T)`, `alpha = T`.
    pub fn auto(horizon: usize) -> Result<Self> {
        Self::new((horizon as f64).sqrt(), horizon as f64, horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueues {
    q: Vec<f64>,
}

impl VirtualQueues {
    pub fn zeros(m: usize) -> Self {
        Self { q: vec![0.0; m] }
    }

    pub fn from_values(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("queue backlogs must be nonnegative".into()));
        }
        Ok(Self { q })
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.q.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `Q_i <- max(Q_i + increment_i, 0)`.
    pub fn advance(&self, increments: &[f64]) -> Result<Self> {
        if increments.len() != self.q.len() {
            return Err(Error::Dimension(format!(
                "{} increments for {} queues",
                increments.len(),
                self.q.len()
            )));
        }
        Ok(Self {
            q: self.q.iter().zip(increments).map(|(q, d)| (q + d).max(0.0)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Decide,
    Reveal,
}

/// What happened inside one slot, as seen by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    /// `f_t^{(k)}(s_t, a_t)`.
    pub f_real: Vec<f64>,
    /// `g_{i,t}^{(k)}(s_t, a_t)`, `[i][k]`.
    pub g_real: Vec<Vec<f64>>,
    /// `<f_t^{(k)}, theta_t^{(k)}>`.
    pub f_dot_theta: Vec<f64>,
    /// `<g_{i,t}^{(k)}, theta_t^{(k)}>`, `[i][k]`.
    pub g_dot_theta: Vec<Vec<f64>>,
    /// `||Q(t)||_2`.
    pub q_norm: f64,
    /// `||theta_t^{(k)} - theta_{t-1}^{(k)}||_2`; zero at slot 0.
    pub theta_step: Vec<f64>,
}

/// Internal quantities of slot `t >= 1` needed by the inequality checks.
#[derive(Debug, Clone)]
pub struct SlotTrace {
    pub t: usize,
    pub theta_prev: Vec<OccupancyVector>,
    pub theta: Vec<OccupancyVector>,
    pub f_prev: Vec<Vec<f64>>,
    pub g_prev: Vec<Vec<Vec<f64>>>,
    /// `Q(t)`.
    pub q: Vec<f64>,
    /// `Q(t + 1)`.
    pub q_next: Vec<f64>,
}

/// Result of [`ControllerState::decide`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub actions: Vec<usize>,
    pub theta_step: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    models: Vec<MdpModel>,
    specs: Vec<PolyhedronSpec>,
    params: ControllerParams,
    num_constraints: usize,
    tol: f64,
    theta_prev: Vec<OccupancyVector>,
    theta: Vec<OccupancyVector>,
    policies: Vec<PolicyTable>,
    prev_f: Option<Vec<Vec<f64>>>,
    prev_g: Option<Vec<Vec<Vec<f64>>>>,
    queues: VirtualQueues,
    t: usize,
    phase: Phase,
    states: Vec<usize>,
    actions: Vec<usize>,
    theta_step: Vec<f64>,
    tracing: bool,
}

/// Starts every MDP at the occupancy of its uniform policy with `Q = 0`.
pub fn init_controller(models: Vec<MdpModel>, m: usize, params: ControllerParams) -> Result<ControllerState> {
    if models.is_empty() {
        return Err(Error::Config("controller needs at least one MDP".into()));
    }
    let mut theta = Vec::with_capacity(models.len());
    let mut policies = Vec::with_capacity(models.len());
    for (k, model) in models.iter().enumerate() {
        match check_unichain(model, UNICHAIN_R_MAX) {
            Ok(_) => {}
            Err(Error::NotUnichain { r_max, .. }) => {
                return Err(Error::Config(format!("MDP {k} fails the unichain check up to r = {r_max}")));
            }
            Err(e) => return Err(e),
        }
        let pi = PolicyTable::uniform(model.num_states(), model.num_actions());
        theta.push(policy_to_theta(model, &pi)?);
        policies.push(pi);
    }
    let specs = models.iter().map(build_polyhedron).collect();
    let k = models.len();
    Ok(ControllerState {
        models,
        specs,
        params,
        num_constraints: m,
        tol: DEFAULT_TOL,
        theta_prev: theta.clone(),
        theta,
        policies,
        prev_f: None,
        prev_g: None,
        queues: VirtualQueues::zeros(m),
        t: 0,
        phase: Phase::Decide,
        states: vec![0; k],
        actions: vec![0; k],
        theta_step: vec![0.0; k],
        tracing: false,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `w = V f + sum_i Q_i g_i`.
pub fn weights(v: f64, f: &[f64], q: &[f64], g: &[&[f64]]) -> Vec<f64> {
    let mut w: Vec<f64> = f.iter().map(|x| v * x).collect();
    for (qi, gi) in q.iter().zip(g) {
        for (wj, gj) in w.iter_mut().zip(gi.iter()) {
            *wj += qi * gj;
        }
    }
    w
}

/// `theta_t = Proj_Theta(theta_{t-1} - w / (2 alpha))`.
pub fn proximal_step(spec: &PolyhedronSpec, theta_prev: &[f64], w: &[f64], alpha: f64, tol: f64) -> Result<OccupancyVector> {
    let y: Vec<f64> = theta_prev.iter().zip(w).map(|(t, w)| t - w / (2.0 * alpha)).collect();
    Ok(project_theta(spec, &y, tol)?.point)
}

/// `Q_i(t+1) = max(Q_i(t) + sum_k <g_{i,t-1}^{(k)}, theta_t^{(k)}>, 0)`.
pub fn queue_update(queues: &VirtualQueues, g_prev: &[Vec<Vec<f64>>], theta: &[OccupancyVector]) -> Result<VirtualQueues> {
    let increments: Vec<f64> = g_prev
        .iter()
        .map(|gi| gi.iter().zip(theta).map(|(g, th)| dot(g, th.as_slice())).sum())
        .collect();
    queues.advance(&increments)
}

impl ControllerState {
    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn models(&self) -> &[MdpModel] {
        &self.models
    }

    pub fn specs(&self) -> &[PolyhedronSpec] {
        &self.specs
    }

    pub fn num_mdps(&self) -> usize {
        self.models.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    /// Index of the slot about to be decided or revealed.
    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn queues(&self) -> &VirtualQueues {
        &self.queues
    }

    /// `theta_t` once slot `t` is decided, `theta_{t-1}` before.
    pub fn theta(&self) -> &[OccupancyVector] {
        &self.theta
    }

    pub fn policies(&self) -> &[PolicyTable] {
        &self.policies
    }

    pub fn set_tolerance(&mut self, tol: f64) -> Result<()> {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("projection tolerance must be positive, got {tol}")));
        }
        self.tol = tol;
        Ok(())
    }

    /// Makes [`reveal`](Self::reveal) return a [`SlotTrace`] for slots `t >= 1`.
    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    /// `w_t^{(k)}` from the slot `t - 1` functions and `Q(t)`.
    pub fn compute_weights(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.models.len() {
            return Err(Error::Index {
                index: k,
                size: self.models.len(),
            });
        }
        let (Some(f), Some(g)) = (&self.prev_f, &self.prev_g) else {
            return Err(Error::Sequencing(format!(
                "slot {} has no previous-slot functions to weight",
                self.t
            )));
        };
        let gk: Vec<&[f64]> = g.iter().map(|gi| gi[k].as_slice()).collect();
        Ok(weights(self.params.v, &f[k], self.queues.values(), &gk))
    }

    /// Proximal projection step for MDP `k`, from `theta_{t-1}^{(k)}`.
    pub fn controller_step(&self, k: usize) -> Result<OccupancyVector> {
        let w = self.compute_weights(k)?;
        proximal_step(&self.specs[k], self.theta[k].as_slice(), &w, self.params.alpha, self.tol)
    }

    /// Chooses `theta_t` and samples one action per MDP in the given states.
    pub fn decide<R: Rng + ?Sized>(&mut self, states: &[usize], rng: &mut R) -> Result<Decision> {
        if self.phase != Phase::Decide {
            return Err(Error::Sequencing(format!(
                "slot {} already decided; reveal its functions first",
                self.t
            )));
        }
        if states.len() != self.models.len() {
            return Err(Error::Dimension(format!(
                "{} states for {} MDPs",
                states.len(),
                self.models.len()
            )));
        }
        for (k, (&s, m)) in states.iter().zip(&self.models).enumerate() {
            if s >= m.num_states() {
                return Err(Error::Input(format!(
                    "MDP {k}: state {s} out of range for {} states",
                    m.num_states()
                )));
            }
        }
        if self.t > 0 {
            let next: Vec<OccupancyVector> = if self.models.len() >= PARALLEL_MDPS {
                (0..self.models.len())
                    .into_par_iter()
                    .map(|k| self.controller_step(k))
                    .collect::<Result<_>>()?
            } else {
                (0..self.models.len()).map(|k| self.controller_step(k)).collect::<Result<_>>()?
            };
            self.theta_step = next
                .iter()
                .zip(&self.theta)
                .map(|(a, b)| dist(a.as_slice(), b.as_slice()))
                .collect();
            self.policies = next.iter().zip(&self.models).map(|(th, m)| theta_to_policy(m, th)).collect();
            self.theta_prev = std::mem::replace(&mut self.theta, next);
        }
        let actions: Vec<usize> = states
            .iter()
            .zip(&self.policies)
            .map(|(&s, pi)| pi.sample_action(s, rng))
            .collect();
        self.states = states.to_vec();
        self.actions = actions.clone();
        self.phase = Phase::Reveal;
        Ok(Decision {
            actions,
            theta_step: self.theta_step.clone(),
        })
    }

    fn check_sample(&self, sample: &FunctionSample) -> Result<()> {
        let k = self.models.len();
        let shape_ok = |table: &[Vec<f64>]| {
            table.len() == k && table.iter().zip(&self.models).all(|(row, m)| row.len() == m.num_pairs())
        };
        if !shape_ok(&sample.f) {
            return Err(Error::Dimension("penalty tables do not match the MDP sizes".into()));
        }
        if sample.g.len() != self.num_constraints || !sample.g.iter().all(|gi| shape_ok(gi)) {
            return Err(Error::Dimension(format!(
                "expected {} constraint table sets matching the MDP sizes",
                self.num_constraints
            )));
        }
        Ok(())
    }

    /// Reveals the slot `t` functions, records the slot and advances the
    /// queues to `Q(t + 1)`.
    pub fn reveal(&mut self, sample: FunctionSample) -> Result<(SlotRecord, Option<SlotTrace>)> {
        if self.phase != Phase::Reveal {
            return Err(Error::Sequencing(format!(
                "functions of slot {} offered before its decision",
                self.t
            )));
        }
        self.check_sample(&sample)?;
        let pair = |k: usize| self.states[k] * self.models[k].num_actions() + self.actions[k];
        let k_count = self.models.len();
        let record = SlotRecord {
            t: self.t,
            states: self.states.clone(),
            actions: self.actions.clone(),
            f_real: (0..k_count).map(|k| sample.f[k][pair(k)]).collect(),
            g_real: sample
                .g
                .iter()
                .map(|gi| (0..k_count).map(|k| gi[k][pair(k)]).collect())
                .collect(),
            f_dot_theta: (0..k_count).map(|k| dot(&sample.f[k], self.theta[k].as_slice())).collect(),
            g_dot_theta: sample
                .g
                .iter()
                .map(|gi| (0..k_count).map(|k| dot(&gi[k], self.theta[k].as_slice())).collect())
                .collect(),
            q_norm: self.queues.norm(),
            theta_step: self.theta_step.clone(),
        };

        // Q(1) = Q(0) = 0; from t >= 1 the queues absorb <g_{t-1}, theta_t>.
        let mut trace = None;
        if let Some(g_prev) = &self.prev_g {
            let next = queue_update(&self.queues, g_prev, &self.theta)?;
            if self.tracing {
                trace = Some(SlotTrace {
                    t: self.t,
                    theta_prev: self.theta_prev.clone(),
                    theta: self.theta.clone(),
                    f_prev: self.prev_f.clone().expect("set with prev_g"),
                    g_prev: g_prev.clone(),
                    q: self.queues.values().to_vec(),
                    q_next: next.values().to_vec(),
                });
            }
            self.queues = next;
        }
        self.prev_f = Some(sample.f);
        self.prev_g = Some(sample.g);
        self.t += 1;
        self.phase = Phase::Decide;
        Ok((record, trace))
    }

    /// `decide` followed by `reveal`.
    pub fn run_slot<R: Rng + ?Sized>(
        &mut self,
        sample: FunctionSample,
        states: &[usize],
        rng: &mut R,
    ) -> Result<(SlotRecord, Option<SlotTrace>)> {
        self.decide(states, rng)?;
        self.reveal(sample)
    }
}

/// Random points of each polytope: Dirichlet(1) mixtures of pure-policy
/// occupancies, with an occasional single vertex to reach the boundary.
#[derive(Debug, Clone)]
pub struct VertexSampler {
    vertices: Vec<Vec<OccupancyVector>>,
}

impl VertexSampler {
    pub fn new(models: &[MdpModel]) -> Result<Self> {
        Ok(Self {
            vertices: models.iter().map(pure_policy_occupancies).collect::<Result<_>>()?,
        })
    }

    pub fn vertices(&self, k: usize) -> &[OccupancyVector] {
        &self.vertices[k]
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> OccupancyVector {
        let verts = &self.vertices[k];
        if rng.random::<f64>() < 0.1 {
            return verts[rng.random_range(0..verts.len())].clone();
        }
        let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
        let w: Vec<f64> = (0..verts.len()).map(|_| gamma.sample(rng)).collect();
        let total: f64 = w.iter().sum();
        let n = verts[0].theta.len();
        let mut theta = vec![0.0; n];
        for (wi, v) in w.iter().zip(verts) {
            for (t, x) in theta.iter_mut().zip(v.as_slice()) {
                *t += wi / total * x;
            }
        }
        OccupancyVector {
            num_states: verts[0].num_states,
            num_actions: verts[0].num_actions,
            theta,
        }
    }
}

/// Per-slot checks of the deterministic queue, drift, subproblem and
/// slow-update inequalities.
#[derive(Debug, Clone)]
pub struct InequalityChecker {
    psi: f64,
    v: f64,
    alpha: f64,
    slack: f64,
    samples_per_slot: usize,
    pairs: Vec<usize>,
    sampler: Option<VertexSampler>,
    /// Left side of the cumulative queue bound, per constraint.
    cum_g: Vec<f64>,
    /// `Psi * sum_t sum_k sqrt(|S||A|) ||theta_t - theta_{t-1}||`.
    cum_step: f64,
    q1: Vec<f64>,
    pub slots_checked: usize,
    pub violations: Vec<InequalityViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityViolation {
    pub name: String,
    pub slot: usize,
    pub mdp: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

impl InequalityViolation {
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

pub const INEQUALITY_NAMES: [&str; 6] = [
    "cumulative-queue-bound",
    "drift-bound",
    "subproblem-optimality",
    "slow-update",
    "queue-increment",
    "queue-norm-increment",
];

impl InequalityChecker {
    /// `samples_per_slot` random comparison points per MDP for the
    /// subproblem inequality; zero disables that check.
    pub fn new(state: &ControllerState, psi: f64, slack: f64, samples_per_slot: usize) -> Result<Self> {
        let sampler = if samples_per_slot > 0 {
            Some(VertexSampler::new(state.models())?)
        } else {
            None
        };
        Ok(Self {
            psi,
            v: state.params.v,
            alpha: state.params.alpha,
            slack,
            samples_per_slot,
            pairs: state.models.iter().map(MdpModel::num_pairs).collect(),
            sampler,
            cum_g: vec![0.0; state.num_constraints],
            cum_step: 0.0,
            q1: vec![0.0; state.num_constraints],
            slots_checked: 0,
            violations: Vec::new(),
        })
    }

    fn test(&mut self, name: &str, slot: usize, mdp: Option<usize>, lhs: f64, rhs: f64) {
        if lhs > rhs + self.slack || lhs.is_nan() || rhs.is_nan() {
            self.violations.push(InequalityViolation {
                name: name.to_string(),
                slot,
                mdp,
                lhs,
                rhs,
            });
        }
    }

    /// Checks every inequality for one slot trace.
    pub fn check<R: Rng + ?Sized>(&mut self, tr: &SlotTrace, rng: &mut R) {
        let k_count = tr.theta.len() as f64;
        let m = tr.q.len();
        let kpsi = k_count * self.psi;
        let t = tr.t;

        // Cumulative queue bound.
        if t == 1 {
            self.q1 = tr.q.clone();
        }
        for (i, gi) in tr.g_prev.iter().enumerate() {
            self.cum_g[i] += gi
                .iter()
                .zip(&tr.theta_prev)
                .map(|(g, th)| dot(g, th.as_slice()))
                .sum::<f64>();
        }
        self.cum_step += self.psi
            * tr
                .theta
                .iter()
                .zip(&tr.theta_prev)
                .zip(&self.pairs)
                .map(|((a, b), n)| (*n as f64).sqrt() * dist(a.as_slice(), b.as_slice()))
                .sum::<f64>();
        for i in 0..m {
            let rhs = tr.q_next[i] - self.q1[i] + self.cum_step;
            self.test(INEQUALITY_NAMES[0], t, None, self.cum_g[i], rhs);
        }

        // Drift bound.
        let norm2 = |q: &[f64]| q.iter().map(|v| v * v).sum::<f64>();
        let drift = 0.5 * norm2(&tr.q_next) - 0.5 * norm2(&tr.q);
        let coupling: f64 = tr
            .g_prev
            .iter()
            .zip(&tr.q)
            .map(|(gi, qi)| {
                qi * gi
                    .iter()
                    .zip(&tr.theta)
                    .map(|(g, th)| dot(g, th.as_slice()))
                    .sum::<f64>()
            })
            .sum();
        self.test(INEQUALITY_NAMES[1], t, None, drift, 0.5 * m as f64 * kpsi * kpsi + coupling);

        // Subproblem optimality against random comparison points, and the
        // slow-update bound.
        for k in 0..tr.theta.len() {
            let gk: Vec<&[f64]> = tr.g_prev.iter().map(|gi| gi[k].as_slice()).collect();
            let prev = tr.theta_prev[k].as_slice();
            let cur = tr.theta[k].as_slice();
            let objective = |x: &[f64]| -> f64 {
                let lin: f64 = self.v * x.iter().zip(prev).zip(&tr.f_prev[k]).map(|((a, b), f)| f * (a - b)).sum::<f64>();
                let qg: f64 = tr.q.iter().zip(&gk).map(|(q, g)| q * dot(g, x)).sum();
                lin + qg + self.alpha * dist(x, prev).powi(2)
            };
            let at_cur = objective(cur);
            if let Some(sampler) = &self.sampler {
                for _ in 0..self.samples_per_slot {
                    let star = sampler.sample(k, rng);
                    let rhs = objective(star.as_slice()) - self.alpha * dist(star.as_slice(), cur).powi(2);
                    if at_cur > rhs + self.slack {
                        self.violations.push(InequalityViolation {
                            name: INEQUALITY_NAMES[2].to_string(),
                            slot: t,
                            mdp: Some(k),
                            lhs: at_cur,
                            rhs,
                        });
                    }
                }
            }
            let fnorm = tr.f_prev[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            let gnorm = gk.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
            let qnorm = norm2(&tr.q).sqrt();
            let bound = (self.v * fnorm + qnorm * gnorm) / (2.0 * self.alpha);
            self.test(INEQUALITY_NAMES[3], t, Some(k), dist(cur, prev), bound);
        }

        // Queue increments.
        for i in 0..m {
            self.test(INEQUALITY_NAMES[4], t, None, (tr.q_next[i] - tr.q[i]).abs(), kpsi);
        }
        self.test(
            INEQUALITY_NAMES[5],
            t,
            None,
            norm2(&tr.q_next).sqrt() - norm2(&tr.q).sqrt(),
            (m as f64).sqrt() * kpsi,
        );
        self.slots_checked += 1;
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// The first violation as an invariant error.
    pub fn into_result(self) -> Result<usize> {
        match self.violations.first() {
            None => Ok(self.slots_checked),
            Some(v) => Err(Error::Invariant {
                module: "controller",
                name: INEQUALITY_NAMES.iter().find(|n| **n == v.name).copied().unwrap_or("inequality"),
                slot: Some(v.slot),
                detail: format!("lhs {} exceeds rhs {} (mdp {:?})", v.lhs, v.rhs, v.mdp),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn symmetric() -> MdpModel {
        MdpModel::from_rows(vec![
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ])
        .unwrap()
    }

    fn sample(k: usize, m: usize, pairs: usize, rng: &mut ChaCha8Rng) -> FunctionSample {
        FunctionSample {
            f: (0..k).map(|_| (0..pairs).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            g: (0..m)
                .map(|_| (0..k).map(|_| (0..pairs).map(|_| rng.random_range(-1.0..0.6)).collect()).collect())
                .collect(),
        }
    }

    #[test]
    fn initial_theta_is_uniform_on_a_symmetric_model() {
        let c = init_controller(vec![symmetric()], 1, ControllerParams::auto(10).unwrap()).unwrap();
        for v in c.theta()[0].as_slice() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert_eq!(c.queues().values(), &[0.0]);
    }

    #[test]
    fn weights_follow_the_formula() {
        assert_eq!(weights(2.0, &[1.0, 0.0], &[3.0], &[&[0.0, 1.0]]), vec![2.0, 3.0]);
        assert_eq!(weights(1.5, &[1.0, -2.0], &[0.0, 0.0], &[&[5.0, 5.0], &[1.0, 1.0]]), vec![1.5, -3.0]);
    }

    #[test]
    fn queue_update_clamps_at_zero() {
        let q = VirtualQueues::from_values(vec![2.0, 2.0]).unwrap();
        let next = q.advance(&[-3.0, 0.5]).unwrap();
        assert_eq!(next.values(), &[0.0, 2.5]);
    }

    #[test]
    fn reveal_before_decide_is_rejected() {
        let mut c = init_controller(vec![symmetric()], 0, ControllerParams::auto(4).unwrap()).unwrap();
        let s = FunctionSample {
            f: vec![vec![0.0; 4]],
            g: vec![],
        };
        assert!(matches!(c.reveal(s), Err(Error::Sequencing(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        c.decide(&[0], &mut rng).unwrap();
        assert!(matches!(c.decide(&[0], &mut rng), Err(Error::Sequencing(_))));
    }

    #[test]
    fn weights_need_previous_functions() {
        let c = init_controller(vec![symmetric()], 0, ControllerParams::auto(4).unwrap()).unwrap();
        assert!(matches!(c.compute_weights(0), Err(Error::Sequencing(_))));
    }

    #[test]
    fn zero_weights_keep_theta() {
        let mut c = init_controller(vec![symmetric()], 0, ControllerParams::auto(4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = FunctionSample {
            f: vec![vec![0.0; 4]],
            g: vec![],
        };
        let before = c.theta()[0].clone();
        c.run_slot(zero.clone(), &[0], &mut rng).unwrap();
        c.run_slot(zero, &[0], &mut rng).unwrap();
        assert_eq!(c.theta()[0].as_slice(), before.as_slice());
    }

    #[test]
    fn huge_alpha_freezes_theta() {
        let params = ControllerParams::new(1.0, 1e12, 10).unwrap();
        let mut c = init_controller(vec![symmetric()], 1, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = c.theta()[0].clone();
        for _ in 0..5 {
            let s = sample(1, 1, 4, &mut rng);
            c.run_slot(s, &[0], &mut rng).unwrap();
        }
        assert!(dist(c.theta()[0].as_slice(), before.as_slice()) < 1e-6);
    }

    #[test]
    fn inequalities_hold_on_a_short_run() {
        let models = vec![symmetric(), symmetric()];
        let mut c = init_controller(models, 2, ControllerParams::auto(200).unwrap()).unwrap();
        c.set_tracing(true);
        let mut checker = InequalityChecker::new(&c, 1.0, 1e-8, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut check_rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let s = sample(2, 2, 4, &mut rng);
            let (_, trace) = c.run_slot(s, &[0, 1], &mut rng).unwrap();
            if let Some(tr) = trace {
                checker.check(&tr, &mut check_rng);
            }
        }
        assert_eq!(checker.slots_checked, 199);
        assert!(checker.passed(), "{:?}", checker.violations.first());
    }
}
