//! Scenario generation: weakly coupled MDP instances, oblivious penalty and
//! constraint processes, the data-center server model, and Slater-margin
//! certification.
//!
//! Every random quantity is a pure function of the scenario seed. Slot `t`
//! functions come from their own ChaCha stream, so the whole function path
//! is fixed before a run starts and can be sampled in any order.

use std::path::Path;
use std::sync::RwLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::baseline::{best_stationary, slater_margin};
use crate::error::{Error, Result};
use crate::mdp::{check_unichain, random_distribution, MdpModel, OccupancyVector};

pub const SCHEMA_VERSION: u32 = 1;

const FUNCTION_SALT: u64 = 0xf00d_cafe_0000_0001;
const REGIME_SALT: u64 = 0xf00d_cafe_0000_0002;
const PHASE_SALT: u64 = 0xf00d_cafe_0000_0003;
const MAX_ATTEMPTS: u64 = 500;

/// Family labels written to scenario metadata: the generating distributions
/// are choices of this crate, not part of the model.
pub const GENERATOR_FAMILIES: &str = "constraints: iid gaussian around mean tables, clipped to [-psi, psi]; \
penalties: iid gaussian | sinusoid with periodic phase noise | markov-modulated regimes | price trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdpSize {
    pub states: usize,
    pub actions: usize,
}

impl MdpSize {
    pub fn pairs(&self) -> usize {
        self.states * self.actions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Iid,
    SinusoidalAdversarial,
    MarkovModulated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintParams {
    /// Standard deviation of the per-slot Gaussian perturbation.
    pub std: f64,
    /// Weight in `[0, 1]` pulling constraint tables against the penalty.
    #[serde(default = "default_tradeoff")]
    pub tradeoff: f64,
    /// Regenerate until the certified margin reaches this value.
    #[serde(default)]
    pub min_margin: f64,
    /// Regenerate until at least one constraint binds at the benchmark.
    #[serde(default = "default_true")]
    pub require_active: bool,
    /// Where each constraint level sits between the lowest achievable
    /// constraint value (0) and its value at the unconstrained penalty
    /// minimiser (1). Smaller values bind harder.
    #[serde(default = "default_tightness")]
    pub tightness: f64,
}

fn default_tightness() -> f64 {
    0.5
}

fn default_tradeoff() -> f64 {
    0.7
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataCenterParams {
    pub mean_price: f64,
    pub price_amplitude: f64,
    #[serde(default = "default_period")]
    pub price_period: usize,
    pub arrival_rate: f64,
    #[serde(default)]
    pub arrival_std: f64,
    pub service_rate: f64,
    #[serde(default = "default_leakage")]
    pub leakage: f64,
    /// CSV of `(slot, price)` rows replacing the sinusoidal price.
    #[serde(default)]
    pub price_trace: Option<std::path::PathBuf>,
}

fn default_period() -> usize {
    96
}

fn default_leakage() -> f64 {
    0.01
}

/// Input to scenario generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub num_mdps: usize,
    pub num_constraints: usize,
    pub psi: f64,
    pub sizes: Vec<MdpSize>,
    #[serde(default = "default_mixing_delta")]
    pub mixing_delta: f64,
    pub penalty_process: PenaltyKind,
    #[serde(default)]
    pub penalty_std: f64,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default)]
    pub phase_noise: f64,
    #[serde(default = "default_regimes")]
    pub regimes: usize,
    #[serde(default = "default_stay")]
    pub regime_stay_prob: f64,
    pub constraint_process: ConstraintParams,
    pub seed: u64,
    #[serde(default)]
    pub datacenter: Option<DataCenterParams>,
}

fn default_mixing_delta() -> f64 {
    0.2
}

fn default_regimes() -> usize {
    2
}

fn default_stay() -> f64 {
    0.99
}

impl ScenarioConfig {
    /// Two 3-state/2-action MDPs, two constraints, `psi = 1`, i.i.d.
    /// penalties, certified margin at least 0.2.
    pub fn reference() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            num_mdps: 2,
            num_constraints: 2,
            psi: 1.0,
            sizes: vec![MdpSize { states: 3, actions: 2 }; 2],
            mixing_delta: 0.2,
            penalty_process: PenaltyKind::Iid,
            penalty_std: 0.4,
            period: default_period(),
            phase_noise: 0.0,
            regimes: default_regimes(),
            regime_stay_prob: default_stay(),
            constraint_process: ConstraintParams {
                std: 0.3,
                tradeoff: default_tradeoff(),
                min_margin: 0.2,
                require_active: true,
                tightness: 0.9,
            },
            seed: 1,
            datacenter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mdps == 0 {
            return Err(Error::Config("need at least one MDP".into()));
        }
        if !(self.psi > 0.0) {
            return Err(Error::Config(format!("psi must be positive, got {}", self.psi)));
        }
        if self.sizes.len() != self.num_mdps {
            return Err(Error::Config(format!(
                "{} sizes for {} MDPs",
                self.sizes.len(),
                self.num_mdps
            )));
        }
        if self.sizes.iter().any(|s| s.states == 0 || s.actions == 0) {
            return Err(Error::Config("MDP sizes must be positive".into()));
        }
        if !(self.mixing_delta > 0.0 && self.mixing_delta <= 1.0) {
            return Err(Error::Config("mixing_delta must lie in (0, 1]".into()));
        }
        if self.period == 0 {
            return Err(Error::Config("period must be positive".into()));
        }
        if let Some(dc) = &self.datacenter {
            if self.num_constraints != 1 {
                return Err(Error::Config("data-center scenario has exactly one constraint".into()));
            }
            if self.sizes.iter().any(|s| *s != MdpSize { states: 3, actions: 2 }) {
                return Err(Error::Config("data-center servers are 3-state/2-action".into()));
            }
            if !(dc.leakage > 0.0 && dc.leakage < 1.0) {
                return Err(Error::Config("leakage must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Penalty process with explicit tables (`[k][s * |A| + a]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyProcess {
    Iid {
        mean: Vec<Vec<f64>>,
        std: f64,
    },
    /// `base + amplitude * sin(2 pi t / period + phase + noise(t mod period))`.
    SinusoidalAdversarial {
        base: Vec<Vec<f64>>,
        amplitude: Vec<Vec<f64>>,
        phase: Vec<Vec<f64>>,
        period: usize,
        phase_noise: f64,
    },
    MarkovModulated {
        regimes: Vec<Vec<Vec<f64>>>,
        stay_prob: f64,
        std: f64,
    },
    /// `prices[t mod len] * indicator`.
    PriceTrace {
        indicator: Vec<Vec<f64>>,
        prices: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintProcess {
    /// Pre-clipping means, `[i][k][s * |A| + a]`.
    pub mean: Vec<Vec<Vec<f64>>>,
    pub std: f64,
    /// One Gaussian draw per `(t, i)` shared by every entry.
    #[serde(default)]
    pub shared_noise: bool,
}

/// Functions revealed at the end of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    /// `f[k][s * |A| + a]`.
    pub f: Vec<Vec<f64>>,
    /// `g[i][k][s * |A| + a]`.
    pub g: Vec<Vec<Vec<f64>>>,
}

impl FunctionSample {
    pub fn sup_norm(&self) -> f64 {
        self.f
            .iter()
            .flatten()
            .chain(self.g.iter().flatten().flatten())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// `E[clip(mu + std Z, -psi, psi)]` for standard normal `Z`.
pub fn clipped_normal_mean(mu: f64, std: f64, psi: f64) -> f64 {
    if std <= 0.0 {
        return mu.clamp(-psi, psi);
    }
    let n = Normal::standard();
    let lo = (-psi - mu) / std;
    let hi = (psi - mu) / std;
    let (cdf_lo, cdf_hi) = (n.cdf(lo), n.cdf(hi));
    -psi * cdf_lo + psi * (1.0 - cdf_hi) + mu * (cdf_hi - cdf_lo) + std * (n.pdf(lo) - n.pdf(hi))
}

fn slot_rng(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

/// The full oblivious function path of a scenario.
#[derive(Debug, Serialize, Deserialize)]
pub struct FunctionModel {
    pub psi: f64,
    pub seed: u64,
    pub penalty: PenaltyProcess,
    pub constraint: ConstraintProcess,
    pub families: String,
    /// Seed of the i.i.d. noise path; the scenario seed unless a run
    /// selected its own path with [`FunctionModel::with_noise_path`].
    #[serde(skip)]
    noise_seed: Option<u64>,
    #[serde(skip)]
    regime_cache: RwLock<Vec<usize>>,
}

impl Clone for FunctionModel {
    fn clone(&self) -> Self {
        Self {
            psi: self.psi,
            seed: self.seed,
            penalty: self.penalty.clone(),
            constraint: self.constraint.clone(),
            families: self.families.clone(),
            noise_seed: self.noise_seed,
            regime_cache: RwLock::new(Vec::new()),
        }
    }
}

impl FunctionModel {
    pub fn new(psi: f64, seed: u64, penalty: PenaltyProcess, constraint: ConstraintProcess) -> Self {
        Self {
            psi,
            seed,
            penalty,
            constraint,
            families: GENERATOR_FAMILIES.to_string(),
            noise_seed: None,
            regime_cache: RwLock::new(Vec::new()),
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint.mean.len()
    }

    /// Same tables and adversarial components, with the i.i.d. noise drawn
    /// from a different path. The path is still fixed before slot 0.
    pub fn with_noise_path(&self, noise_seed: u64) -> Self {
        let mut out = self.clone();
        out.noise_seed = Some(noise_seed);
        out
    }

    /// Regime index at slot `t`; the chain starts in regime 0 and is
    /// simulated once from its own stream, then cached.
    fn regime(&self, t: usize, count: usize, stay: f64) -> usize {
        if let Some(r) = self.regime_cache.read().expect("regime cache").get(t) {
            return *r;
        }
        let mut cache = self.regime_cache.write().expect("regime cache");
        if cache.is_empty() {
            cache.push(0);
        }
        while cache.len() <= t {
            let s = cache.len();
            let prev = *cache.last().expect("nonempty");
            let mut rng = slot_rng(self.seed, REGIME_SALT, s as u64);
            let next = if count > 1 && rng.random::<f64>() >= stay {
                (prev + 1 + rng.random_range(0..count - 1)) % count
            } else {
                prev
            };
            cache.push(next);
        }
        cache[t]
    }

    fn phase_offset(&self, t: usize, period: usize, noise: f64) -> f64 {
        if noise == 0.0 {
            return 0.0;
        }
        let mut rng = slot_rng(self.seed, PHASE_SALT, (t % period) as u64);
        noise * (2.0 * rng.random::<f64>() - 1.0)
    }

    fn sinusoid(
        &self,
        base: &[Vec<f64>],
        amplitude: &[Vec<f64>],
        phase: &[Vec<f64>],
        period: usize,
        noise: f64,
        t: usize,
    ) -> Vec<Vec<f64>> {
        let offset = self.phase_offset(t, period, noise);
        let angle = 2.0 * std::f64::consts::PI * (t % period) as f64 / period as f64 + offset;
        base.iter()
            .zip(amplitude)
            .zip(phase)
            .map(|((b, a), p)| {
                b.iter()
                    .zip(a)
                    .zip(p)
                    .map(|((b, a), p)| (b + a * (angle + p).sin()).clamp(-self.psi, self.psi))
                    .collect()
            })
            .collect()
    }

    /// Functions of slot `t`; a pure function of `(seed, t)`.
    pub fn sample(&self, t: usize) -> FunctionSample {
        let psi = self.psi;
        let mut rng = slot_rng(self.noise_seed.unwrap_or(self.seed), FUNCTION_SALT, t as u64);
        let noisy = |table: &[Vec<f64>], std: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            table
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|mu| {
                            let z: f64 = if std > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                            (mu + std * z).clamp(-psi, psi)
                        })
                        .collect()
                })
                .collect()
        };
        let f = match &self.penalty {
            PenaltyProcess::Iid { mean, std } => noisy(mean, *std, &mut rng),
            PenaltyProcess::SinusoidalAdversarial {
                base,
                amplitude,
                phase,
                period,
                phase_noise,
            } => self.sinusoid(base, amplitude, phase, *period, *phase_noise, t),
            PenaltyProcess::MarkovModulated {
                regimes,
                stay_prob,
                std,
            } => {
                let r = self.regime(t, regimes.len(), *stay_prob);
                noisy(&regimes[r], *std, &mut rng)
            }
            PenaltyProcess::PriceTrace { indicator, prices } => {
                let price = prices[t % prices.len()];
                indicator
                    .iter()
                    .map(|row| row.iter().map(|v| (price * v).clamp(-psi, psi)).collect())
                    .collect()
            }
        };
        let c = &self.constraint;
        let g = c
            .mean
            .iter()
            .map(|gi| {
                if c.shared_noise {
                    let z: f64 = if c.std > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    gi.iter()
                        .map(|row| row.iter().map(|mu| (mu + c.std * z).clamp(-psi, psi)).collect())
                        .collect()
                } else {
                    noisy(gi, c.std, &mut rng)
                }
            })
            .collect();
        FunctionSample { f, g }
    }

    /// `E[f_t]` (after clipping).
    pub fn mean_penalty_at(&self, t: usize) -> Vec<Vec<f64>> {
        let psi = self.psi;
        let clipped = |table: &[Vec<f64>], std: f64| -> Vec<Vec<f64>> {
            table
                .iter()
                .map(|row| row.iter().map(|mu| clipped_normal_mean(*mu, std, psi)).collect())
                .collect()
        };
        match &self.penalty {
            PenaltyProcess::Iid { mean, std } => clipped(mean, *std),
            PenaltyProcess::MarkovModulated {
                regimes,
                stay_prob,
                std,
            } => clipped(&regimes[self.regime(t, regimes.len(), *stay_prob)], *std),
            PenaltyProcess::SinusoidalAdversarial { .. } | PenaltyProcess::PriceTrace { .. } => {
                self.sample(t).f
            }
        }
    }

    /// `(1/T) sum_{t<T} E[f_t]`.
    pub fn mean_penalty(&self, horizon: usize) -> Vec<Vec<f64>> {
        if let PenaltyProcess::Iid { .. } = self.penalty {
            return self.mean_penalty_at(0);
        }
        let horizon = horizon.max(1);
        let mut acc = self.mean_penalty_at(0);
        for t in 1..horizon {
            for (a, b) in acc.iter_mut().zip(self.mean_penalty_at(t)) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        acc.iter_mut()
            .for_each(|row| row.iter_mut().for_each(|v| *v /= horizon as f64));
        acc
    }

    /// `E[g_i]` (after clipping), identical for every slot.
    pub fn mean_constraint(&self) -> Vec<Vec<Vec<f64>>> {
        let c = &self.constraint;
        c.mean
            .iter()
            .map(|gi| {
                gi.iter()
                    .map(|row| {
                        row.iter()
                            .map(|mu| clipped_normal_mean(*mu, c.std, self.psi))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// `P_a = delta * P_hat + (1 - delta) * Q_a` with a shared entrywise
/// positive `P_hat` and random stochastic `Q_a`.
pub fn generate_unichain_mdp<R: Rng + ?Sized>(size: MdpSize, delta: f64, rng: &mut R) -> Result<MdpModel> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    let n = size.states;
    let positive = |rng: &mut R| -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(n, n, |_, _| 0.1 + rng.random::<f64>());
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    };
    let p_hat = positive(rng);
    let kernel = (0..size.actions)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    // Squared exponentials give more lopsided rows than a flat Dirichlet.
                    let mut r: Vec<f64> = random_distribution(n, rng).iter().map(|v| v * v).collect();
                    let s: f64 = r.iter().sum();
                    r.iter_mut().for_each(|v| *v /= s);
                    r
                })
                .collect();
            let mut p = DMatrix::from_fn(n, n, |i, j| delta * p_hat[(i, j)] + (1.0 - delta) * rows[i][j]);
            normalise_rows(&mut p);
            p
        })
        .collect();
    MdpModel::new(kernel)
}

/// Rescales rows to sum to one exactly up to rounding, nudging the largest
/// entry to absorb the residual.
fn normalise_rows(p: &mut DMatrix<f64>) {
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
        let residual = 1.0 - row.sum();
        let j = (0..row.len())
            .max_by(|a, b| row[*a].total_cmp(&row[*b]))
            .expect("nonempty row");
        row[j] += residual;
    }
}

/// Data-center server: states `active = 0`, `idle = 1`, `setup = 2`.
/// Active: action 0 stays, action 1 sleeps. Idle: action 0 wakes into
/// setup, action 1 stays. Setup always proceeds to active. Every row leaks
/// `leakage` uniformly so all pure-policy products are positive.
pub fn datacenter_server(leakage: f64) -> Result<MdpModel> {
    let det = |targets: [usize; 3]| {
        DMatrix::from_fn(3, 3, |s, t| {
            let hit = if targets[s] == t { 1.0 } else { 0.0 };
            (1.0 - leakage) * hit + leakage / 3.0
        })
    };
    let mut p0 = det([0, 2, 0]);
    let mut p1 = det([1, 1, 0]);
    normalise_rows(&mut p0);
    normalise_rows(&mut p1);
    MdpModel::new(vec![p0, p1])
}

pub const ACTIVE: usize = 0;
pub const IDLE: usize = 1;
pub const SETUP: usize = 2;

/// Data-center configuration with `num_servers` identical servers.
pub fn datacenter_config(num_servers: usize, params: DataCenterParams, seed: u64) -> Result<ScenarioConfig> {
    if num_servers == 0 {
        return Err(Error::Config("need at least one server".into()));
    }
    let psi = (params.mean_price.abs() + params.price_amplitude.abs())
        .max(params.arrival_rate / num_servers as f64 + params.service_rate + 3.0 * params.arrival_std)
        .max(1e-9);
    Ok(ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        num_mdps: num_servers,
        num_constraints: 1,
        psi,
        sizes: vec![MdpSize { states: 3, actions: 2 }; num_servers],
        mixing_delta: default_mixing_delta(),
        penalty_process: PenaltyKind::SinusoidalAdversarial,
        penalty_std: 0.0,
        period: params.price_period,
        phase_noise: 0.0,
        regimes: default_regimes(),
        regime_stay_prob: default_stay(),
        constraint_process: ConstraintParams {
            std: params.arrival_std / num_servers as f64,
            tradeoff: 0.0,
            min_margin: 0.0,
            require_active: false,
            tightness: default_tightness(),
        },
        seed,
        datacenter: Some(params),
    })
}

/// Reads `(slot, price)` rows; prices are ordered by slot.
pub fn load_price_trace(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let slot = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Input(format!("bad slot in {}", path.display())))?;
        let price = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Input(format!("bad price in {}", path.display())))?;
        rows.push((slot, price));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{} has no prices", path.display())));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

/// Strictly feasible stationary point for the expected constraints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlaterCertificate {
    /// Margin; `+inf` (serialised as `null`) when there are no constraints.
    #[serde(with = "inf_as_null")]
    pub eta: f64,
    pub theta_tilde: Vec<OccupancyVector>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SlaterCertificate {
    /// Largest `sum_k <g_ik, theta_k> + eta` over constraints; should be `<= 0`.
    pub fn residual(&self, mean_g: &[Vec<Vec<f64>>]) -> f64 {
        mean_g
            .iter()
            .map(|gi| {
                gi.iter()
                    .zip(&self.theta_tilde)
                    .map(|(g, th)| g.iter().zip(th.as_slice()).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>()
                    + self.eta
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Solves `max eta  s.t.  sum_k <E g_i, theta_k> <= -eta`; fails unless `eta > 0`.
pub fn certify_slater(models: &[MdpModel], mean_g: &[Vec<Vec<f64>>]) -> Result<SlaterCertificate> {
    let (eta, theta_tilde) = slater_margin(models, mean_g)?;
    if !(eta > 0.0) {
        return Err(Error::Slater { eta });
    }
    Ok(SlaterCertificate { eta, theta_tilde })
}

/// A materialised scenario: models, function path and certificate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub models: Vec<MdpModel>,
    pub functions: FunctionModel,
    pub certificate: SlaterCertificate,
    /// `r` from the unichain check of every model (max over models).
    pub mixing_r: usize,
}

impl Scenario {
    pub fn psi(&self) -> f64 {
        self.config.psi
    }

    pub fn num_constraints(&self) -> usize {
        self.functions.num_constraints()
    }

    pub fn pairs(&self) -> Vec<usize> {
        self.models.iter().map(MdpModel::num_pairs).collect()
    }

    /// FNV-1a over the canonical JSON of models and function path.
    pub fn content_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let models = serde_json::to_vec(&self.models).expect("models serialise");
        let functions = serde_json::to_vec(&self.functions).expect("functions serialise");
        for byte in models.iter().chain(&functions) {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

fn lp_dot(table: &[Vec<f64>], theta: &[OccupancyVector]) -> f64 {
    table
        .iter()
        .zip(theta)
        .map(|(t, th)| t.iter().zip(th.as_slice()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn synthetic_attempt(cfg: &ScenarioConfig, attempt: u64) -> Result<(Vec<MdpModel>, FunctionModel)> {
    let psi = cfg.psi;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(attempt);
    let models = cfg
        .sizes
        .iter()
        .map(|s| generate_unichain_mdp(*s, cfg.mixing_delta, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let table = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<Vec<f64>> {
        cfg.sizes
            .iter()
            .map(|s| (0..s.pairs()).map(|_| scale * psi * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect()
    };
    let base = table(&mut rng, 0.8);

    // Constraint tables lean against the penalty, then get shifted so the
    // unconstrained penalty minimiser sits outside the feasible set.
    let no_constraints: Vec<Vec<Vec<f64>>> = Vec::new();
    let free = best_stationary(&models, &base, &no_constraints)?;
    let free_theta = crate::baseline::split_point(&models, &free.point);
    let tradeoff = cfg.constraint_process.tradeoff.clamp(0.0, 1.0);
    let mut g_mean = Vec::with_capacity(cfg.num_constraints);
    for _ in 0..cfg.num_constraints {
        let noise = table(&mut rng, 0.8);
        let raw: Vec<Vec<f64>> = base
            .iter()
            .zip(&noise)
            .map(|(b, n)| b.iter().zip(n).map(|(b, n)| -tradeoff * b + (1.0 - tradeoff) * n).collect())
            .collect();
        let lowest = best_stationary(&models, &raw, &no_constraints)?.value;
        let at_free = lp_dot(&raw, &free_theta);
        let level = lowest + cfg.constraint_process.tightness * (at_free - lowest);
        let k = models.len() as f64;
        g_mean.push(
            raw.into_iter()
                .map(|row| row.into_iter().map(|v| (v - level / k).clamp(-psi, psi)).collect())
                .collect(),
        );
    }

    let penalty = match cfg.penalty_process {
        PenaltyKind::Iid => PenaltyProcess::Iid {
            mean: base,
            std: cfg.penalty_std,
        },
        PenaltyKind::SinusoidalAdversarial => {
            let amplitude = table(&mut rng, 0.3).into_iter().map(|r| r.into_iter().map(f64::abs).collect()).collect();
            let phase = table(&mut rng, std::f64::consts::PI / psi);
            PenaltyProcess::SinusoidalAdversarial {
                base,
                amplitude,
                phase,
                period: cfg.period,
                phase_noise: cfg.phase_noise,
            }
        }
        PenaltyKind::MarkovModulated => {
            let mut regimes = vec![base];
            for _ in 1..cfg.regimes.max(1) {
                let shift = table(&mut rng, 0.3);
                let r = regimes[0]
                    .iter()
                    .zip(&shift)
                    .map(|(b, s)| b.iter().zip(s).map(|(b, s)| (b + s).clamp(-psi, psi)).collect())
                    .collect();
                regimes.push(r);
            }
            PenaltyProcess::MarkovModulated {
                regimes,
                stay_prob: cfg.regime_stay_prob,
                std: cfg.penalty_std,
            }
        }
    };
    let constraint = ConstraintProcess {
        mean: g_mean,
        std: cfg.constraint_process.std,
        shared_noise: false,
    };
    Ok((models, FunctionModel::new(psi, cfg.seed, penalty, constraint)))
}

fn datacenter_parts(cfg: &ScenarioConfig, dc: &DataCenterParams) -> Result<(Vec<MdpModel>, FunctionModel)> {
    let server = datacenter_server(dc.leakage)?;
    let k = cfg.num_mdps;
    let models = vec![server; k];
    let active: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..6).map(|i| if i / 2 == ACTIVE { 1.0 } else { 0.0 }).collect())
        .collect();
    let penalty = match &dc.price_trace {
        Some(path) => PenaltyProcess::PriceTrace {
            indicator: active.clone(),
            prices: load_price_trace(path)?,
        },
        None => PenaltyProcess::SinusoidalAdversarial {
            base: active.iter().map(|r| r.iter().map(|v| v * dc.mean_price).collect()).collect(),
            amplitude: active.iter().map(|r| r.iter().map(|v| v * dc.price_amplitude).collect()).collect(),
            phase: vec![vec![0.0; 6]; k],
            period: dc.price_period,
            phase_noise: cfg.phase_noise,
        },
    };
    let g = active
        .iter()
        .map(|r| r.iter().map(|v| dc.arrival_rate / k as f64 - dc.service_rate * v).collect())
        .collect();
    let constraint = ConstraintProcess {
        mean: vec![g],
        std: cfg.constraint_process.std,
        shared_noise: true,
    };
    Ok((models, FunctionModel::new(cfg.psi, cfg.seed, penalty, constraint)))
}

fn binding(models: &[MdpModel], functions: &FunctionModel) -> Result<bool> {
    if functions.num_constraints() == 0 {
        return Ok(false);
    }
    let sol = best_stationary(models, &functions.mean_penalty(1), &functions.mean_constraint())?;
    Ok(sol.duals.iter().any(|d| *d > 1e-6))
}

/// Generates models and function path from a configuration, regenerating
/// until the Slater margin and activity requirements hold.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut last_eta = f64::NAN;
    let attempts = if cfg.datacenter.is_some() { 1 } else { MAX_ATTEMPTS };
    for attempt in 0..attempts {
        let (models, functions) = match &cfg.datacenter {
            Some(dc) => datacenter_parts(cfg, dc)?,
            None => synthetic_attempt(cfg, attempt)?,
        };
        let mut mixing_r = 1;
        for m in &models {
            mixing_r = mixing_r.max(check_unichain(m, 8)?.r);
        }
        let mean_g = functions.mean_constraint();
        let certificate = match certify_slater(&models, &mean_g) {
            Ok(c) => c,
            Err(Error::Slater { eta }) => {
                last_eta = eta;
                continue;
            }
            Err(e) => return Err(e),
        };
        if certificate.eta < cfg.constraint_process.min_margin {
            last_eta = certificate.eta;
            continue;
        }
        if cfg.constraint_process.require_active && cfg.num_constraints > 0 && !binding(&models, &functions)? {
            continue;
        }
        return Ok(Scenario {
            config: cfg.clone(),
            models,
            functions,
            certificate,
            mixing_r,
        });
    }
    if last_eta.is_nan() || last_eta > 0.0 {
        Err(Error::InfeasibleScenario(format!(
            "no scenario met the margin/activity requirements in {attempts} attempts"
        )))
    } else {
        Err(Error::Slater { eta: last_eta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_one_shares_the_positive_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = generate_unichain_mdp(MdpSize { states: 3, actions: 3 }, 1.0, &mut rng).unwrap();
        for a in 1..3 {
            assert!((m.transition(a) - m.transition(0)).amax() < 1e-15);
        }
    }

    #[test]
    fn generated_mdp_passes_unichain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = generate_unichain_mdp(MdpSize { states: 3, actions: 2 }, 0.2, &mut rng).unwrap();
        assert_eq!(check_unichain(&m, 3).unwrap().r, 1);
    }

    #[test]
    fn mixture_entries_are_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let delta = 0.3;
        // min entry of P_hat is at least 0.1 / (n * 1.1)
        let n = 4;
        let m = generate_unichain_mdp(MdpSize { states: n, actions: 2 }, delta, &mut rng).unwrap();
        let floor = delta * 0.1 / (n as f64 * 1.1);
        for p in m.kernel() {
            assert!(p.iter().all(|v| *v >= floor - 1e-15));
        }
    }

    #[test]
    fn clipped_mean_without_noise_is_a_clamp() {
        assert_eq!(clipped_normal_mean(2.0, 0.0, 1.0), 1.0);
        assert_eq!(clipped_normal_mean(-0.3, 0.0, 1.0), -0.3);
    }

    #[test]
    fn clipped_mean_matches_quadrature() {
        for &(mu, std) in &[(0.0, 0.3), (0.8, 0.5), (-0.9, 0.4), (0.2, 2.0)] {
            // Trapezoid rule on clip(mu + std z) * phi(z) over [-12, 12].
            let steps = 200_000;
            let h = 24.0 / steps as f64;
            let mut acc = 0.0;
            for i in 0..=steps {
                let z = -12.0 + i as f64 * h;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                acc += w * (mu + std * z).clamp(-1.0, 1.0) * phi;
            }
            let quad = acc * h;
            assert!((clipped_normal_mean(mu, std, 1.0) - quad).abs() < 1e-8, "{mu} {std}");
        }
    }

    #[test]
    fn datacenter_server_is_unichain() {
        let m = datacenter_server(0.01).unwrap();
        assert!(check_unichain(&m, 2).is_ok());
    }
}
