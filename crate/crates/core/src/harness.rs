//! Experiment orchestration: scenario directories, single runs with CSV and
//! JSON output, regret against the stationary benchmark, horizon sweeps and
//! the verification suite.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{best_stationary, perturbation_gap_check, split_point, theory_constants, TheoryConstants};
use crate::controller::{init_controller, ControllerParams, InequalityChecker, InequalityViolation, SlotRecord};
use crate::error::{Error, Result};
use crate::mdp::{check_unichain, mixing_contraction_check, MdpModel, OccupancyVector};
use crate::oracle::{active_set_projection, pure_policy_minimum, vertex_enumeration};
use crate::projection::{build_polyhedron, project_theta, DEFAULT_TOL};
use crate::scenario::{certify_slater, FunctionModel, PenaltyProcess, Scenario, ScenarioConfig, SlaterCertificate, SCHEMA_VERSION};

const CONFIG_FILE: &str = "scenario.json";
const MODELS_FILE: &str = "models.json";
const FUNCTIONS_FILE: &str = "functions.json";
const CERTIFICATE_FILE: &str = "certificate.json";
const METADATA_FILE: &str = "metadata.json";

const NOISE_PATH_SALT: u64 = 0x6e6f_6973_6570_6174;

/// Environment variable capping sweep parallelism.
pub const WORKERS_ENV: &str = "OCMDP_WORKERS";

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub schema_version: u32,
    pub content_hash: String,
    pub generator_families: String,
    pub mixing_r: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_scenario(scn: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), &scn.config)?;
    write_json(&dir.join(MODELS_FILE), &scn.models)?;
    write_json(&dir.join(FUNCTIONS_FILE), &scn.functions)?;
    write_json(&dir.join(CERTIFICATE_FILE), &scn.certificate)?;
    write_json(
        &dir.join(METADATA_FILE),
        &ScenarioMetadata {
            schema_version: SCHEMA_VERSION,
            content_hash: scn.content_hash(),
            generator_families: scn.functions.families.clone(),
            mixing_r: scn.mixing_r,
        },
    )
}

/// Generates a scenario from a configuration file and writes it to `out`.
pub fn generate_scenario_dir(config: &Path, out: &Path) -> Result<Scenario> {
    let cfg: ScenarioConfig = read_json(config)?;
    let scn = crate::scenario::generate(&cfg)?;
    save_scenario(&scn, out)?;
    Ok(scn)
}

fn check_shapes(models: &[MdpModel], functions: &FunctionModel, cfg: &ScenarioConfig) -> Result<()> {
    let pairs: Vec<usize> = models.iter().map(MdpModel::num_pairs).collect();
    if models.len() != cfg.num_mdps || functions.num_constraints() != cfg.num_constraints {
        return Err(Error::Input("scenario files disagree on K or m".into()));
    }
    let sample = functions.sample(0);
    let ok = |t: &[Vec<f64>]| t.len() == pairs.len() && t.iter().zip(&pairs).all(|(r, p)| r.len() == *p);
    if !ok(&sample.f) || !sample.g.iter().all(|g| ok(g)) {
        return Err(Error::Input("function tables do not match the model sizes".into()));
    }
    Ok(())
}

/// Reads and validates a scenario directory. Models are revalidated on
/// load, the certificate must have a positive margin, and the content hash
/// must match the metadata.
pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let config: ScenarioConfig = read_json(&dir.join(CONFIG_FILE))?;
    config.validate()?;
    let models: Vec<MdpModel> = read_json(&dir.join(MODELS_FILE))?;
    let functions: FunctionModel = read_json(&dir.join(FUNCTIONS_FILE))?;
    let certificate: SlaterCertificate = read_json(&dir.join(CERTIFICATE_FILE))?;
    let meta: ScenarioMetadata = read_json(&dir.join(METADATA_FILE))?;
    check_shapes(&models, &functions, &config)?;
    if !(certificate.eta > 0.0) {
        return Err(Error::Slater { eta: certificate.eta });
    }
    let scn = Scenario {
        config,
        models,
        functions,
        certificate,
        mixing_r: meta.mixing_r,
    };
    let hash = scn.content_hash();
    if hash != meta.content_hash {
        return Err(Error::Input(format!(
            "scenario content hash {hash} does not match recorded {}",
            meta.content_hash
        )));
    }
    Ok(scn)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub horizon: usize,
    pub seed: u64,
    /// Defaults to `sqrt(T)`.
    pub v: Option<f64>,
    /// Defaults to `T`.
    pub alpha: Option<f64>,
    /// Check the per-slot inequalities and fail on the first violation.
    pub check: bool,
    /// Random comparison points per MDP and slot for the subproblem check.
    pub check_samples: usize,
    pub check_slack: f64,
    /// Keep per-slot rows (needed for CSV output).
    pub keep_rows: bool,
}

impl RunOptions {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            v: None,
            alpha: None,
            check: false,
            check_samples: 20,
            check_slack: 1e-6,
            keep_rows: true,
        }
    }

    pub fn params(&self) -> Result<ControllerParams> {
        let auto = ControllerParams::auto(self.horizon)?;
        ControllerParams::new(self.v.unwrap_or(auto.v), self.alpha.unwrap_or(auto.alpha), self.horizon)
    }
}

/// Totals over a range of slots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub first_slot: usize,
    pub slots: usize,
    /// `sum_t sum_k f_t^{(k)}(s_t, a_t)`.
    pub penalty_realized: f64,
    /// `sum_t sum_k <f_t^{(k)}, theta_t^{(k)}>`.
    pub penalty_theta: f64,
    /// `sum_t sum_k <E f_t^{(k)}, theta_t^{(k)}>`.
    pub penalty_expected: f64,
    /// `G_{i,T} = sum_t sum_k g_{i,t}^{(k)}(s_t, a_t)`.
    pub constraint_realized: Vec<f64>,
    /// `sum_t sum_k <g_{i,t}^{(k)}, theta_t^{(k)}>`.
    pub constraint_theta: Vec<f64>,
}

impl Totals {
    fn new(first_slot: usize, m: usize) -> Self {
        Self {
            first_slot,
            slots: 0,
            constraint_realized: vec![0.0; m],
            constraint_theta: vec![0.0; m],
            ..Self::default()
        }
    }

    fn add(&mut self, row: &SlotRecord, expected: f64) {
        self.slots += 1;
        self.penalty_realized += row.f_real.iter().sum::<f64>();
        self.penalty_theta += row.f_dot_theta.iter().sum::<f64>();
        self.penalty_expected += expected;
        for (i, g) in row.g_real.iter().enumerate() {
            self.constraint_realized[i] += g.iter().sum::<f64>();
        }
        for (i, g) in row.g_dot_theta.iter().enumerate() {
            self.constraint_theta[i] += g.iter().sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalitySummary {
    pub slots_checked: usize,
    pub samples_per_slot: usize,
    pub slack: f64,
    pub violations: Vec<InequalityViolation>,
}

/// Output of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub horizon: usize,
    pub seed: u64,
    pub v: f64,
    pub alpha: f64,
    pub num_mdps: usize,
    pub num_constraints: usize,
    /// Slots `0..T`.
    pub totals: Totals,
    /// Slots `1..T`, skipping the slot played with the initial policy.
    pub totals_from_one: Totals,
    /// `max_t ||Q(t)||_2` over `t = 0..=T`.
    pub max_queue_norm: f64,
    pub final_queues: Vec<f64>,
    pub max_theta_step: f64,
    pub inequalities: Option<InequalitySummary>,
    #[serde(skip)]
    pub rows: Vec<SlotRecord>,
    /// `sum_k <E f_t^{(k)}, theta_t^{(k)}>` per slot.
    #[serde(skip)]
    pub expected_penalty: Vec<f64>,
}

/// Cached `E f_t` for time-invariant penalty processes.
struct ExpectedPenalty<'a> {
    functions: &'a FunctionModel,
    constant: Option<Vec<Vec<f64>>>,
}

impl<'a> ExpectedPenalty<'a> {
    fn new(functions: &'a FunctionModel) -> Self {
        let constant = match functions.penalty {
            PenaltyProcess::Iid { .. } => Some(functions.mean_penalty_at(0)),
            _ => None,
        };
        Self { functions, constant }
    }

    fn dot(&self, t: usize, theta: &[OccupancyVector]) -> f64 {
        let owned;
        let table = match &self.constant {
            Some(c) => c,
            None => {
                owned = self.functions.mean_penalty_at(t);
                &owned
            }
        };
        table
            .iter()
            .zip(theta)
            .map(|(f, th)| f.iter().zip(th.as_slice()).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

fn is_time_invariant(functions: &FunctionModel) -> bool {
    matches!(functions.penalty, PenaltyProcess::Iid { .. })
}

/// Runs the controller on a scenario. Deterministic in
/// `(scenario seed, run seed, T, V, alpha)`.
pub fn run_scenario(scn: &Scenario, opts: &RunOptions) -> Result<RunRecord> {
    let params = opts.params()?;
    let m = scn.num_constraints();
    let k_count = scn.models.len();
    let mut ctl = init_controller(scn.models.clone(), m, params)?;
    ctl.set_tracing(opts.check);
    let mut checker = if opts.check {
        Some(InequalityChecker::new(&ctl, scn.psi(), opts.check_slack, opts.check_samples)?)
    } else {
        None
    };

    let base = splitmix64(scn.config.seed ^ splitmix64(opts.seed));
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(base);
        r.set_stream(s);
        r
    };
    let mut action_rng = stream(0);
    // One transition stream per MDP: next states never see another MDP's draws.
    let mut transition_rngs: Vec<ChaCha8Rng> = (0..k_count).map(|k| stream(1 + k as u64)).collect();
    let mut check_rng = stream(u64::MAX);
    let mut states: Vec<usize> = scn
        .models
        .iter()
        .zip(transition_rngs.iter_mut())
        .map(|(m, r)| r.random_range(0..m.num_states()))
        .collect();

    let functions = scn.functions.with_noise_path(splitmix64(base ^ NOISE_PATH_SALT));
    let expected = ExpectedPenalty::new(&functions);
    let mut totals = Totals::new(0, m);
    let mut totals_from_one = Totals::new(1, m);
    let mut max_q: f64 = 0.0;
    let mut max_step: f64 = 0.0;
    let mut rows = Vec::with_capacity(if opts.keep_rows { opts.horizon } else { 0 });
    let mut expected_series = Vec::with_capacity(if opts.keep_rows { opts.horizon } else { 0 });

    for t in 0..opts.horizon {
        let sample = functions.sample(t);
        ctl.decide(&states, &mut action_rng)?;
        let ef = expected.dot(t, ctl.theta());
        let (row, trace) = ctl.reveal(sample)?;
        if let (Some(c), Some(tr)) = (checker.as_mut(), trace.as_ref()) {
            c.check(tr, &mut check_rng);
            if !c.passed() {
                let c = checker.take().expect("checker present");
                c.into_result()?;
                unreachable!("a failed checker returns an error");
            }
        }
        max_q = max_q.max(row.q_norm);
        max_step = row.theta_step.iter().fold(max_step, |a, b| a.max(*b));
        totals.add(&row, ef);
        if t >= 1 {
            totals_from_one.add(&row, ef);
        }
        for (k, model) in scn.models.iter().enumerate() {
            states[k] = crate::mdp::sample_next_state(model, states[k], row.actions[k], &mut transition_rngs[k])?;
        }
        if opts.keep_rows {
            rows.push(row);
            expected_series.push(ef);
        }
    }
    max_q = max_q.max(ctl.queues().norm());

    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        scenario_hash: scn.content_hash(),
        horizon: opts.horizon,
        seed: opts.seed,
        v: params.v,
        alpha: params.alpha,
        num_mdps: k_count,
        num_constraints: m,
        totals,
        totals_from_one,
        max_queue_norm: max_q,
        final_queues: ctl.queues().values().to_vec(),
        max_theta_step: max_step,
        inequalities: checker.map(|c| InequalitySummary {
            slots_checked: c.slots_checked,
            samples_per_slot: opts.check_samples,
            slack: opts.check_slack,
            violations: c.violations,
        }),
        rows,
        expected_penalty: expected_series,
    })
}

/// Loads a scenario directory and runs it.
pub fn run_experiment(scenario_dir: &Path, opts: &RunOptions) -> Result<RunRecord> {
    let scn = load_scenario(scenario_dir)?;
    run_scenario(&scn, opts)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// One row per `(t, k)` with running totals over rows.
pub fn write_run_csv<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let m = record.num_constraints;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "k", "s", "a", "f_real"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=m).map(|i| format!("g_real_{i}")));
    header.push("f_dot_theta".into());
    header.extend((1..=m).map(|i| format!("g_dot_theta_{i}")));
    header.extend(["q_norm", "theta_step_norm", "cum_f_real", "cum_f_dot_theta"].iter().map(|s| s.to_string()));
    header.extend((1..=m).map(|i| format!("cum_g_real_{i}")));
    header.extend((1..=m).map(|i| format!("cum_g_dot_theta_{i}")));
    w.write_record(&header)?;

    let mut cum_f = 0.0;
    let mut cum_ft = 0.0;
    let mut cum_g = vec![0.0; m];
    let mut cum_gt = vec![0.0; m];
    for row in &record.rows {
        for k in 0..row.states.len() {
            cum_f += row.f_real[k];
            cum_ft += row.f_dot_theta[k];
            let mut fields = vec![
                row.t.to_string(),
                k.to_string(),
                row.states[k].to_string(),
                row.actions[k].to_string(),
                fmt(row.f_real[k]),
            ];
            fields.extend((0..m).map(|i| fmt(row.g_real[i][k])));
            fields.push(fmt(row.f_dot_theta[k]));
            fields.extend((0..m).map(|i| fmt(row.g_dot_theta[i][k])));
            fields.push(fmt(row.q_norm));
            fields.push(fmt(row.theta_step[k]));
            fields.push(fmt(cum_f));
            fields.push(fmt(cum_ft));
            for i in 0..m {
                cum_g[i] += row.g_real[i][k];
                cum_gt[i] += row.g_dot_theta[i][k];
            }
            fields.extend(cum_g.iter().map(|v| fmt(*v)));
            fields.extend(cum_gt.iter().map(|v| fmt(*v)));
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `run.csv` and `run.json` into `dir`.
pub fn write_run_outputs(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join("run.csv"))?;
    write_run_csv(record, std::io::BufWriter::new(file))?;
    write_json(&dir.join("run.json"), record)
}

/// Stationary benchmark of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub schema_version: u32,
    pub scenario_hash: String,
    /// Horizon the penalty means were averaged over; `None` when `E f_t`
    /// does not depend on `t`.
    pub horizon: Option<usize>,
    /// Where the penalty means came from.
    pub mean_source: String,
    pub value: f64,
    pub theta: Vec<OccupancyVector>,
    pub duals: Vec<f64>,
    #[serde(with = "inf_as_null")]
    pub eta: f64,
    pub constants: Option<TheoryConstants>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Best stationary policy for the scenario's expected functions. `horizon`
/// sets the averaging window for time-varying penalties.
pub fn compute_baseline(scn: &Scenario, horizon: usize) -> Result<BaselineReport> {
    let invariant = is_time_invariant(&scn.functions);
    let mean_f = scn.functions.mean_penalty(horizon);
    let mean_g = scn.functions.mean_constraint();
    let sol = best_stationary(&scn.models, &mean_f, &mean_g)?;
    let eta = scn.certificate.eta;
    let constants = if eta.is_finite() {
        Some(theory_constants(scn.num_constraints(), &scn.pairs(), scn.psi(), eta, horizon)?)
    } else {
        None
    };
    Ok(BaselineReport {
        schema_version: SCHEMA_VERSION,
        scenario_hash: scn.content_hash(),
        horizon: if invariant { None } else { Some(horizon) },
        mean_source: "generator expectations".into(),
        value: sol.value,
        theta: split_point(&scn.models, &sol.point),
        duals: sol.duals,
        eta,
        constants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub horizon: usize,
    /// `sum_t <E f_t, theta_t> - T * benchmark` over slots `0..T`.
    pub imaginary: f64,
    /// `sum_t f_t(s_t, a_t) - T * benchmark` over slots `0..T`.
    pub realized: f64,
    /// Both series over slots `1..T`, against `(T - 1) * benchmark`.
    pub imaginary_from_one: f64,
    pub realized_from_one: f64,
    /// `G_{i,T}` over slots `0..T`.
    pub constraint_totals: Vec<f64>,
    /// `max(G_{i,T}, 0)`.
    pub violations: Vec<f64>,
    /// `max(sum_t <g_{i,t}, theta_t>, 0)`.
    pub imaginary_violations: Vec<f64>,
}

pub fn compute_regret(record: &RunRecord, baseline: &BaselineReport) -> Result<RegretReport> {
    if record.scenario_hash != baseline.scenario_hash {
        return Err(Error::Input(format!(
            "run belongs to scenario {} but the benchmark to {}",
            record.scenario_hash, baseline.scenario_hash
        )));
    }
    if let Some(h) = baseline.horizon {
        if h != record.horizon {
            return Err(Error::Input(format!(
                "benchmark averaged over {h} slots, run has {}",
                record.horizon
            )));
        }
    }
    let tot = &record.totals;
    let one = &record.totals_from_one;
    let v = baseline.value;
    Ok(RegretReport {
        horizon: record.horizon,
        imaginary: tot.penalty_expected - tot.slots as f64 * v,
        realized: tot.penalty_realized - tot.slots as f64 * v,
        imaginary_from_one: one.penalty_expected - one.slots as f64 * v,
        realized_from_one: one.penalty_realized - one.slots as f64 * v,
        constraint_totals: tot.constraint_realized.clone(),
        violations: tot.constraint_realized.iter().map(|g| g.max(0.0)).collect(),
        imaginary_violations: tot.constraint_theta.iter().map(|g| g.max(0.0)).collect(),
    })
}

/// Least-squares slope of `ln(max(y, 1))` against `ln(x)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("need at least two matching points for a slope".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1.0).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("horizons must differ".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Statistics of one `(T, seed)` run inside a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub horizon: usize,
    pub seed: u64,
    pub regret: RegretReport,
    pub max_queue_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub horizon: usize,
    pub seeds: usize,
    pub mean_imaginary_regret: f64,
    pub mean_realized_regret: f64,
    /// Seed-mean `G_{i,T}`.
    pub mean_constraint_totals: Vec<f64>,
    /// Seed-mean `max_t ||Q(t)||_2`.
    pub mean_max_queue_norm: f64,
    pub max_max_queue_norm: f64,
    pub constants: Option<TheoryConstants>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub points: Vec<SweepPoint>,
    /// Slope of `ln max(mean imaginary regret, 1)` against `ln T`.
    pub slope: f64,
    pub runs: Vec<SweepRun>,
}

/// Worker count from [`WORKERS_ENV`], defaulting to the rayon default.
pub fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|n: &usize| *n > 0)
}

/// Run seed of sweep run `index`: the scenario seed split-mixed with the index.
pub fn sweep_seed(scenario_seed: u64, index: usize) -> u64 {
    splitmix64(scenario_seed ^ index as u64)
}

/// Runs every `(T, seed)` pair with `V = sqrt(T)`, `alpha = T` and averages
/// per horizon.
pub fn sweep_scenario(scn: &Scenario, horizons: &[usize], seeds: usize) -> Result<SweepResult> {
    if horizons.is_empty() || seeds == 0 {
        return Err(Error::Config("sweep needs at least one horizon and one seed".into()));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep horizons must be strictly increasing".into()));
    }
    let baselines: Vec<BaselineReport> = horizons
        .iter()
        .map(|&t| compute_baseline(scn, t))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..horizons.len())
        .flat_map(|h| (0..seeds).map(move |s| (h, s)))
        .collect();
    let work = || -> Vec<Result<SweepRun>> {
        jobs.par_iter()
            .map(|&(h, s)| {
                let mut opts = RunOptions::new(horizons[h], sweep_seed(scn.config.seed, s));
                opts.keep_rows = false;
                let record = run_scenario(scn, &opts)?;
                Ok(SweepRun {
                    horizon: horizons[h],
                    seed: opts.seed,
                    regret: compute_regret(&record, &baselines[h])?,
                    max_queue_norm: record.max_queue_norm,
                })
            })
            .collect()
    };
    let results = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let runs: Vec<SweepRun> = results.into_iter().collect::<Result<_>>()?;

    let m = scn.num_constraints();
    let points: Vec<SweepPoint> = horizons
        .iter()
        .zip(&baselines)
        .map(|(&t, b)| {
            let cell: Vec<&SweepRun> = runs.iter().filter(|r| r.horizon == t).collect();
            let n = cell.len() as f64;
            let mean = |f: &dyn Fn(&SweepRun) -> f64| cell.iter().map(|r| f(r)).sum::<f64>() / n;
            SweepPoint {
                horizon: t,
                seeds: cell.len(),
                mean_imaginary_regret: mean(&|r| r.regret.imaginary),
                mean_realized_regret: mean(&|r| r.regret.realized),
                mean_constraint_totals: (0..m).map(|i| mean(&|r| r.regret.constraint_totals[i])).collect(),
                mean_max_queue_norm: mean(&|r| r.max_queue_norm),
                max_max_queue_norm: cell.iter().map(|r| r.max_queue_norm).fold(0.0, f64::max),
                constants: b.constants,
            }
        })
        .collect();
    let slope = if points.len() >= 2 {
        loglog_slope(
            &points.iter().map(|p| p.horizon as f64).collect::<Vec<_>>(),
            &points.iter().map(|p| p.mean_imaginary_regret).collect::<Vec<_>>(),
        )?
    } else {
        f64::NAN
    };
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        scenario_hash: scn.content_hash(),
        points,
        slope,
        runs,
    })
}

pub fn sweep_horizons(scenario_dir: &Path, horizons: &[usize], seeds: usize) -> Result<SweepResult> {
    let scn = load_scenario(scenario_dir)?;
    sweep_scenario(&scn, horizons, seeds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, module: &str, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            module: module.into(),
            name: name.into(),
            passed,
            detail,
        });
    }

    fn push_result<T>(&mut self, module: &str, name: &str, r: Result<T>, ok: impl FnOnce(T) -> (bool, String)) {
        match r {
            Ok(v) => {
                let (passed, detail) = ok(v);
                self.push(module, name, passed, detail);
            }
            Err(e) => self.push(module, name, false, e.to_string()),
        }
    }
}

/// Horizon of the run checked inside [`verify_suite`].
pub const VERIFY_HORIZON: usize = 1000;

/// Runs every module check against a scenario directory. Loading failures
/// are reported as named checks rather than errors.
pub fn verify_suite(scenario_dir: &Path) -> VerifyReport {
    let mut report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        checks: Vec::new(),
    };
    match read_json::<Vec<MdpModel>>(&scenario_dir.join(MODELS_FILE)) {
        Ok(_) => report.push("mdp-model", "model-validation", true, "kernels are row-stochastic".into()),
        Err(e) => {
            report.push("mdp-model", "model-validation", false, e.to_string());
            return report;
        }
    }
    let certificate: Result<SlaterCertificate> = read_json(&scenario_dir.join(CERTIFICATE_FILE));
    match &certificate {
        Ok(c) if c.eta > 0.0 => report.push("scenario-env", "slater-certificate", true, format!("eta = {}", c.eta)),
        Ok(c) => {
            report.push("scenario-env", "slater-certificate", false, Error::Slater { eta: c.eta }.to_string());
            return report;
        }
        Err(e) => {
            report.push("scenario-env", "slater-certificate", false, e.to_string());
            return report;
        }
    }
    let scn = match load_scenario(scenario_dir) {
        Ok(s) => s,
        Err(e) => {
            report.push("harness-cli", "scenario-load", false, e.to_string());
            return report;
        }
    };

    // Slater margin recomputed from the expected constraint tables.
    let mean_g = scn.functions.mean_constraint();
    report.push_result("scenario-env", "slater-recomputed", certify_slater(&scn.models, &mean_g), |c| {
        let residual = c.residual(&mean_g);
        (
            (c.eta - scn.certificate.eta).abs() <= 1e-8 * c.eta.abs().max(1.0) && residual <= 1e-8,
            format!("eta = {}, witness residual = {residual:e}", c.eta),
        )
    });

    // Mixing.
    for (k, m) in scn.models.iter().enumerate() {
        report.push_result("mdp-model", &format!("mixing-contraction[{k}]"), check_unichain(m, 8), |est| {
            let ratio = mixing_contraction_check(m, &est, 1000, splitmix64(k as u64));
            let bound = est.contraction_factor() + 1e-12;
            (
                ratio <= bound,
                format!("r = {}, worst ratio {ratio:e} vs bound {bound:e}", est.r),
            )
        });
    }

    // Projection against the exhaustive oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(scn.config.seed));
    for (k, m) in scn.models.iter().enumerate() {
        if m.num_pairs() > 12 {
            report.push("projection", &format!("projection-oracle[{k}]"), true, "skipped: more than 12 pairs".into());
            continue;
        }
        let spec = build_polyhedron(m);
        let mut worst: f64 = 0.0;
        let mut failure = None;
        for _ in 0..20 {
            let y: Vec<f64> = (0..m.num_pairs()).map(|_| rng.random_range(-1.0..1.5)).collect();
            match project_theta(&spec, &y, DEFAULT_TOL) {
                Ok(p) => {
                    let exact = active_set_projection(&spec, &y);
                    let d = p
                        .point
                        .as_slice()
                        .iter()
                        .zip(&exact)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    worst = worst.max(d);
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        match failure {
            Some(f) => report.push("projection", &format!("projection-oracle[{k}]"), false, f),
            None => report.push(
                "projection",
                &format!("projection-oracle[{k}]"),
                worst <= 1e-6,
                format!("max distance {worst:e}"),
            ),
        }
    }

    // LP against pure-policy and vertex enumeration.
    let mean_f = scn.functions.mean_penalty(VERIFY_HORIZON);
    let no_g: Vec<Vec<Vec<f64>>> = Vec::new();
    report.push_result(
        "baseline-lp",
        "unconstrained-vs-pure-policies",
        best_stationary(&scn.models, &mean_f, &no_g),
        |sol| {
            let exact = pure_policy_minimum(&scn.models, &mean_f);
            ((sol.value - exact).abs() <= 1e-9, format!("lp {} vs enumeration {exact}", sol.value))
        },
    );
    let vars: usize = scn.pairs().iter().sum();
    if vars <= 14 {
        report.push_result(
            "baseline-lp",
            "constrained-vs-vertex-enumeration",
            crate::baseline::coupled_lp(&scn.models, &mean_f, &mean_g, 0.0),
            |lp| match (crate::lp::solve_lp(&lp), vertex_enumeration(&lp)) {
                (Ok(sol), Some(exact)) => (
                    (sol.value - exact).abs() <= 1e-8,
                    format!("simplex {} vs vertices {exact}", sol.value),
                ),
                (Err(e), _) => (false, e.to_string()),
                (_, None) => (false, "vertex enumeration found no feasible basis".into()),
            },
        );
    }

    // Perturbation gap at the verification horizon.
    if scn.num_constraints() > 0 {
        let c1 = 2.0 * std::f64::consts::E * scn.mixing_r as f64;
        let slack = c1 * scn.models.len() as f64 * scn.psi() / VERIFY_HORIZON as f64;
        report.push_result(
            "baseline-lp",
            "perturbation-gap",
            perturbation_gap_check(&scn.models, &mean_f, &mean_g, scn.psi(), scn.certificate.eta, slack),
            |g| (true, format!("gap {:e} <= {:e}", g.gap, g.multiplier_bound)),
        );
    }

    // Per-slot inequalities on a full run.
    let mut opts = RunOptions::new(VERIFY_HORIZON, 0);
    opts.check = true;
    opts.keep_rows = false;
    report.push_result("controller", "per-slot-inequalities", run_scenario(&scn, &opts), |r| {
        let checked = r.inequalities.as_ref().map_or(0, |l| l.slots_checked);
        (true, format!("{checked} slots checked"))
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_square_root_data() {
        let s = loglog_slope(&[100.0, 400.0, 1600.0], &[10.0, 20.0, 40.0]).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slope_of_constant_data() {
        let s = loglog_slope(&[100.0, 400.0, 1600.0], &[7.0, 7.0, 7.0]).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn slope_floors_small_values() {
        let s = loglog_slope(&[100.0, 400.0], &[-3.0, 0.5]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn splitmix_decorrelates_neighbours() {
        assert_ne!(splitmix64(1), splitmix64(2));
        assert_eq!(splitmix64(7), splitmix64(7));
    }
}
