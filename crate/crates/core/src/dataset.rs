//! Supervised corpus: solver trajectories replayed through the environment.
//!
//! A solution becomes a trajectory by replaying it step by step. At each
//! state the optimal subset holds every feasible pair whose operation is
//! next on its machine in the solution and can start now at its solution
//! time. The solution is first left-shifted so that every operation starts
//! as soon as its job and machine predecessors finish.
//!
//! # Files (`sevalds-v1`)
//!
//! A dataset directory holds `manifest.json`, `instances.txt`, `train.txt`
//! and `valid.txt`. The text files start with a `sevalds-v1 <kind>` line
//! and a `#` column line. Instance rows are tab separated:
//!
//! ```text
//! id  jobs  machines  kind  outcome  reference  job rows ("m d m d|m d ...")
//! ```
//!
//! Sample rows are tab separated; lists use `,` between items, `;` between
//! table rows, `:` inside pairs and `-` for an empty list or a pending
//! start:
//!
//! ```text
//! instance step kind starts feasible optimal target
//! job_features machine_features op_features op_ids
//! op_machine op_machine_features precedence op_job machine_job machine_job_features
//! ```
//!
//! Feature columns follow [`JOB_COLS`], [`MACHINE_COLS`], [`OP_COLS`] and
//! [`EDGE_COLS`] in raw units; normalization is applied when a sample is
//! turned into network input.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{generate, JsspInstance, Operation, Schedule, Time};
use crate::model::StateInput;
use crate::oracle::{solve_exact, solve_from, ProofStatus, SolveLimits};
use crate::state::{
    AssignmentSubset, FeasibleAssignment, FeatureTable, SchedState, StateError, StateFeatures, EDGE_COLS, JOB_COLS,
    MACHINE_COLS, OP_COLS,
};

pub const DATASET_FORMAT: &str = "sevalds-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("solution operation ({job}, {op}) is unreachable at step {step}")]
    Unreachable { step: usize, job: usize, op: usize },
    #[error("solution does not match the instance: {0}")]
    BadSolution(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{failed} of {total} instances failed, above the 10% limit")]
    TooManyFailures { failed: usize, total: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Clean,
    Perturbed,
}

impl TrajectoryKind {
    fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::Clean => "clean",
            TrajectoryKind::Perturbed => "perturbed",
        }
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub instance_id: usize,
    pub step: usize,
    pub kind: TrajectoryKind,
    /// Start times so far, flat job-major order.
    pub starts: Vec<Option<Time>>,
    pub feasible: Vec<FeasibleAssignment>,
    /// Indices into `feasible`.
    pub optimal: Vec<usize>,
    /// Raw features of the state.
    pub features: StateFeatures,
}

impl TrajectorySample {
    /// Uniform mass over the optimal subset.
    pub fn target(&self) -> Vec<f64> {
        let w = 1.0 / self.optimal.len() as f64;
        (0..self.feasible.len()).map(|i| if self.optimal.contains(&i) { w } else { 0.0 }).collect()
    }

    pub fn optimal_bits(&self) -> Vec<bool> {
        (0..self.feasible.len()).map(|i| self.optimal.contains(&i)).collect()
    }

    pub fn state(&self, instance: &Arc<JsspInstance>) -> Result<SchedState, StateError> {
        SchedState::from_starts(instance.clone(), self.starts.clone())
    }

    pub fn optimal_subset(&self) -> Result<AssignmentSubset, StateError> {
        AssignmentSubset::from_indices(&self.feasible, &self.optimal)
    }

    pub fn input(&self, instance: &Arc<JsspInstance>) -> Result<StateInput, StateError> {
        Ok(StateInput::from_state(&self.state(instance)?, &self.feasible))
    }
}

/// Start times with every operation moved as early as its job and machine
/// order allow. Operations already placed in `prefix` keep their starts.
fn left_shift(prefix: &SchedState, solution: &Schedule) -> Result<Vec<Time>, DatasetError> {
    let inst = prefix.instance();
    if solution.starts().len() != inst.num_jobs()
        || solution.starts().iter().zip(inst.jobs()).any(|(s, ops)| s.len() != ops.len())
    {
        return Err(DatasetError::BadSolution("shape differs from instance".into()));
    }
    let mut order: Vec<(Time, usize, usize)> = Vec::with_capacity(inst.num_ops());
    for (j, ops) in inst.jobs().iter().enumerate() {
        for i in prefix.next_op(j)..ops.len() {
            order.push((solution.start(j, i), j, i));
        }
    }
    order.sort_unstable();
    let mut job_end: Vec<Time> = (0..inst.num_jobs()).map(|j| prefix.job_time(j)).collect();
    let mut mach_end: Vec<Time> = (0..inst.num_machines()).map(|m| prefix.machine_time(m)).collect();
    let mut shifted: Vec<Time> = prefix.starts().iter().map(|s| s.unwrap_or(0)).collect();
    for (_, j, i) in order {
        let op = inst.op(j, i);
        let s = job_end[j].max(mach_end[op.machine]);
        shifted[inst.flat_index(j, i)] = s;
        job_end[j] = s + op.duration;
        mach_end[op.machine] = s + op.duration;
    }
    Ok(shifted)
}

/// Replays `solution` from the initial state.
pub fn extract_trajectory(instance: &Arc<JsspInstance>, solution: &Schedule) -> Result<Vec<TrajectorySample>, DatasetError> {
    extract_from(SchedState::new(instance.clone()), solution, TrajectoryKind::Clean, 0)
}

/// Replays the pending part of `solution` from `state`.
pub fn extract_from(
    mut state: SchedState,
    solution: &Schedule,
    kind: TrajectoryKind,
    instance_id: usize,
) -> Result<Vec<TrajectorySample>, DatasetError> {
    let target = left_shift(&state, solution)?;
    let inst = state.shared_instance().clone();
    // Pending operations of each machine in solution order.
    let mut queues: Vec<Vec<(Time, usize, usize)>> = vec![Vec::new(); inst.num_machines()];
    for (j, ops) in inst.jobs().iter().enumerate() {
        for i in state.next_op(j)..ops.len() {
            queues[ops[i].machine].push((target[inst.flat_index(j, i)], j, i));
        }
    }
    for q in &mut queues {
        q.sort_unstable();
        q.reverse();
    }
    let mut samples = Vec::new();
    while !state.is_terminal() {
        let feasible = state.feasible_assignments()?;
        let optimal: Vec<usize> = feasible
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                queues[a.machine].last().is_some_and(|&(t, j, i)| j == a.job && i == a.op && t == a.earliest_start)
            })
            .map(|(k, _)| k)
            .collect();
        if optimal.is_empty() {
            let (j, i) = queues.iter().filter_map(|q| q.last()).min().map(|&(_, j, i)| (j, i)).unwrap_or((0, 0));
            return Err(DatasetError::Unreachable { step: samples.len(), job: j, op: i });
        }
        let action = AssignmentSubset::from_indices(&feasible, &optimal)?;
        samples.push(TrajectorySample {
            instance_id,
            step: samples.len(),
            kind,
            starts: state.starts().to_vec(),
            features: state.feature_matrices(),
            feasible,
            optimal,
        });
        for a in action.items() {
            queues[a.machine].pop();
        }
        state.apply_in_place(&action)?;
    }
    Ok(samples)
}

/// Settings for the perturbation augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub limits: SolveLimits,
    /// Upper bound of the uniform random-action count.
    pub max_perturbations: usize,
    /// Optimal prefix length is drawn from `0..=fraction * ops`.
    pub optimal_fraction: f64,
    /// Re-solved makespan over the original optimum above this is rejected.
    pub ratio_limit: f64,
    /// Overrides the random-action count.
    pub forced_perturbations: Option<usize>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            limits: SolveLimits::default(),
            max_perturbations: 30,
            optimal_fraction: 0.7,
            ratio_limit: 1.1,
            forced_perturbations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    /// The unperturbed instance was not solved to optimality.
    InitialTimeout,
    /// The perturbed residual problem was not solved to optimality.
    ResolveTimeout,
    /// The perturbed optimum exceeded the ratio limit.
    RatioExceeded,
}

impl Rejection {
    pub fn code(self) -> &'static str {
        match self {
            Rejection::InitialTimeout => "rejected-initial-timeout",
            Rejection::ResolveTimeout => "rejected-resolve-timeout",
            Rejection::RatioExceeded => "rejected-ratio",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub score_optimal: Time,
    /// Optimal makespan after the perturbation, when it was re-solved.
    pub new_score: Option<Time>,
    pub optimal_prefix: usize,
    pub perturbations: usize,
    pub result: Result<Vec<TrajectorySample>, Rejection>,
}

impl PerturbOutcome {
    pub fn ratio(&self) -> Option<f64> {
        self.new_score.map(|s| f64::from(s) / f64::from(self.score_optimal))
    }
}

fn apply_single(state: &mut SchedState, job: usize) -> Result<(), StateError> {
    let pair = state
        .all_pairs()
        .into_iter()
        .find(|a| a.job == job)
        .ok_or(StateError::Stale { job, machine: 0 })?;
    state.apply_in_place(&AssignmentSubset::new(vec![pair])?)
}

/// Solves, replays a random-length optimal prefix, applies random
/// assignments, re-solves the rest, and keeps the re-optimized trajectory
/// when its makespan stays within the ratio limit.
pub fn perturb_and_extract<R: Rng>(
    instance: &Arc<JsspInstance>,
    instance_id: usize,
    rng: &mut R,
    config: &PerturbConfig,
) -> Result<PerturbOutcome, DatasetError> {
    let base = solve_exact(instance, config.limits);
    let mut outcome = PerturbOutcome {
        score_optimal: base.makespan,
        new_score: None,
        optimal_prefix: 0,
        perturbations: 0,
        result: Err(Rejection::InitialTimeout),
    };
    if base.status != ProofStatus::Optimal {
        return Ok(outcome);
    }
    let clean = extract_trajectory(instance, &base.schedule)?;
    let order: Vec<usize> = clean.iter().flat_map(|s| s.optimal.iter().map(|&k| s.feasible[k].job).collect::<Vec<_>>()).collect();

    let total = instance.num_ops();
    let n = rng.gen_range(0..=(config.optimal_fraction * total as f64).floor() as usize);
    let mut state = SchedState::new(instance.clone());
    for &job in &order[..n] {
        apply_single(&mut state, job)?;
    }
    let drawn = config.forced_perturbations.unwrap_or_else(|| rng.gen_range(1..=config.max_perturbations));
    // Leave at least one decision for the re-optimized trajectory.
    let r = drawn.min(state.pending_ops().saturating_sub(1));
    for _ in 0..r {
        let feasible = state.feasible_assignments()?;
        let pick = feasible[rng.gen_range(0..feasible.len())];
        state.apply_in_place(&AssignmentSubset::new(vec![pick])?)?;
    }
    outcome.optimal_prefix = n;
    outcome.perturbations = r;

    let resolved = solve_from(&state, config.limits);
    if resolved.status != ProofStatus::Optimal {
        outcome.result = Err(Rejection::ResolveTimeout);
        return Ok(outcome);
    }
    outcome.new_score = Some(resolved.makespan);
    if f64::from(resolved.makespan) / f64::from(base.makespan) > config.ratio_limit {
        outcome.result = Err(Rejection::RatioExceeded);
        return Ok(outcome);
    }
    outcome.result = Ok(extract_from(state, &resolved.schedule, TrajectoryKind::Perturbed, instance_id)?);
    Ok(outcome)
}

/// Corpus generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub count: usize,
    pub jobs: usize,
    pub machines: usize,
    pub seed: u64,
    pub perturbed_frac: f64,
    pub time_limit: f64,
    pub valid_frac: f64,
}

impl BuildConfig {
    pub fn new(count: usize, jobs: usize, machines: usize, seed: u64) -> Self {
        Self { count, jobs, machines, seed, perturbed_frac: 0.5, time_limit: 10.0, valid_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: BuildConfig,
    pub normalization: String,
    pub clean_trajectories: usize,
    pub perturbed_trajectories: usize,
    pub perturbed_attempts: usize,
    pub rejected_ratio: usize,
    pub rejected_timeout: usize,
    pub rejection_rate: f64,
    pub oracle_failures: usize,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub mean_samples_per_trajectory: f64,
}

/// One generated instance and what became of it.
#[derive(Debug, Clone)]
pub struct InstanceRecord {
    pub id: usize,
    pub instance: Arc<JsspInstance>,
    pub kind: TrajectoryKind,
    pub outcome: String,
    /// Optimal makespan of the unperturbed instance, when proven.
    pub reference: Option<Time>,
}

/// Deterministic per-index seed (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Generated {
    record: InstanceRecord,
    samples: Vec<TrajectorySample>,
    failed: bool,
    rejection: Option<Rejection>,
}

fn generate_one(config: &BuildConfig, id: usize) -> Result<Generated, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id as u64));
    let instance = Arc::new(generate(config.jobs, config.machines, rng.gen()));
    let perturbed = rng.gen_bool(config.perturbed_frac.clamp(0.0, 1.0));
    let limits = SolveLimits::with_time_limit(config.time_limit);
    let kind = if perturbed { TrajectoryKind::Perturbed } else { TrajectoryKind::Clean };
    let mut g = Generated {
        record: InstanceRecord { id, instance: instance.clone(), kind, outcome: "ok".into(), reference: None },
        samples: Vec::new(),
        failed: false,
        rejection: None,
    };
    if perturbed {
        let pc = PerturbConfig { limits, ..PerturbConfig::default() };
        let out = perturb_and_extract(&instance, id, &mut rng, &pc)?;
        if out.result != Err(Rejection::InitialTimeout) {
            g.record.reference = Some(out.score_optimal);
        }
        match out.result {
            Ok(s) => g.samples = s,
            Err(r) => {
                g.failed = r == Rejection::InitialTimeout;
                g.rejection = Some(r);
                g.record.outcome = r.code().into();
            }
        }
    } else {
        let res = solve_exact(&instance, limits);
        if res.status == ProofStatus::Optimal {
            g.record.reference = Some(res.makespan);
            let mut s = extract_trajectory(&instance, &res.schedule)?;
            s.iter_mut().for_each(|x| x.instance_id = id);
            g.samples = s;
        } else {
            g.failed = true;
            g.record.outcome = "failed-timeout".into();
        }
    }
    Ok(g)
}

/// Loaded or freshly built corpus.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<InstanceRecord>,
    pub train: Vec<TrajectorySample>,
    pub valid: Vec<TrajectorySample>,
}

impl Dataset {
    pub fn instance(&self, id: usize) -> &Arc<JsspInstance> {
        &self.instances[id].instance
    }

    /// Reads a dataset directory and checks it against its manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if manifest.format != DATASET_FORMAT {
            return Err(DatasetError::Manifest(format!("format {} is not {DATASET_FORMAT}", manifest.format)));
        }
        let instances = parse_instances(&fs::read_to_string(dir.join("instances.txt"))?)?;
        let by_id: HashMap<usize, Arc<JsspInstance>> = instances.iter().map(|r| (r.id, r.instance.clone())).collect();
        let train = parse_samples("train.txt", &fs::read_to_string(dir.join("train.txt"))?, &by_id)?;
        let valid = parse_samples("valid.txt", &fs::read_to_string(dir.join("valid.txt"))?, &by_id)?;
        if train.len() != manifest.train_samples || valid.len() != manifest.valid_samples {
            return Err(DatasetError::Manifest(format!(
                "manifest lists {}/{} samples, files hold {}/{}",
                manifest.train_samples,
                manifest.valid_samples,
                train.len(),
                valid.len()
            )));
        }
        if instances.len() != manifest.config.count {
            return Err(DatasetError::Manifest(format!(
                "manifest lists {} instances, file holds {}",
                manifest.config.count,
                instances.len()
            )));
        }
        Ok(Self { manifest, instances, train, valid })
    }
}

/// Generates, labels and writes a corpus. Instances are processed in
/// parallel; output is identical for identical configs.
pub fn build_dataset(config: &BuildConfig, out: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let generated: Vec<Generated> =
        (0..config.count).into_par_iter().map(|i| generate_one(config, i)).collect::<Result<_, _>>()?;
    let failed = generated.iter().filter(|g| g.failed).count();
    if failed * 10 > config.count {
        return Err(DatasetError::TooManyFailures { failed, total: config.count });
    }
    let mut clean = 0;
    let mut perturbed = 0;
    let mut attempts = 0;
    let mut rejected_ratio = 0;
    let mut rejected_timeout = 0;
    let mut samples = Vec::new();
    let mut instances = Vec::with_capacity(generated.len());
    for g in generated {
        if g.record.kind == TrajectoryKind::Perturbed && g.rejection != Some(Rejection::InitialTimeout) {
            attempts += 1;
        }
        match g.rejection {
            Some(Rejection::RatioExceeded) => rejected_ratio += 1,
            Some(Rejection::ResolveTimeout) => rejected_timeout += 1,
            _ => {}
        }
        if !g.samples.is_empty() {
            match g.record.kind {
                TrajectoryKind::Clean => clean += 1,
                TrajectoryKind::Perturbed => perturbed += 1,
            }
        }
        samples.extend(g.samples);
        instances.push(g.record);
    }
    let trajectories = clean + perturbed;
    let mean = if trajectories == 0 { 0.0 } else { samples.len() as f64 / trajectories as f64 };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
    samples.shuffle(&mut rng);
    let n_valid = ((samples.len() as f64) * config.valid_frac).round() as usize;
    let train = samples.split_off(n_valid);
    let valid = samples;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config: *config,
        normalization: "time columns / (max duration * max ops per job); remaining_ops / max ops per job; \
                        machine counts / jobs; ratios unscaled"
            .into(),
        clean_trajectories: clean,
        perturbed_trajectories: perturbed,
        perturbed_attempts: attempts,
        rejected_ratio,
        rejected_timeout,
        rejection_rate: if attempts == 0 { 0.0 } else { (rejected_ratio + rejected_timeout) as f64 / attempts as f64 },
        oracle_failures: failed,
        train_samples: train.len(),
        valid_samples: valid.len(),
        mean_samples_per_trajectory: mean,
    };
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(out.join("manifest.json"), json + "\n")?;
    fs::write(out.join("instances.txt"), format_instances(&instances))?;
    fs::write(out.join("train.txt"), format_samples(&train))?;
    fs::write(out.join("valid.txt"), format_samples(&valid))?;
    Ok(Dataset { manifest, instances, train, valid })
}

const INSTANCE_COLUMNS: &str = "# id\tjobs\tmachines\tkind\toutcome\treference\trows";
const SAMPLE_COLUMNS: &str = "# instance\tstep\tkind\tstarts\tfeasible\toptimal\ttarget\tjob_features\t\
machine_features\top_features\top_ids\top_machine\top_machine_features\tprecedence\top_job\tmachine_job\t\
machine_job_features";

fn format_instances(records: &[InstanceRecord]) -> String {
    let mut s = format!("{DATASET_FORMAT} instances\n{INSTANCE_COLUMNS}\n");
    for r in records {
        let inst = &r.instance;
        let rows: Vec<String> = inst
            .jobs()
            .iter()
            .map(|ops| ops.iter().map(|o| format!("{} {}", o.machine, o.duration)).collect::<Vec<_>>().join(" "))
            .collect();
        let reference = r.reference.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            inst.num_jobs(),
            inst.num_machines(),
            r.kind.as_str(),
            r.outcome,
            reference,
            rows.join("|")
        );
    }
    s
}

fn list<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

fn table_str(t: &FeatureTable) -> String {
    if t.rows() == 0 {
        return "-".into();
    }
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

fn pairs_str(p: &[(usize, usize)]) -> String {
    list(p.iter().map(|(a, b)| format!("{a}:{b}")))
}

fn sample_line(x: &TrajectorySample) -> String {
    let f = &x.features;
    let fields = [
        x.instance_id.to_string(),
        x.step.to_string(),
        x.kind.as_str().to_string(),
        list(x.starts.iter().map(|s| s.map_or("-".into(), |t| t.to_string()))),
        list(x.feasible.iter().map(|a| format!("{}:{}", a.job, a.machine))),
        list(x.optimal.iter().map(|i| i.to_string())),
        list(x.target().iter().map(|t| t.to_string())),
        table_str(&f.job),
        table_str(&f.machine),
        table_str(&f.op),
        list(f.op_ids.iter().map(|i| i.to_string())),
        pairs_str(&f.op_machine),
        table_str(&f.op_machine_feat),
        pairs_str(&f.precedence),
        pairs_str(&f.op_job),
        pairs_str(&f.machine_job),
        table_str(&f.machine_job_feat),
    ];
    fields.join("\t")
}

fn format_samples(samples: &[TrajectorySample]) -> String {
    let mut s = format!("{DATASET_FORMAT} samples\n{SAMPLE_COLUMNS}\n");
    for x in samples {
        s.push_str(&sample_line(x));
        s.push('\n');
    }
    s
}

fn body_lines<'a>(file: &str, text: &'a str, kind: &str) -> Result<impl Iterator<Item = (usize, &'a str)>, DatasetError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != format!("{DATASET_FORMAT} {kind}") {
        return Err(DatasetError::Parse { file: file.into(), line: 1, msg: format!("bad header {header:?}") });
    }
    Ok(lines.filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty()).map(|(i, l)| (i + 1, l)))
}

fn parse_instances(text: &str) -> Result<Vec<InstanceRecord>, DatasetError> {
    let file = "instances.txt";
    let mut out = Vec::new();
    for (line, l) in body_lines(file, text, "instances")? {
        let err = |msg: String| DatasetError::Parse { file: file.into(), line, msg };
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        let (id, n, m) = (num(f[0])?, num(f[1])?, num(f[2])?);
        let kind = match f[3] {
            "clean" => TrajectoryKind::Clean,
            "perturbed" => TrajectoryKind::Perturbed,
            k => return Err(err(format!("unknown kind {k:?}"))),
        };
        let reference = if f[5] == "-" { None } else { Some(f[5].parse::<Time>().map_err(|e| err(e.to_string()))?) };
        let mut jobs = Vec::with_capacity(n);
        for row in f[6].split('|') {
            let nums: Vec<usize> = row.split_whitespace().map(num).collect::<Result<_, _>>()?;
            if nums.len() % 2 != 0 {
                return Err(err("odd number of values in a job row".into()));
            }
            jobs.push(nums.chunks(2).map(|c| Operation { machine: c[0], duration: c[1] as Time }).collect());
        }
        if jobs.len() != n {
            return Err(err(format!("{} job rows for {n} jobs", jobs.len())));
        }
        let instance = JsspInstance::new(m, jobs).map_err(|e| err(e.to_string()))?;
        out.push(InstanceRecord { id, instance: Arc::new(instance), kind, outcome: f[4].into(), reference });
    }
    Ok(out)
}

fn parse_list<T, E: std::fmt::Display>(s: &str, f: impl Fn(&str) -> Result<T, E>) -> Result<Vec<T>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| f(x).map_err(|e| format!("{x:?}: {e}"))).collect()
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>, String> {
    parse_list(s, |x| {
        let (a, b) = x.split_once(':').ok_or("missing ':'")?;
        Ok::<_, String>((a.parse().map_err(|_| "bad index")?, b.parse().map_err(|_| "bad index")?))
    })
}

fn parse_table(s: &str, cols: usize) -> Result<FeatureTable, String> {
    let mut t = FeatureTable::new(cols);
    if s == "-" {
        return Ok(t);
    }
    for row in s.split(';') {
        let v = parse_list(row, |x| x.parse::<f64>())?;
        if v.len() != cols {
            return Err(format!("row has {} columns, expected {cols}", v.len()));
        }
        t.push(&v);
    }
    Ok(t)
}

fn parse_sample(l: &str, instances: &HashMap<usize, Arc<JsspInstance>>) -> Result<TrajectorySample, String> {
    let f: Vec<&str> = l.split('\t').collect();
    if f.len() != 17 {
        return Err(format!("expected 17 fields, found {}", f.len()));
    }
    let id: usize = f[0].parse().map_err(|_| "bad instance id")?;
    let inst = instances.get(&id).ok_or_else(|| format!("unknown instance {id}"))?;
    let step: usize = f[1].parse().map_err(|_| "bad step")?;
    let kind = match f[2] {
        "clean" => TrajectoryKind::Clean,
        "perturbed" => TrajectoryKind::Perturbed,
        k => return Err(format!("unknown kind {k:?}")),
    };
    let starts = parse_list(f[3], |x| if x == "-" { Ok(None) } else { x.parse::<Time>().map(Some) })?;
    let pairs = parse_pairs(f[4])?;
    let optimal = parse_list(f[5], |x| x.parse::<usize>())?;
    let target = parse_list(f[6], |x| x.parse::<f64>())?;
    let features = StateFeatures {
        job: parse_table(f[7], JOB_COLS.len())?,
        machine: parse_table(f[8], MACHINE_COLS.len())?,
        op: parse_table(f[9], OP_COLS.len())?,
        op_ids: parse_list(f[10], |x| x.parse::<usize>())?,
        op_machine: parse_pairs(f[11])?,
        op_machine_feat: parse_table(f[12], EDGE_COLS.len())?,
        precedence: parse_pairs(f[13])?,
        op_job: parse_pairs(f[14])?,
        machine_job: parse_pairs(f[15])?,
        machine_job_feat: parse_table(f[16], EDGE_COLS.len())?,
    };
    let state = SchedState::from_starts(inst.clone(), starts.clone()).map_err(|e| e.to_string())?;
    let feasible = state.feasible_assignments().map_err(|e| e.to_string())?;
    if feasible.iter().map(|a| (a.job, a.machine)).collect::<Vec<_>>() != pairs {
        return Err("stored feasible list differs from the replayed state".into());
    }
    if state.feature_matrices() != features {
        return Err("stored features differ from the replayed state".into());
    }
    if optimal.is_empty() || optimal.iter().any(|&i| i >= feasible.len()) {
        return Err("optimal indices out of range".into());
    }
    let sample = TrajectorySample { instance_id: id, step, kind, starts, feasible, optimal, features };
    AssignmentSubset::from_indices(&sample.feasible, &sample.optimal).map_err(|e| e.to_string())?;
    if sample.target() != target {
        return Err("stored target is not uniform over the optimal subset".into());
    }
    Ok(sample)
}

fn parse_samples(
    file: &str,
    text: &str,
    instances: &HashMap<usize, Arc<JsspInstance>>,
) -> Result<Vec<TrajectorySample>, DatasetError> {
    body_lines(file, text, "samples")?
        .map(|(line, l)| parse_sample(l, instances).map_err(|msg| DatasetError::Parse { file: file.into(), line, msg }))
        .collect()
}
