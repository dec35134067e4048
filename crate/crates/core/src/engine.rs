//! Training loop, subset samplers and model-driven rollouts.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{derive_seed, Dataset, TrajectorySample};
use crate::instance::{makespan, JsspInstance, Schedule, Time};
use crate::model::tape::Tape;
use crate::model::{
    true_score_bits, Checkpoint, CheckpointError, GraphBatch, Group, Mat, Model, ModelConfig, ModelError,
    PolicyOutput, StateInput, SubsetBatch, TrainBatch,
};
use crate::state::{AssignmentSubset, FeasibleAssignment, SchedState, StateError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, last_good: Box<Checkpoint> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// How sampled inference candidates are sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Keep adding until no compatible assignment is left.
    #[default]
    Maximal,
    /// Stop each sampled candidate after a uniform number of assignments.
    RandomK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradient norm limit, applied separately to each update.
    pub clip_norm: f64,
    /// Candidate count at inference.
    pub candidates: usize,
    pub candidate_mode: CandidateMode,
    /// Random subsets per sample for the self-evaluation loss.
    pub se_subsets: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            candidates: 16,
            candidate_mode: CandidateMode::Maximal,
            se_subsets: 16,
            seed: 0,
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.candidates == 0 {
            return bad("candidate count must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer moments must lie in [0, 1)");
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Losses of one epoch. Validation values are absent without a
/// validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_kl: f64,
    pub train_mse: f64,
    pub valid_kl: Option<f64>,
    pub valid_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochMetrics>,
    pub wall_time: Duration,
}

impl TrainOutcome {
    /// Epoch with the lowest validation KL.
    pub fn best_epoch(&self) -> Option<&EpochMetrics> {
        self.log
            .iter()
            .filter(|m| m.valid_kl.is_some())
            .min_by(|a, b| a.valid_kl.partial_cmp(&b.valid_kl).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Random subsets for the self-evaluation loss, with their true scores.
///
/// Each subset walks the feasible list in order and takes every
/// compatible pair with probability `q ~ U(0.3, 0.9)`.
pub fn sample_training_subsets<R: Rng>(
    feasible: &[FeasibleAssignment],
    optimal: &[bool],
    rng: &mut R,
    count: usize,
) -> Vec<(Vec<bool>, f64)> {
    let mut out = Vec::with_capacity(count);
    if feasible.is_empty() {
        return out;
    }
    while out.len() < count {
        let q = rng.gen_range(0.3..0.9);
        let mut bits = vec![false; feasible.len()];
        let mut taken: Vec<usize> = Vec::new();
        for (i, a) in feasible.iter().enumerate() {
            let free = taken.iter().all(|&k| feasible[k].job != a.job && feasible[k].machine != a.machine);
            if free && rng.gen_bool(q) {
                bits[i] = true;
                taken.push(i);
            }
        }
        if taken.is_empty() {
            continue;
        }
        let score = true_score_bits(&bits, optimal).expect("non-empty subset");
        out.push((bits, score));
    }
    out
}

fn compatible(feasible: &[FeasibleAssignment], chosen: &[usize], i: usize) -> bool {
    chosen.iter().all(|&k| feasible[k].job != feasible[i].job && feasible[k].machine != feasible[i].machine)
}

/// Greedy maximal subset: descending probability, lower index first on
/// ties, skipping conflicts.
pub fn greedy_indices(probs: &[f64], feasible: &[FeasibleAssignment]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..feasible.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut chosen = Vec::new();
    for i in order {
        if compatible(feasible, &chosen, i) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn sampled_indices<R: Rng>(probs: &[f64], feasible: &[FeasibleAssignment], limit: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..feasible.len()).collect();
    let mut chosen = Vec::new();
    while !pool.is_empty() && chosen.len() < limit {
        let total: f64 = pool.iter().map(|&i| probs[i]).sum();
        let pos = if total > 0.0 && total.is_finite() {
            let mut x = rng.gen_range(0.0..total);
            let mut pos = pool.len() - 1;
            for (p, &i) in pool.iter().enumerate() {
                if x < probs[i] {
                    pos = p;
                    break;
                }
                x -= probs[i];
            }
            pos
        } else {
            rng.gen_range(0..pool.len())
        };
        let i = pool.swap_remove(pos);
        chosen.push(i);
        pool.retain(|&k| compatible(feasible, &chosen, k));
        // Keep draws independent of swap_remove's reordering.
        pool.sort_unstable();
    }
    chosen.sort_unstable();
    chosen
}

/// Candidate index lists; the first is always the greedy subset.
pub fn candidate_indices<R: Rng>(
    probs: &[f64],
    feasible: &[FeasibleAssignment],
    n: usize,
    mode: CandidateMode,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    if feasible.is_empty() || n == 0 {
        return Vec::new();
    }
    let greedy = greedy_indices(probs, feasible);
    let mut out = Vec::with_capacity(n);
    out.push(greedy.clone());
    while out.len() < n {
        let limit = match mode {
            CandidateMode::Maximal => usize::MAX,
            CandidateMode::RandomK => rng.gen_range(1..=greedy.len()),
        };
        out.push(sampled_indices(probs, feasible, limit, rng));
    }
    out
}

/// `n` candidate subsets drawn from the policy distribution.
pub fn sample_candidate_subsets<R: Rng>(
    output: &PolicyOutput,
    feasible: &[FeasibleAssignment],
    n: usize,
    mode: CandidateMode,
    rng: &mut R,
) -> Result<Vec<AssignmentSubset>, StateError> {
    candidate_indices(&output.probs, feasible, n, mode, rng)
        .iter()
        .map(|idx| AssignmentSubset::from_indices(feasible, idx))
        .collect()
}

struct Adam {
    m: Vec<Mat<f32>>,
    v: Vec<Mat<f32>>,
    t: i32,
}

impl Adam {
    fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<Mat<f32>> = model.params().values().iter().map(|v| Mat::zeros(v.rows, v.cols)).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, model: &mut Model<f32>, grads: &[Option<Mat<f32>>], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.lr as f32;
        let eps = cfg.eps as f32;
        for (i, value) in model.params_mut().values_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                value.data[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

/// Scales each update's gradients to norm at most `limit`. The policy
/// update covers the encoder and policy head; the self-evaluation update
/// covers its head alone.
fn clip(model: &Model<f32>, grads: &mut [Option<Mat<f32>>], limit: f64) {
    let specs = model.params().specs();
    for groups in [&[Group::Hgnn, Group::Policy][..], &[Group::SelfEval][..]] {
        let members: Vec<usize> = (0..specs.len()).filter(|&i| groups.contains(&specs[i].group)).collect();
        let norm = members
            .iter()
            .filter_map(|&i| grads[i].as_ref())
            .map(|g| g.data.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > limit {
            let s = (limit / norm) as f32;
            for &i in &members {
                if let Some(g) = &mut grads[i] {
                    g.data.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
    }
}

struct Prepared {
    inputs: Vec<StateInput>,
    targets: Vec<Vec<f64>>,
    optimal: Vec<Vec<bool>>,
    feasible: Vec<Vec<FeasibleAssignment>>,
}

fn prepare(data: &Dataset, samples: &[TrajectorySample]) -> Result<Prepared, EngineError> {
    let mut p = Prepared { inputs: Vec::new(), targets: Vec::new(), optimal: Vec::new(), feasible: Vec::new() };
    for s in samples {
        p.inputs.push(s.input(data.instance(s.instance_id))?);
        p.targets.push(s.target());
        p.optimal.push(s.optimal_bits());
        p.feasible.push(s.feasible.clone());
    }
    Ok(p)
}

fn make_batch<R: Rng>(p: &Prepared, idx: &[usize], se_subsets: usize, rng: &mut R) -> Result<TrainBatch<f32>, ModelError> {
    let mut subsets = Vec::with_capacity(idx.len() * se_subsets);
    for (s, &i) in idx.iter().enumerate() {
        for (bits, score) in sample_training_subsets(&p.feasible[i], &p.optimal[i], rng, se_subsets) {
            subsets.push((s, bits, score));
        }
    }
    let inputs: Vec<&StateInput> = idx.iter().map(|&i| &p.inputs[i]).collect();
    let targets: Vec<&[f64]> = idx.iter().map(|&i| p.targets[i].as_slice()).collect();
    TrainBatch::new(&inputs, &targets, &subsets)
}

/// Forward-only losses as (kl, states, mse, subsets).
fn batch_losses(model: &Model<f32>, batch: &TrainBatch<f32>) -> (f64, usize, f64, usize) {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, false);
    let l = model.losses(&mut tape, &p, batch, true);
    let kl = f64::from(tape.value(l.policy).data[0]);
    let mse = l.self_eval.map_or(0.0, |v| f64::from(tape.value(v).data[0]));
    (kl, batch.graph.num_states(), mse, batch.scores.len())
}

/// Trains both heads on `data.train`; validation losses come from
/// `data.valid` with subsets fixed across epochs. With `out`, the model
/// is saved after every epoch, so a non-finite abort leaves the last
/// good epoch on disk.
pub fn train(data: &Dataset, config: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome, EngineError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let start = Instant::now();
    let train_set = prepare(data, &data.train)?;
    let valid_set = prepare(data, &data.valid)?;
    let mut model = Model::<f32>::new(config.model, derive_seed(config.seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut valid_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let valid_batches: Vec<TrainBatch<f32>> = (0..valid_set.inputs.len())
        .collect::<Vec<_>>()
        .chunks(config.batch_size)
        .map(|c| make_batch(&valid_set, c, config.se_subsets, &mut valid_rng))
        .collect::<Result<_, _>>()?;
    let meta = |log: &[EpochMetrics]| {
        serde_json::json!({
            "train": config,
            "dataset": data.manifest,
            "epochs_done": log.len(),
            "last": log.last(),
        })
    };
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut kl_sum, mut states, mut mse_sum, mut subs) = (0.0, 0, 0.0, 0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = make_batch(&train_set, chunk, config.se_subsets, &mut rng)?;
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape, true);
            let l = model.losses(&mut tape, &p, &batch, true);
            let kl = f64::from(tape.value(l.policy).data[0]);
            let mse = l.self_eval.map_or(0.0, |v| f64::from(tape.value(v).data[0]));
            let mut roots = vec![l.policy];
            roots.extend(l.self_eval);
            let mut grads = tape.backward(&roots);
            let mut g: Vec<Option<Mat<f32>>> = p.vars().iter().map(|&v| grads.take(v)).collect();
            let finite = g.iter().flatten().all(Mat::all_finite);
            if !kl.is_finite() || !mse.is_finite() || !finite {
                let last_good = Box::new(match out {
                    Some(path) if epoch > 1 => Checkpoint::load(path)?,
                    _ => Checkpoint::new(model, meta(&log)),
                });
                return Err(EngineError::NonFinite { epoch, batch: b, last_good });
            }
            clip(&model, &mut g, config.clip_norm);
            adam.step(&mut model, &g, config);
            kl_sum += kl * chunk.len() as f64;
            states += chunk.len();
            mse_sum += mse * batch.scores.len() as f64;
            subs += batch.scores.len();
        }
        let (mut vkl, mut vn, mut vmse, mut vs) = (0.0, 0, 0.0, 0);
        for batch in &valid_batches {
            let (kl, n, mse, s) = batch_losses(&model, batch);
            vkl += kl * n as f64;
            vn += n;
            vmse += mse * s as f64;
            vs += s;
        }
        let metrics = EpochMetrics {
            epoch,
            train_kl: kl_sum / states as f64,
            train_mse: if subs == 0 { 0.0 } else { mse_sum / subs as f64 },
            valid_kl: (vn > 0).then(|| vkl / vn as f64),
            valid_mse: (vs > 0).then(|| vmse / vs as f64),
        };
        log.push(metrics);
        if let Some(path) = out {
            Checkpoint::new(model.clone(), meta(&log)).save(path)?;
        }
    }
    let checkpoint = Checkpoint::new(model, meta(&log));
    Ok(TrainOutcome { checkpoint, log, wall_time: start.elapsed() })
}

/// A finished rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub schedule: Schedule,
    pub makespan: Time,
    /// Transitions taken.
    pub steps: usize,
}

fn finish(state: SchedState, steps: usize) -> Result<Rollout, EngineError> {
    let schedule = state.to_schedule()?;
    let makespan = makespan(state.instance(), &schedule).map_err(|e| StateError::BadStarts(e.to_string()))?;
    Ok(Rollout { schedule, makespan, steps })
}

/// Picks one subset per step: the greedy candidate when `n == 1`, else the
/// best self-evaluation score among `n` candidates (first index on ties).
/// Embeddings are computed once per step and shared by both heads.
pub fn seval_rollout(
    instance: &Arc<JsspInstance>,
    model: &Model<f32>,
    n: usize,
    mode: CandidateMode,
    seed: u64,
) -> Result<Rollout, EngineError> {
    if n == 0 {
        return Err(EngineError::Config("candidate count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SchedState::new(instance.clone());
    let mut steps = 0;
    while !state.is_terminal() {
        let feasible = state.feasible_assignments()?;
        let input = StateInput::from_state(&state, &feasible);
        input.validate()?;
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false);
        let g = GraphBatch::<f32>::new(&[&input]);
        let emb = model.hgnn(&mut tape, &p, &g);
        let logits = model.policy_logits(&mut tape, &p, &g, emb);
        let probs = PolicyOutput::from_logits(tape.value(logits).data.iter().map(|&x| f64::from(x)).collect()).probs;
        let candidates = candidate_indices(&probs, &feasible, n, mode, &mut rng);
        let pick = if candidates.len() == 1 {
            0
        } else {
            let tagged: Vec<(usize, Vec<bool>)> = candidates
                .iter()
                .map(|c| (0, (0..feasible.len()).map(|i| c.contains(&i)).collect()))
                .collect();
            let sb = SubsetBatch::new(&g, &tagged)?;
            let scores = model.self_eval(&mut tape, &p, &g, emb, &sb);
            let scores = &tape.value(scores).data;
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            best
        };
        state.apply_in_place(&AssignmentSubset::from_indices(&feasible, &candidates[pick])?)?;
        steps += 1;
    }
    finish(state, steps)
}

/// Applies the greedy maximal subset at every step.
pub fn greedy_rollout(instance: &Arc<JsspInstance>, model: &Model<f32>) -> Result<Rollout, EngineError> {
    seval_rollout(instance, model, 1, CandidateMode::Maximal, 0)
}

/// Uniformly random subsets from [`sample_training_subsets`].
pub fn random_rollout<R: Rng>(instance: &Arc<JsspInstance>, rng: &mut R) -> Result<Rollout, EngineError> {
    let mut state = SchedState::new(instance.clone());
    let mut steps = 0;
    while !state.is_terminal() {
        let feasible = state.feasible_assignments()?;
        let none = vec![false; feasible.len()];
        let (bits, _) = sample_training_subsets(&feasible, &none, rng, 1).remove(0);
        let idx: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        state.apply_in_place(&AssignmentSubset::from_indices(&feasible, &idx)?)?;
        steps += 1;
    }
    finish(state, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, BuildConfig};
    use crate::instance::{generate, parse_standard, validate_schedule};
    use crate::state::is_conflict_free;

    const WORKED_4X4: &str = "4 4\n3 5 1 6 0 3 2 2\n3 8 0 3\n2 3 0 4 3 5\n1 6 3 4 2 5\n";

    fn state_with(text: &str) -> (Arc<JsspInstance>, Vec<FeasibleAssignment>) {
        let inst = Arc::new(parse_standard(text).unwrap());
        let f = SchedState::new(inst.clone()).feasible_assignments().unwrap();
        (inst, f)
    }

    #[test]
    fn training_subsets_score_one_when_all_optimal() {
        let (_, f) = state_with(WORKED_4X4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (bits, score) in sample_training_subsets(&f, &vec![true; f.len()], &mut rng, 200) {
            assert_eq!(score, 1.0);
            let idx: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
            assert!(!idx.is_empty() && is_conflict_free(&f, &idx));
        }
    }

    #[test]
    fn training_subsets_of_a_single_pair() {
        let (_, f) = state_with("1 1\n0 5\n");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (bits, _) in sample_training_subsets(&f, &[true], &mut rng, 20) {
            assert_eq!(bits, vec![true]);
        }
    }

    #[test]
    fn training_scores_cover_the_unit_interval() {
        let (_, f) = state_with(WORKED_4X4);
        let opt = vec![true, false, true, false];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = sample_training_subsets(&f, &opt, &mut rng, 10_000).into_iter().map(|x| x.1).collect();
        assert!(scores.contains(&0.0) && scores.contains(&1.0));
        assert!(scores.iter().any(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn candidates_respect_conflicts() {
        let (_, f) = state_with(WORKED_4X4);
        let out = PolicyOutput::from_logits(vec![0.3, 0.2, -0.1, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = sample_candidate_subsets(&out, &f, 64, CandidateMode::Maximal, &mut rng).unwrap();
        assert_eq!(c.len(), 64);
        for s in &c {
            assert!(!(s.contains_pair(0, 3) && s.contains_pair(1, 3)));
            assert_eq!(s.len(), 3);
        }
        let k = sample_candidate_subsets(&out, &f, 64, CandidateMode::RandomK, &mut rng).unwrap();
        assert!(k.iter().any(|s| s.len() < 3));
        assert_eq!(k[0], c[0]);
    }

    #[test]
    fn single_pair_gives_identical_candidates() {
        let (_, f) = state_with("1 1\n0 5\n");
        let out = PolicyOutput::from_logits(vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = sample_candidate_subsets(&out, &f, 16, CandidateMode::Maximal, &mut rng).unwrap();
        assert!(c.iter().all(|s| s.len() == 1 && s.contains_pair(0, 0)));
    }

    #[test]
    fn delta_policy_candidates_match_greedy() {
        let (_, f) = state_with(WORKED_4X4);
        let out = PolicyOutput::from_logits(vec![60.0, -60.0, 60.0, 60.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = candidate_indices(&out.probs, &f, 16, CandidateMode::Maximal, &mut rng);
        assert_eq!(c[0], vec![0, 2, 3]);
        assert!(c.iter().all(|x| *x == c[0]));
    }

    #[test]
    fn rollouts_on_one_by_one() {
        let inst = Arc::new(parse_standard("1 1\n0 5\n").unwrap());
        let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        assert_eq!(greedy_rollout(&inst, &model).unwrap().makespan, 5);
        assert_eq!(seval_rollout(&inst, &model, 16, CandidateMode::Maximal, 1).unwrap().makespan, 5);
    }

    #[test]
    fn rollouts_are_feasible_and_short() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..30 {
            let inst = Arc::new(generate(4, 4, seed));
            let g = greedy_rollout(&inst, &model).unwrap();
            let s = seval_rollout(&inst, &model, 4, CandidateMode::Maximal, seed).unwrap();
            let r = random_rollout(&inst, &mut rng).unwrap();
            for x in [&g, &s, &r] {
                assert!(validate_schedule(&inst, &x.schedule).is_empty());
                assert!(x.steps <= inst.num_ops());
            }
            assert!(s.steps < inst.num_ops());
            assert_eq!(seval_rollout(&inst, &model, 1, CandidateMode::Maximal, 99).unwrap(), g);
            assert_eq!(greedy_rollout(&inst, &model).unwrap(), g);
        }
    }

    fn tiny_data(count: usize) -> (Dataset, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        (build_dataset(&BuildConfig::new(count, 3, 3, 4), dir.path()).unwrap(), dir)
    }

    #[test]
    fn training_is_deterministic() {
        let (data, _dir) = tiny_data(8);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, model: ModelConfig::tiny(), seed: 5, ..TrainConfig::default() };
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.id(), b.checkpoint.id());
        let c = train(&data, &TrainConfig { seed: 6, ..cfg }, None).unwrap();
        assert_ne!(a.checkpoint.id(), c.checkpoint.id());
    }

    #[test]
    fn memorizes_a_single_sample() {
        let (mut data, _dir) = tiny_data(2);
        data.train.retain(|s| s.feasible.len() > 1);
        data.train.truncate(1);
        data.valid.clear();
        let cfg = TrainConfig { epochs: 200, batch_size: 1, lr: 3e-3, model: ModelConfig::tiny(), ..TrainConfig::default() };
        let out = train(&data, &cfg, None).unwrap();
        let first = out.log[0].train_kl;
        let last = out.log.last().unwrap().train_kl;
        assert!(last < 0.01, "kl {first} -> {last}");
    }

    #[test]
    fn checkpoint_written_each_epoch() {
        let (data, _dir) = tiny_data(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = TrainConfig { epochs: 2, batch_size: 4, model: ModelConfig::tiny(), ..TrainConfig::default() };
        let out = train(&data, &cfg, Some(&path)).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.id(), out.checkpoint.id());
        assert_eq!(back.meta["epochs_done"], 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let (data, _dir) = tiny_data(2);
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { candidates: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&data, &cfg, None), Err(EngineError::Config(_))));
        }
    }
}
