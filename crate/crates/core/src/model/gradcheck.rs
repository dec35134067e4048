use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::net::{true_score_bits, Model, ModelError, StateInput, TrainBatch};
use super::tape::Tape;
use crate::instance::generate;
use crate::state::{AssignmentSubset, SchedState};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("non-finite gradient in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Relative error of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorError>,
    /// Elements whose difference step was shrunk to stay off a kink.
    pub shrunk: usize,
    /// Elements where every step tried still crossed a kink.
    pub unresolved: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    /// Largest error among tensors whose analytic gradient norm exceeds `min_norm`.
    pub fn max_rel_error_above(&self, min_norm: f64) -> f64 {
        self.tensors.iter().filter(|t| t.analytic_norm > min_norm).map(|t| t.rel_error).fold(0.0, f64::max)
    }

    /// Largest error among tensors whose name starts with `prefix`.
    pub fn max_for(&self, prefix: &str) -> f64 {
        self.tensors.iter().filter(|t| t.name.starts_with(prefix)).map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

/// Denominator floor for the relative error. Some tensors have an exactly
/// zero gradient (a key bias under softmax, say) and central differences
/// there return pure round-off.
pub const NORM_FLOOR: f64 = 1e-6;

/// Loss value and the kink signature of the pass.
fn total_loss(model: &Model<f64>, batch: &TrainBatch<f64>) -> (f64, u64) {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, false);
    let l = model.losses(&mut tape, &p, batch, false);
    let mut v = tape.value(l.policy).data[0];
    if let Some(s) = l.self_eval {
        v += tape.value(s).data[0];
    }
    (v, tape.kink_signature())
}

/// Attempts per element; each retry divides the step by 10.
const STEP_RETRIES: usize = 3;

/// Compares analytic gradients of policy KL plus self-evaluation MSE
/// against central differences with step `h`, for every parameter tensor.
///
/// The self-evaluation path is not detached here, so HGNN tensors are
/// checked through both heads. LeakyReLU in the attention scores is not
/// differentiable at zero; when a perturbed pass lands on a different
/// linear piece than the unperturbed one, the step for that element is
/// shrunk tenfold, up to three times.
pub fn gradient_check(model: &Model<f64>, batch: &TrainBatch<f64>, h: f64) -> Result<GradReport, GradCheckError> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, true);
    let l = model.losses(&mut tape, &p, batch, false);
    let mut roots = vec![l.policy];
    roots.extend(l.self_eval);
    let grads = tape.backward(&roots);

    let base = total_loss(model, batch).1;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let (mut shrunk, mut unresolved) = (0, 0);
    for id in model.params().ids() {
        let spec = model.params().spec(id).clone();
        let analytic = grads.get(p.var(id)).map(|g| g.data.clone()).unwrap_or_else(|| vec![0.0; spec.rows * spec.cols]);
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(GradCheckError::NonFinite(spec.name));
        }
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params().value(id).data[i];
            let mut step = h;
            for attempt in 0..=STEP_RETRIES {
                probe.params_mut().value_mut(id).data[i] = orig + step;
                let (plus, sp) = total_loss(&probe, batch);
                probe.params_mut().value_mut(id).data[i] = orig - step;
                let (minus, sm) = total_loss(&probe, batch);
                *slot = (plus - minus) / (2.0 * step);
                if sp == base && sm == base {
                    shrunk += usize::from(attempt > 0);
                    break;
                }
                if attempt == STEP_RETRIES {
                    unresolved += 1;
                }
                step /= 10.0;
            }
            probe.params_mut().value_mut(id).data[i] = orig;
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let an = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        tensors.push(TensorError { name: spec.name, rel_error: diff / an.max(nn).max(NORM_FLOOR), analytic_norm: an });
    }
    Ok(GradReport { tensors, shrunk, unresolved })
}

/// A few random mid-rollout states of a small instance with random
/// targets and subsets, for gradient checks and tests.
pub fn random_check_batch(seed: u64, states: usize) -> TrainBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut subsets = Vec::new();
    while inputs.len() < states {
        let n = rng.gen_range(2..=4);
        let m = rng.gen_range(2..=4);
        let inst = Arc::new(generate(n, m, rng.gen()));
        let mut state = SchedState::new(inst);
        let steps = rng.gen_range(0..n * m / 2);
        for _ in 0..steps {
            let feas = state.feasible_assignments().expect("non-terminal");
            let pick = *feas.choose(&mut rng).expect("non-empty");
            state.apply_in_place(&AssignmentSubset::new(vec![pick]).expect("singleton")).expect("valid");
        }
        let feas = state.feasible_assignments().expect("non-terminal");
        let k = feas.len();
        // Strictly positive targets keep the KL away from its clamp.
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let opt: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
        let s = inputs.len();
        for _ in 0..3 {
            let mut bits: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
            bits[rng.gen_range(0..k)] = true;
            let score = true_score_bits(&bits, &opt).expect("non-empty");
            subsets.push((s, bits, score));
        }
        targets.push(raw.iter().map(|r| r / z).collect::<Vec<f64>>());
        inputs.push(StateInput::from_state(&state, &feas));
    }
    let refs: Vec<&StateInput> = inputs.iter().collect();
    let trefs: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    TrainBatch::new(&refs, &trefs, &subsets).expect("consistent batch")
}
