//! HGNN encoder, policy and self-evaluation Transformers, losses, and the
//! autodiff they run on.

mod checkpoint;
mod gradcheck;
mod net;
mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT};
pub use gradcheck::{gradient_check, random_check_batch, GradCheckError, GradReport, TensorError};
pub use net::{
    kl_policy_loss, mse_self_eval_loss, true_score, true_score_bits, Embeddings, GraphBatch, Losses, Model,
    ModelConfig, ModelError, PolicyOutput, StateInput, SubsetBatch, TrainBatch,
};
pub use params::{Bound, Group, ParamId, ParamSpec, Params};
pub use tensor::{Mat, Real};
