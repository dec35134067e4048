//! Job-shop scheduling with a subset-proposing policy and a learned subset
//! scorer.
//!
//! The crate is organized bottom-up:
//!
//! * [`instance`]: instances, schedules, file formats, the gap metric;
//! * [`state`]: the scheduling environment and its subset action space;
//! * [`oracle`]: exact and heuristic solvers used for labels and baselines;
//! * [`dataset`]: supervised corpus construction from solver trajectories;
//! * [`model`]: the graph encoder, both heads, losses and checkpoints;
//! * [`engine`]: training, candidate sampling and rollouts;
//! * [`bench`]: corpus evaluation and report artifacts.

pub mod bench;
pub mod dataset;
pub mod engine;
pub mod instance;
pub mod model;
pub mod oracle;
pub mod state;
