//! Training framework for hate-speech detection on social-network text.
//!
//! Three training phases share one encoder:
//!
//! 1. continual masked-language-model pre-training on raw posts ([`pipeline::run_phase_cp`]),
//! 2. user-anchored contrastive self-supervision, optionally mixed with a
//!    label-aware auxiliary contrastive term ([`pipeline::run_phase_ua`]),
//! 3. fine-tuning with contextual regularization from thread and timeline
//!    neighbours ([`pipeline::run_phase_cr`]).
//!
//! Inference is context free: [`pipeline::infer`] only needs a trained model.
//!
//! The bundled [`model::ToyEncoder`] is a small transformer with a hashing
//! tokenizer so that every loss, sampler and metric can be exercised on a
//! laptop. Pretrained encoders plug in through the [`model::Encoder`] trait.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod text;

pub use config::{OptimizerKind, Phase, TaskKind, TrainConfig};
pub use error::{Error, Result};
pub use graph::{Label, Post, PostId, SocialGraph, ThreadId, UserId};
pub use model::{Embedding, Logits, Model, ToyEncoder};
