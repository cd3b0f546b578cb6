//! Continual relation extraction workbench.
//!
//! The crate implements a class-incremental training pipeline for relation
//! extraction at desk scale: a corpus layer (ingestion plus a synthetic
//! generator that plants entity-type shortcuts), an adversarial class
//! augmentation stage (hybrid and reversed negative classes), a from-scratch
//! differentiable classifier with an expandable head, a two-stage rehearsal
//! trainer (initial training on new data, then memory replay), and the
//! forgetting diagnostics built on top of per-relation F1 trajectories
//! (forgetting rate, prototype similarity, bad-case scans, retrieval tests).
//!
//! Everything is deterministic for a fixed seed. Independent jobs (seed
//! sweeps, retrieval tests, batch encoding) run data-parallel when the
//! `parallel` feature is enabled (default) and fall back to sequential
//! iteration without it.

pub mod augment;
pub mod corpus;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod trainer;

pub use corpus::{Dataset, Instance, RelId, Relation, Span, SynthConfig, Task, TaskStream};
pub use model::ModelState;
