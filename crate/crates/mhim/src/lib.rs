//! Masked hard instance mining for attention-based multiple-instance
//! learning, on synthetic bag datasets: a small reverse-mode autodiff core,
//! gated-attention and transformer MIL models, attention-guided masking, a
//! teacher-student trainer with an EMA momentum teacher, evaluation metrics,
//! and a deterministic data generator.

pub mod cli;
pub mod config;
pub mod data;
pub mod masking;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod trainer;
