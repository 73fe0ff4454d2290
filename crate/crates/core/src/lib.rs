//! Scaling-law toolkit: fit loss laws to training runs, extract
//! compute-efficient frontiers, model batch-size and learning-rate optima,
//! and turn the fitted laws into training recommendations.
//!
//! The closed-form pieces are generic over [`scalar::Real`] (`f32` or
//! `f64`); fitting and run handling work in `f64`.

pub mod advisor;
pub mod artifact;
pub mod bslaw;
pub mod frontier;
pub mod lawfit;
pub mod lrlaw;
pub mod noisescale;
pub mod optim;
pub mod pipeline;
pub mod runlog;
pub mod scalar;
pub mod synth;

pub type ChinchillaLawF64 = lawfit::ChinchillaLaw<f64>;
pub type ChinchillaLawF32 = lawfit::ChinchillaLaw<f32>;
pub type KaplanLawF64 = lawfit::KaplanLaw<f64>;
pub type KaplanLawF32 = lawfit::KaplanLaw<f32>;
pub type ConstraintF64 = lawfit::Constraint<f64>;
pub type ConstraintF32 = lawfit::Constraint<f32>;
pub type PowerLawF64 = frontier::PowerLaw<f64>;
pub type PowerLawF32 = frontier::PowerLaw<f32>;
pub type NoiseParamsF64 = noisescale::NoiseParams<f64>;
pub type NoiseParamsF32 = noisescale::NoiseParams<f32>;
pub type TradeoffRowF64 = noisescale::TradeoffRow<f64>;
pub type TradeoffRowF32 = noisescale::TradeoffRow<f32>;
