//! Synthetic training runs generated from a planted ground truth.
//!
//! This generator is constructed for testing, not taken from measured
//! training dynamics. Tokens needed to reach loss `L` at batch `B` are
//! `D_min(N, L)·e(b)·(1 + kappa/b)` with `b = B/B_crit`, where `D_min`
//! inverts the planted law in `D` and `e` solves the steps/data trade-off
//! `(e/b − 1)(e − 1) = gamma`. The optional `kappa` term penalizes batches far
//! below `B_crit`, which gives iso-loss contours an interior minimum at
//! `b = √kappa` when `gamma = 1`. A learning rate `lr` at batch `B` spends
//! tokens with efficiency `2ρ − ρ²`, `ρ = lr / η_opt(B)`, with `η_opt` the
//! Adam-style optimum anchored so that each model's base LR is optimal at its
//! base batch.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lawfit::{ChinchillaLaw, LawFitError};
use crate::noisescale::{eta_opt_adam, solve_tradeoff, NoiseError, NoiseParams};
use crate::runlog::{CurvePoint, LrScheme, ModelSpec, RunLogError, RunRecord, RunSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("target loss {target} is at or below the floor {floor} for this model")]
    Infeasible { target: f64, floor: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Law(#[from] LawFitError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
}

/// How the critical batch size depends on the training state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BcritMode {
    Constant { b_crit: f64 },
    /// `B_crit(L) = b_crit0 · l0 / L`.
    LossLinked { b_crit0: f64, l0: f64 },
    /// `B_crit = k · D_min(N, L)^p`.
    DataLinked { k: f64, p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub law: ChinchillaLaw,
    /// Shape of the LR optimum against batch size; `eta_max` is rescaled per
    /// model by the anchor, `gamma_tradeoff` sets the trade-off curvature.
    pub noise: NoiseParams,
    pub bcrit_mode: BcritMode,
    pub small_batch_penalty: f64,
    pub lr_efficiency: bool,
    /// Standard deviation of the log-normal multiplicative loss noise.
    pub observation_noise: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.law.validate()?;
        self.noise.validate()?;
        if !(self.observation_noise >= 0.0 && self.observation_noise.is_finite()) {
            return Err(SynthError::Config("observation_noise must be >= 0".into()));
        }
        if !(self.small_batch_penalty >= 0.0 && self.small_batch_penalty.is_finite()) {
            return Err(SynthError::Config("small_batch_penalty must be >= 0".into()));
        }
        let ok = match self.bcrit_mode {
            BcritMode::Constant { b_crit } => b_crit > 0.0,
            BcritMode::LossLinked { b_crit0, l0 } => b_crit0 > 0.0 && l0 > 0.0,
            BcritMode::DataLinked { k, p } => k > 0.0 && (0.0..1.0).contains(&p),
        };
        if !ok {
            return Err(SynthError::Config(format!("invalid bcrit_mode {:?}", self.bcrit_mode)));
        }
        Ok(())
    }

    fn b_crit(&self, loss: f64, d_min: f64) -> f64 {
        match self.bcrit_mode {
            BcritMode::Constant { b_crit } => b_crit,
            BcritMode::LossLinked { b_crit0, l0 } => b_crit0 * l0 / loss,
            BcritMode::DataLinked { k, p } => k * d_min.powf(p),
        }
    }

    /// Multiplier `e(b)·(1 + kappa/b)` on `D_min`.
    fn data_factor(&self, batch: f64, b_crit: f64) -> f64 {
        let b = batch / b_crit;
        let e = solve_tradeoff(b, self.noise.gamma_tradeoff)
            .expect("validated positive ratio and gamma")
            .e_ratio;
        e * (1.0 + self.small_batch_penalty / b)
    }

    /// Tokens required at batch `batch` when the law alone would need `d_min`.
    fn required_from_dmin(&self, n_params: f64, batch: f64, d_min: f64) -> f64 {
        let loss = self.law.d_floor(d_min) + self.law.a * n_params.powf(-self.law.alpha);
        d_min * self.data_factor(batch, self.b_crit(loss, d_min))
    }

    /// The planted optimum of `B` along a contour reaching `d` tokens in
    /// data-linked mode with `gamma = 1`: `√kappa · k · (d / (1 + √kappa)²)^p`.
    pub fn planted_bopt(&self, d: f64) -> Option<f64> {
        match self.bcrit_mode {
            BcritMode::DataLinked { k, p } if self.noise.gamma_tradeoff == 1.0 && self.small_batch_penalty > 0.0 => {
                let r = self.small_batch_penalty.sqrt();
                Some(r * k * (d / (1.0 + r).powi(2)).powf(p))
            }
            _ => None,
        }
    }

    /// A ground truth shaped after the published constants: the fitted loss
    /// law, `B_opt = 3.24e3·D^0.264` planted through the data-linked mode, a
    /// noise scale far above the swept batches and 0.5% observation noise.
    pub fn published_shaped(seed: u64) -> Self {
        let kappa: f64 = 1.0;
        let p = 0.264;
        let h = (1.0 + kappa.sqrt()).powi(2);
        GroundTruth {
            law: ChinchillaLaw::new(1.48, 314.35, 0.331, 460.51, 0.286),
            noise: NoiseParams {
                eta_max: 1.0,
                b_noise: 1e10,
                dl_max: 0.1,
                gamma_tradeoff: 1.0,
            },
            bcrit_mode: BcritMode::DataLinked {
                k: 3.24e3 * h.powf(p) / kappa.sqrt(),
                p,
            },
            small_batch_penalty: kappa,
            lr_efficiency: true,
            observation_noise: 0.005,
            seed,
        }
    }
}

/// Tokens needed to reach `target_loss` at batch `batch` with the optimal LR.
pub fn d_required(gt: &GroundTruth, n_params: f64, target_loss: f64, batch: f64) -> Result<f64, SynthError> {
    let floor = gt.law.n_floor(n_params);
    if !(target_loss > floor) {
        return Err(SynthError::Infeasible {
            target: target_loss,
            floor,
        });
    }
    let d_min = gt.law.solve_d_for_loss(target_loss, n_params)?;
    Ok(gt.required_from_dmin(n_params, batch, d_min))
}

/// Loss after `d_eff` effective tokens at batch `batch`: the inverse of
/// [`d_required`] in the loss, found by bisection on `ln D_min`.
pub fn loss_after(gt: &GroundTruth, n_params: f64, batch: f64, d_eff: f64) -> f64 {
    // required(d_min) >= d_min, so the root lies below d_eff.
    let (mut lo, mut hi) = (d_eff.ln() - 300.0, d_eff.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gt.required_from_dmin(n_params, batch, mid.exp()) > d_eff {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    gt.law.eval(n_params, (0.5 * (lo + hi)).exp())
}

/// LR efficiency `2ρ − ρ²`; zero or negative means divergence.
pub fn lr_efficiency(rho: f64) -> f64 {
    2.0 * rho - rho * rho
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Cadence {
    /// A checkpoint every this many steps, plus the final step.
    EverySteps(u64),
    /// This many checkpoints log-spaced between 0.1% of the run and its end.
    LogSpaced(usize),
}

impl Cadence {
    pub fn steps(&self, total_steps: u64) -> Vec<u64> {
        let mut out: Vec<u64> = match *self {
            Cadence::EverySteps(every) => {
                let every = every.max(1);
                (1..=total_steps / every).map(|k| k * every).collect()
            }
            Cadence::LogSpaced(n) => {
                let first = (total_steps as f64 / 1000.0).max(1.0);
                let n = n.max(2);
                (0..n)
                    .map(|i| {
                        let t = i as f64 / (n - 1) as f64;
                        (first.ln() + t * ((total_steps as f64).ln() - first.ln())).exp().round() as u64
                    })
                    .collect()
            }
        };
        out.push(total_steps);
        out.retain(|&s| s >= 1 && s <= total_steps);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Per-model settings of a sweep; the base LR is optimal at the base batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub n_params: f64,
    pub label: String,
    pub base_lr: f64,
    pub base_batch: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub models: Vec<SynthModel>,
    pub batch_sizes: Vec<f64>,
    pub lr_schemes: Vec<LrScheme>,
    pub lr_factors: Vec<f64>,
    pub tokens_per_run: f64,
    pub cadence: Cadence,
    pub output: Option<String>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = |name: &str, vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                Err(SynthError::Config(format!("{name} must be non-empty and positive")))
            } else {
                Ok(())
            }
        };
        positive("model sizes", &mut self.models.iter().map(|m| m.n_params))?;
        positive("base learning rates", &mut self.models.iter().map(|m| m.base_lr))?;
        positive("base batches", &mut self.models.iter().map(|m| m.base_batch))?;
        positive("batch sizes", &mut self.batch_sizes.iter().copied())?;
        positive("lr factors", &mut self.lr_factors.iter().copied())?;
        positive("tokens per run", &mut std::iter::once(self.tokens_per_run))?;
        if self.lr_schemes.is_empty() {
            return Err(SynthError::Config("at least one LR scheme is required".into()));
        }
        match self.cadence {
            Cadence::EverySteps(0) => Err(SynthError::Config("cadence must be >= 1 step".into())),
            Cadence::LogSpaced(n) if n < 2 => Err(SynthError::Config("log cadence needs >= 2 points".into())),
            _ => Ok(()),
        }?;
        for b in &self.batch_sizes {
            if self.tokens_per_run < *b {
                return Err(SynthError::Config(format!("batch {b} exceeds tokens per run")));
            }
        }
        Ok(())
    }

    /// The five preset models (125M to 2.6B), batches 0.5M to 32M tokens,
    /// three LR schemes and 1e12 tokens per run with 1000 log-spaced
    /// checkpoints: 105 runs.
    pub fn published_shaped() -> Self {
        let models = [
            (1.25e8, "125M", 6.0e-4, 0.5e6, 715, 500_000),
            (3.5e8, "350M", 3.0e-4, 0.5e6, 715, 500_000),
            (7.6e8, "760M", 2.5e-4, 0.5e6, 715, 500_000),
            (1.3e9, "1.3B", 2.0e-4, 1.0e6, 350, 300_000),
            (2.6e9, "2.6B", 1.6e-4, 1.0e6, 350, 300_000),
        ]
        .into_iter()
        .map(|(n, label, lr, b0, w, d)| SynthModel {
            n_params: n,
            label: label.into(),
            base_lr: lr,
            base_batch: b0,
            warmup_steps: w,
            decay_steps: d,
        })
        .collect();
        SynthConfig {
            models,
            batch_sizes: vec![0.5e6, 1e6, 2e6, 4e6, 8e6, 16e6, 32e6],
            lr_schemes: LrScheme::ALL.to_vec(),
            lr_factors: vec![1.0],
            tokens_per_run: 1e12,
            cadence: Cadence::LogSpaced(1000),
            output: None,
        }
    }
}

/// FNV-1a; stable across platforms and toolchains.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standard normal draw keyed by `(seed, run_id, step)`.
fn keyed_normal(seed: u64, run_id: &str, step: u64) -> f64 {
    let key = fnv1a(&[&seed.to_le_bytes(), run_id.as_bytes(), &step.to_le_bytes()]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(key);
    StandardNormal.sample(&mut rng)
}

pub struct RunSpec<'a> {
    pub run_id: String,
    pub model: &'a SynthModel,
    pub batch: f64,
    pub scheme: LrScheme,
    pub lr_factor: f64,
    pub total_tokens: f64,
    pub cadence: Cadence,
}

impl RunSpec<'_> {
    pub fn lr(&self) -> f64 {
        self.model.base_lr * self.scheme.scale(self.model.base_batch, self.batch) * self.lr_factor
    }
}

/// `ρ = lr / η_opt(B)` with `η_opt` scaled so the model's base LR is optimal
/// at its base batch.
pub fn lr_ratio(gt: &GroundTruth, model: &SynthModel, batch: f64, lr: f64) -> f64 {
    let anchor = model.base_lr / eta_opt_adam(model.base_batch, &gt.noise);
    lr / (anchor * eta_opt_adam(batch, &gt.noise))
}

/// Simulates one run. Runs with `ρ >= 2` are marked diverged: their loss
/// climbs from the first checkpoint and the curve stops once it has doubled.
pub fn simulate_curve(gt: &GroundTruth, spec: &RunSpec) -> RunRecord {
    let lr = spec.lr();
    let rho = lr_ratio(gt, spec.model, spec.batch, lr);
    let efficiency = if gt.lr_efficiency { lr_efficiency(rho) } else { 1.0 };
    let total_steps = (spec.total_tokens / spec.batch).floor().max(1.0) as u64;
    let steps = spec.cadence.steps(total_steps);
    let n = spec.model.n_params;
    let noisy = |loss: f64, step: u64| {
        if gt.observation_noise > 0.0 {
            loss * (gt.observation_noise * keyed_normal(gt.seed, &spec.run_id, step)).exp()
        } else {
            loss
        }
    };

    let mut points = Vec::with_capacity(steps.len());
    let diverged = efficiency <= 0.0;
    if diverged {
        let start = loss_after(gt, n, spec.batch, spec.batch);
        for (k, &step) in steps.iter().enumerate() {
            let loss = start * 1.25f64.powi(k as i32);
            if loss > 2.0 * start {
                break;
            }
            points.push(CurvePoint::new(step, step as f64 * spec.batch, noisy(loss, step)));
        }
    } else {
        for &step in &steps {
            let tokens = step as f64 * spec.batch;
            let loss = loss_after(gt, n, spec.batch, tokens * efficiency);
            points.push(CurvePoint::new(step, tokens, noisy(loss, step)));
        }
    }
    RunRecord {
        run_id: spec.run_id.clone(),
        model: ModelSpec {
            label: spec.model.label.clone(),
            ..ModelSpec::new(n)
        },
        batch_size_tokens: spec.batch,
        lr_peak: lr,
        lr_scheme: spec.scheme,
        lr_factor: spec.lr_factor,
        warmup_steps: spec.model.warmup_steps,
        decay_steps: spec.model.decay_steps,
        diverged,
        points,
    }
}

fn run_id(model: &SynthModel, batch: f64, scheme: LrScheme, factor: f64) -> String {
    let label = if model.label.is_empty() {
        format!("{:e}", model.n_params)
    } else {
        model.label.clone()
    };
    format!("{label}_b{batch}_{scheme}_x{factor}")
}

/// One run per (model, batch, scheme, factor), generated in parallel.
pub fn simulate_grid(config: &SynthConfig, gt: &GroundTruth) -> Result<RunSet, SynthError> {
    config.validate()?;
    gt.validate()?;
    let mut specs = Vec::new();
    for model in &config.models {
        for &batch in &config.batch_sizes {
            for &scheme in &config.lr_schemes {
                for &factor in &config.lr_factors {
                    specs.push(RunSpec {
                        run_id: run_id(model, batch, scheme, factor),
                        model,
                        batch,
                        scheme,
                        lr_factor: factor,
                        total_tokens: config.tokens_per_run,
                        cadence: config.cadence,
                    });
                }
            }
        }
    }
    let runs: Vec<RunRecord> = specs.par_iter().map(|s| simulate_curve(gt, s)).collect();
    let mut set = RunSet::new();
    for run in runs {
        if run.points.is_empty() {
            continue;
        }
        set.insert(run)?;
    }
    Ok(set)
}
