//! Fits every law a run set supports and assembles the law artifact.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactProvenance, LawArtifact};
use crate::bslaw::{self, BoptAnalysis, BoptLaw, BsLawError, LrPolicy};
use crate::frontier::{self, EnvelopeSample, FrontierError, FrontierExtraction, FrontierReport};
use crate::lawfit::{constrained_fit, Constraint, FitConfig, FitReport, LawFitError, LossObservation};
use crate::lrlaw::{self, LossSurface, LrLaw, LrLawError, LrOptSample};
use crate::runlog::{loss_at_tokens, CurvePoint, RunSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frontier: {0}")]
    Frontier(#[from] FrontierError),
    #[error("law fit: {0}")]
    LawFit(#[from] LawFitError),
}

/// Smoothing half-life in `ln tokens`: weights halve every 5% of growth in
/// the token count.
pub const DEFAULT_HALF_LIFE_LOG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub fit: FitConfig,
    /// Loss observations sampled per model from its best-of-runs curve.
    pub observations_per_model: usize,
    /// Iso-loss levels per model for the batch-size analysis.
    pub levels_per_model: usize,
    pub half_window: usize,
    pub s_floor_hint: Option<f64>,
    /// Checkpoint for the LR surface, as a fraction of the shortest run.
    pub lr_checkpoint_fraction: f64,
    /// Half-life in `ln tokens` of the curve smoothing applied before any
    /// analysis; `None` analyses the raw curves.
    pub smoothing_half_life_log: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            fit: FitConfig::default(),
            observations_per_model: 24,
            levels_per_model: 8,
            half_window: bslaw::DEFAULT_HALF_WINDOW,
            s_floor_hint: None,
            lr_checkpoint_fraction: 1.0,
            smoothing_half_life_log: Some(DEFAULT_HALF_LIFE_LOG),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub artifact: LawArtifact,
    pub extraction: FrontierExtraction,
    pub frontier: FrontierReport,
    pub fit: FitReport,
    pub bopt: Vec<(f64, BoptAnalysis)>,
    pub observations: Vec<LossObservation>,
}

/// Best loss over the model's non-diverged runs at log-spaced token counts,
/// from where every curve has started to where the longest ends. Curves are
/// used as given, so smooth them first.
pub fn model_observations(runset: &RunSet, n_params: f64, count: usize) -> Vec<LossObservation> {
    let curves: Vec<&[CurvePoint]> = runset
        .runs_for_model(n_params)
        .into_iter()
        .filter(|r| !r.diverged && r.points.len() >= 2)
        .map(|r| r.points.as_slice())
        .collect();
    let lo = curves.iter().map(|c| c[0].tokens).fold(0.0, f64::max);
    let hi = curves
        .iter()
        .map(|c| c[c.len() - 1].tokens)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) || count < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let d = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp();
        let best = curves
            .iter()
            .filter_map(|c| loss_at_tokens(c, d).ok())
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            out.push(LossObservation {
                n_params,
                tokens: d,
                loss: best,
            });
        }
    }
    out
}

/// Model size with the most distinct peak LRs (at least 3), ties to the
/// smaller model.
pub fn richest_lr_sweep(runset: &RunSet) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for n in runset.model_sizes() {
        let mut lrs: Vec<f64> = runset.runs_for_model(n).iter().map(|r| r.lr_peak).collect();
        lrs.sort_by(f64::total_cmp);
        lrs.dedup();
        if lrs.len() >= 3 && best.map_or(true, |(k, _)| lrs.len() > k) {
            best = Some((lrs.len(), n));
        }
    }
    best.map(|(_, n)| n)
}

#[derive(Debug, Clone)]
pub struct LrAnalysis {
    pub n_params: f64,
    pub surface: LossSurface,
    pub samples: Vec<LrOptSample>,
    pub law: LrLaw,
}

/// LR surface of one model at `fraction` of its shortest non-diverged run,
/// its argmin curve and the LR law. A plateau without a rising part yields
/// a law with `gamma = None` and the ceiling.
pub fn fit_lr(runset: &RunSet, n_params: f64, fraction: f64) -> Result<LrAnalysis, LrLawError> {
    let subset = runset.filtered(|r| r.model.n_params == n_params);
    let shortest = subset
        .iter()
        .filter(|r| !r.diverged)
        .map(|r| r.final_tokens())
        .fold(f64::INFINITY, f64::min);
    if !shortest.is_finite() {
        return Err(LrLawError::InsufficientGrid(format!("no usable runs for model {n_params:e}")));
    }
    let surface = lrlaw::build_surface(&subset, shortest * fraction, None)?;
    let samples = lrlaw::extract_lr_opt(&surface, 8);
    let base_b = surface.grid_b[0];
    let law = match lrlaw::fit_gamma(&samples, lrlaw::DEFAULT_PLATEAU_TOLERANCE) {
        Ok(g) => LrLaw {
            gamma: Some(g.gamma),
            lr_ceiling: g.lr_ceiling,
            plateau_onset_b: g.plateau_onset_b,
            base_lr: surface.base_lr,
            base_b,
        },
        Err(LrLawError::GammaUndefined {
            lr_ceiling,
            plateau_onset_b,
        }) => LrLaw {
            gamma: None,
            lr_ceiling: Some(lr_ceiling),
            plateau_onset_b: Some(plateau_onset_b),
            base_lr: surface.base_lr,
            base_b,
        },
        Err(e) => return Err(e),
    };
    Ok(LrAnalysis {
        n_params,
        surface,
        samples,
        law,
    })
}

/// The curves every analysis reads: smoothed per `opts`, or the raw ones.
pub fn analysis_runs<'a>(raw: &'a RunSet, opts: &PipelineOptions) -> Cow<'a, RunSet> {
    match opts.smoothing_half_life_log {
        Some(h) => Cow::Owned(raw.log_smoothed(h)),
        None => Cow::Borrowed(raw),
    }
}

#[derive(Debug, Clone)]
pub struct FrontierAnalysis {
    pub envelope: Vec<EnvelopeSample>,
    pub extraction: FrontierExtraction,
    pub report: FrontierReport,
}

/// Envelope, one point per winning model, and the frontier laws.
pub fn fit_frontier(runset: &RunSet) -> Result<FrontierAnalysis, FrontierError> {
    let grid = frontier::envelope_grid(runset, frontier::GRID_PER_DECADE)?;
    let envelope = frontier::compute_envelope(runset, &grid)?;
    let extraction = frontier::extract_frontier_points(&envelope, runset)?;
    let report = frontier::frontier_laws(&extraction.points)?;
    Ok(FrontierAnalysis {
        envelope,
        extraction,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct BatchAnalysis {
    /// Per model size, its contours and vertices.
    pub per_model: Vec<(f64, BoptAnalysis)>,
    pub law: Result<BoptLaw, BsLawError>,
    pub warnings: Vec<String>,
}

/// Iso-loss contours per model on levels shared across the sweep, and the
/// B_opt law over the pooled vertices.
pub fn fit_batch_law(runset: &RunSet, opts: &PipelineOptions) -> BatchAnalysis {
    // Levels span the whole sweep, so larger models contribute contours at
    // smaller D and the pooled vertices cover a wider range of D.
    let levels = bslaw::default_levels(runset, opts.levels_per_model);
    let mut warnings = Vec::new();
    let mut per_model = Vec::new();
    let mut pairs = Vec::new();
    for n in runset.model_sizes() {
        let subset = runset.filtered(|r| r.model.n_params == n);
        let best_final = subset
            .iter()
            .filter(|r| !r.diverged)
            .filter_map(|r| r.final_point().map(|p| p.loss))
            .fold(f64::INFINITY, f64::min);
        let reachable: Vec<f64> = levels.iter().copied().filter(|&l| l > best_final).collect();
        if reachable.is_empty() {
            warnings.push(format!("batch-size contours for model {n:e} skipped: no sweep level is reachable"));
            continue;
        }
        match bslaw::analyze_contours(&subset, &reachable, LrPolicy::BestOfSchemes, opts.half_window) {
            Ok(a) => {
                pairs.extend(a.fit_pairs(false));
                per_model.push((n, a));
            }
            Err(e) => warnings.push(format!("batch-size contours for model {n:e} skipped: {e}")),
        }
    }
    let law = bslaw::fit_bopt_law(&pairs, opts.s_floor_hint);
    BatchAnalysis {
        per_model,
        law,
        warnings,
    }
}

/// Frontier, constrained loss-law fit, batch-size law and, when the sweep
/// supports it, the LR law.
pub fn fit_all(raw: &RunSet, opts: &PipelineOptions) -> Result<PipelineOutput, PipelineError> {
    let runs = analysis_runs(raw, opts);
    let runset: &RunSet = &runs;
    let FrontierAnalysis {
        extraction, report, ..
    } = fit_frontier(runset)?;
    let mut warnings = extraction.warnings.clone();

    let constraint = Constraint::new(report.n_opt.p, report.d_opt.p, report.n_opt.k, report.d_opt.k)?;
    let mut observations = Vec::new();
    for n in runset.model_sizes() {
        observations.extend(model_observations(runset, n, opts.observations_per_model));
    }
    let fit = constrained_fit(&observations, Some(&constraint), &opts.fit)?;

    let batch = fit_batch_law(runset, opts);
    warnings.extend(batch.warnings);
    let bopt_law = match batch.law {
        Ok(law) => Some(law),
        Err(e) => {
            warnings.push(format!("batch-size law not fitted: {e}"));
            None
        }
    };
    let lr_law = match richest_lr_sweep(runset) {
        Some(n) => match fit_lr(runset, n, opts.lr_checkpoint_fraction) {
            Ok(a) => Some(a.law),
            Err(e) => {
                warnings.push(format!("lr law for model {n:e} skipped: {e}"));
                None
            }
        },
        None => None,
    };

    let artifact = LawArtifact::fitted(
        &fit,
        report.clone(),
        bopt_law,
        lr_law,
        ArtifactProvenance {
            source: "fit".into(),
            runs: raw.len(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        },
        warnings,
    );
    Ok(PipelineOutput {
        artifact,
        extraction,
        frontier: report,
        fit,
        bopt: batch.per_model,
        observations,
    })
}
