//! Optimal learning rate against batch size: a bilinear loss surface over
//! `(ln B, ln LR)`, its per-batch argmin, the sub-linear exponent and the
//! LR scaling rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::fit_power_law;
use crate::runlog::{loss_at_tokens, RunSet};
use crate::scalar::Real;

pub const DEFAULT_PLATEAU_TOLERANCE: f64 = 0.05;
/// Divergence threshold relative to the first logged loss.
pub const DIVERGENCE_RATIO: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrLawError {
    #[error("surface needs a filled 3x3 subgrid; {0}")]
    InsufficientGrid(String),
    #[error("gamma fit needs at least 4 non-boundary samples, got {0}")]
    TooFewSamples(usize),
    #[error("every sample lies on the plateau (ceiling {lr_ceiling}); gamma is undefined")]
    GammaUndefined { lr_ceiling: f64, plateau_onset_b: f64 },
    #[error("learning rates and batch sizes must be positive, got {0}")]
    NonPositive(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrScaling {
    Linear,
    Sqrt,
    None,
}

impl std::fmt::Display for LrScaling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrScaling::Linear => "linear",
            LrScaling::Sqrt => "sqrt",
            LrScaling::None => "none",
        })
    }
}

/// Rescales a learning rate tuned at `base_b` for use at `new_b`.
pub fn scale_lr<T: Real>(base_lr: T, base_b: T, new_b: T, scheme: LrScaling) -> Result<T, LrLawError> {
    for v in [base_lr, base_b, new_b] {
        if !(v > T::zero() && v.is_finite()) {
            return Err(LrLawError::NonPositive(v.as_f64()));
        }
    }
    let ratio = new_b / base_b;
    Ok(match scheme {
        LrScaling::Linear => base_lr * ratio,
        LrScaling::Sqrt => base_lr * ratio.sqrt(),
        LrScaling::None => base_lr,
    })
}

/// Losses on a `(B, LR factor)` grid read at a fixed token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSurface {
    #[serde(rename = "D_checkpoint")]
    pub d_checkpoint: f64,
    /// Absolute learning rate of factor 1.
    pub base_lr: f64,
    pub grid_b: Vec<f64>,
    /// Learning rates as multiples of `base_lr`.
    pub grid_lr: Vec<f64>,
    /// `losses[i][j]` at `(grid_b[i], grid_lr[j])`; `None` is a missing cell.
    pub losses: Vec<Vec<Option<f64>>>,
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-9);
    v
}

fn locate(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter().position(|g| (v / g - 1.0).abs() < 1e-9)
}

impl LossSurface {
    /// A surface from explicit cells; checks shape and the 3x3 filled block.
    pub fn from_grid(
        d_checkpoint: f64,
        base_lr: f64,
        grid_b: Vec<f64>,
        grid_lr: Vec<f64>,
        losses: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, LrLawError> {
        if losses.len() != grid_b.len() || losses.iter().any(|row| row.len() != grid_lr.len()) {
            return Err(LrLawError::InsufficientGrid("loss matrix shape mismatch".into()));
        }
        let losses = losses
            .into_iter()
            .map(|row| row.into_iter().map(|c| c.filter(|l| l.is_finite() && *l > 0.0)).collect())
            .collect();
        let s = LossSurface {
            d_checkpoint,
            base_lr,
            grid_b,
            grid_lr,
            losses,
        };
        if !s.has_filled_block() {
            return Err(LrLawError::InsufficientGrid(format!(
                "{}x{} grid has no complete 3x3 block",
                s.grid_b.len(),
                s.grid_lr.len()
            )));
        }
        Ok(s)
    }

    fn has_filled_block(&self) -> bool {
        let (nb, nl) = (self.grid_b.len(), self.grid_lr.len());
        (0..nb.saturating_sub(2)).any(|i| {
            (0..nl.saturating_sub(2))
                .any(|j| (i..i + 3).all(|a| (j..j + 3).all(|b| self.losses[a][b].is_some())))
        })
    }

    /// Bilinear value in `(ln B, ln factor)`; `None` outside the grid or when
    /// any corner of the enclosing cell is missing.
    pub fn interpolate(&self, b: f64, factor: f64) -> Option<f64> {
        let (i, tb) = bracket(&self.grid_b, b)?;
        let (j, tl) = bracket(&self.grid_lr, factor)?;
        let i1 = (i + 1).min(self.grid_b.len() - 1);
        let j1 = (j + 1).min(self.grid_lr.len() - 1);
        let cell = |a: usize, c: usize| self.losses[a][c];
        let (l00, l01, l10, l11) = (cell(i, j), cell(i, j1), cell(i1, j), cell(i1, j1));
        // Corners with zero weight may be missing.
        let need = |w: f64, v: Option<f64>| if w == 0.0 { Some(0.0) } else { v };
        let v00 = need((1.0 - tb) * (1.0 - tl), l00)?;
        let v01 = need((1.0 - tb) * tl, l01)?;
        let v10 = need(tb * (1.0 - tl), l10)?;
        let v11 = need(tb * tl, l11)?;
        Some((1.0 - tb) * (1.0 - tl) * v00 + (1.0 - tb) * tl * v01 + tb * (1.0 - tl) * v10 + tb * tl * v11)
    }
}

/// Cell index and fractional position of `v` in `grid`, in log space.
fn bracket(grid: &[f64], v: f64) -> Option<(usize, f64)> {
    let (first, last) = (*grid.first()?, *grid.last()?);
    if !(v >= first * (1.0 - 1e-12) && v <= last * (1.0 + 1e-12)) {
        return None;
    }
    if grid.len() == 1 {
        return Some((0, 0.0));
    }
    let i = grid.partition_point(|g| *g <= v).clamp(1, grid.len() - 1) - 1;
    let t = ((v.ln() - grid[i].ln()) / (grid[i + 1].ln() - grid[i].ln())).clamp(0.0, 1.0);
    Some((i, t))
}

/// Reads every run's loss at `d_checkpoint` into a `(B, LR / base_lr)` grid.
/// `base_lr` defaults to the smallest peak LR in the sweep. Diverged runs,
/// runs that end before the checkpoint and cells above
/// `DIVERGENCE_RATIO × initial loss` are missing.
pub fn build_surface(
    runset: &RunSet,
    d_checkpoint: f64,
    base_lr: Option<f64>,
) -> Result<LossSurface, LrLawError> {
    if runset.is_empty() {
        return Err(LrLawError::InsufficientGrid("no runs".into()));
    }
    let base = base_lr.unwrap_or_else(|| runset.iter().map(|r| r.lr_peak).fold(f64::INFINITY, f64::min));
    if !(base > 0.0) {
        return Err(LrLawError::NonPositive(base));
    }
    let grid_b = dedup_sorted(runset.iter().map(|r| r.batch_size_tokens).collect());
    let grid_lr = dedup_sorted(runset.iter().map(|r| r.lr_peak / base).collect());
    let mut losses = vec![vec![None; grid_lr.len()]; grid_b.len()];
    for run in runset.iter() {
        let i = locate(&grid_b, run.batch_size_tokens).expect("batch is on its own grid");
        let j = locate(&grid_lr, run.lr_peak / base).expect("factor is on its own grid");
        if run.diverged {
            continue;
        }
        let initial = run.points.first().map_or(f64::INFINITY, |p| p.loss);
        let cell = loss_at_tokens(&run.points, d_checkpoint)
            .ok()
            .filter(|l| l.is_finite() && *l <= DIVERGENCE_RATIO * initial);
        if let Some(l) = cell {
            // Duplicate (B, LR) runs keep the lower loss.
            losses[i][j] = Some(losses[i][j].map_or(l, |c: f64| c.min(l)));
        }
    }
    LossSurface::from_grid(d_checkpoint, base, grid_b, grid_lr, losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrOptSample {
    #[serde(rename = "B")]
    pub b: f64,
    /// Absolute learning rate.
    pub lr_opt: f64,
    pub factor: f64,
    pub loss_at_opt: f64,
    /// The discrete minimum sits on the edge of the LR sweep or next to a
    /// missing cell, so the optimum may lie outside it.
    pub boundary: bool,
}

/// Per batch size on a log grid with `refinement` sub-steps per grid cell,
/// the LR minimizing the interpolated surface.
///
/// Along fixed `B` the bilinear surface is piecewise linear in `ln LR` with
/// kinks at the grid nodes, so the discrete minimum is taken over nodes and
/// refined with the parabola through it and its two neighbours.
pub fn extract_lr_opt(surface: &LossSurface, refinement: usize) -> Vec<LrOptSample> {
    let steps = refinement.max(1);
    let mut bs = Vec::new();
    for w in surface.grid_b.windows(2) {
        let (a, b) = (w[0].ln(), w[1].ln());
        bs.push(w[0]);
        for k in 1..steps {
            bs.push((a + (b - a) * k as f64 / steps as f64).exp());
        }
    }
    if let Some(&last) = surface.grid_b.last() {
        bs.push(last);
    }
    bs.into_iter().filter_map(|b| column_argmin(surface, b)).collect()
}

fn column_argmin(surface: &LossSurface, b: f64) -> Option<LrOptSample> {
    let col: Vec<Option<f64>> = surface.grid_lr.iter().map(|&f| surface.interpolate(b, f)).collect();
    let (j, &best) = col
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.as_ref().map(|v| (j, v)))
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let xs: Vec<f64> = surface.grid_lr.iter().map(|f| f.ln()).collect();
    let neighbours = (j > 0 && j + 1 < col.len())
        .then(|| col[j - 1].zip(col[j + 1]))
        .flatten();
    let (x, loss, boundary) = match neighbours {
        Some((ym, yp)) => {
            let (x, y) = parabola_vertex([xs[j - 1], xs[j], xs[j + 1]], [ym, best, yp]).unwrap_or((xs[j], best));
            (x, y, false)
        }
        None => (xs[j], best, true),
    };
    let factor = x.exp();
    Some(LrOptSample {
        b,
        lr_opt: factor * surface.base_lr,
        factor,
        loss_at_opt: loss,
        boundary,
    })
}

/// Vertex of the parabola through three points; `None` unless it opens
/// upwards. The vertex is clamped to the outer two abscissae.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if !(a > 0.0) {
        return None;
    }
    let b = d1 - a * (x[0] + x[1]);
    let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
    let l = |i: usize, j: usize, k: usize| (xv - x[j]) * (xv - x[k]) / ((x[i] - x[j]) * (x[i] - x[k]));
    Some((xv, y[0] * l(0, 1, 2) + y[1] * l(1, 0, 2) + y[2] * l(2, 0, 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma: f64,
    /// Coefficient of `LR_opt = c·B^gamma` on the fitted prefix.
    pub coefficient: f64,
    pub lr_ceiling: Option<f64>,
    #[serde(rename = "plateau_onset_B")]
    pub plateau_onset_b: Option<f64>,
    pub n_fitted: usize,
}

/// Splits off the longest suffix whose LR varies by less than `tolerance`
/// and spans at least a factor 2 in B, then fits `ln LR` on `ln B` over the
/// remaining prefix. Boundary-flagged samples are ignored.
pub fn fit_gamma(samples: &[LrOptSample], tolerance: f64) -> Result<GammaFit, LrLawError> {
    let mut s: Vec<&LrOptSample> = samples.iter().filter(|s| !s.boundary).collect();
    if s.len() < 4 {
        return Err(LrLawError::TooFewSamples(s.len()));
    }
    s.sort_by(|a, b| a.b.total_cmp(&b.b));
    let mut onset = s.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..s.len()).rev() {
        lo = lo.min(s[i].lr_opt);
        hi = hi.max(s[i].lr_opt);
        if hi / lo - 1.0 >= tolerance {
            break;
        }
        onset = i;
    }
    if onset < s.len() && s[s.len() - 1].b / s[onset].b < 2.0 {
        onset = s.len();
    }
    let plateau = &s[onset..];
    let ceiling = (!plateau.is_empty())
        .then(|| plateau.iter().map(|p| p.lr_opt).sum::<f64>() / plateau.len() as f64);
    let onset_b = plateau.first().map(|p| p.b);
    let prefix = &s[..onset];
    if prefix.len() < 2 {
        return Err(LrLawError::GammaUndefined {
            lr_ceiling: ceiling.expect("an empty prefix means a non-empty plateau"),
            plateau_onset_b: onset_b.expect("non-empty plateau"),
        });
    }
    let law = fit_power_law(&prefix.iter().map(|p| (p.b, p.lr_opt)).collect::<Vec<_>>())
        .map_err(|e| LrLawError::InsufficientGrid(e.to_string()))?;
    Ok(GammaFit {
        gamma: law.p,
        coefficient: law.k,
        lr_ceiling: ceiling,
        plateau_onset_b: onset_b,
        n_fitted: prefix.len(),
    })
}

/// The artifact block describing a fitted LR law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrLaw {
    pub gamma: Option<f64>,
    pub lr_ceiling: Option<f64>,
    #[serde(rename = "plateau_onset_B")]
    pub plateau_onset_b: Option<f64>,
    pub base_lr: f64,
    #[serde(rename = "base_B")]
    pub base_b: f64,
}

pub fn surface_to_csv(surface: &LossSurface) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["B", "lr_factor", "lr", "loss"]).expect("in-memory write");
    for (i, &b) in surface.grid_b.iter().enumerate() {
        for (j, &f) in surface.grid_lr.iter().enumerate() {
            let loss = surface.losses[i][j].map_or_else(String::new, |l| l.to_string());
            w.write_record(&[b.to_string(), f.to_string(), (f * surface.base_lr).to_string(), loss])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn samples_to_csv(samples: &[LrOptSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["B", "lr_opt", "loss_at_opt", "boundary"]).expect("in-memory write");
    for s in samples {
        w.write_record(&[
            s.b.to_string(),
            s.lr_opt.to_string(),
            s.loss_at_opt.to_string(),
            s.boundary.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
