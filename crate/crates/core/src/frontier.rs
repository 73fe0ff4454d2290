//! Compute-efficient frontier: lower envelope of loss against `C = 6ND`
//! across runs, per-model optimal points, and the power laws through them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runlog::{flops, loss_at_tokens, RunLogError, RunSet};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontierError {
    #[error("regression error: {0}")]
    Regression(String),
    #[error("no run covers any grid point")]
    EmptyEnvelope,
    #[error("frontier needs at least 3 points, got {0}")]
    InsufficientFrontier(usize),
    #[error("frontier needs at least 2 distinct model sizes, got {0}")]
    InsufficientModels(usize),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
}

/// `y = k·x^p`, fitted on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw<T = f64> {
    pub k: T,
    pub p: T,
    pub x_min: T,
    pub x_max: T,
}

impl<T: Real> PowerLaw<T> {
    pub fn new(k: T, p: T, x_min: T, x_max: T) -> Result<Self, FrontierError> {
        if !(k > T::zero() && k.is_finite() && p.is_finite()) {
            return Err(FrontierError::Regression(format!(
                "power law needs finite k > 0 and finite p, got k={k} p={p}"
            )));
        }
        if !(x_min > T::zero() && x_min <= x_max) {
            return Err(FrontierError::Regression(format!(
                "invalid validity range [{x_min}, {x_max}]"
            )));
        }
        Ok(PowerLaw { k, p, x_min, x_max })
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        self.k * x.powf(self.p)
    }

    pub fn is_extrapolation(&self, x: T) -> bool {
        x < self.x_min || x > self.x_max
    }

    /// `x` with `eval(x) = y`; requires `p != 0`.
    pub fn inverse(&self, y: T) -> T {
        (y / self.k).powf(self.p.recip())
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_power_law<T: Real>(points: &[(T, T)]) -> Result<PowerLaw<T>, FrontierError> {
    if points.len() < 2 {
        return Err(FrontierError::Regression(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|(x, y)| !(*x > T::zero() && *y > T::zero() && x.is_finite() && y.is_finite()))
    {
        return Err(FrontierError::Regression(format!(
            "points must be positive and finite, got ({x}, {y})"
        )));
    }
    let n = T::from_usize(points.len()).expect("point count fits the scalar type");
    let lx: Vec<T> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<T> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().copied().sum::<T>() / n;
    let my = ly.iter().copied().sum::<T>() / n;
    let sxx: T = lx.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: T = lx.iter().zip(&ly).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    if !(sxx > T::zero()) {
        return Err(FrontierError::Regression("all x values are equal".into()));
    }
    let p = sxy / sxx;
    let k = (my - p * mx).exp();
    let x_min = points.iter().map(|p| p.0).fold(T::infinity(), T::min);
    let x_max = points.iter().map(|p| p.0).fold(T::neg_infinity(), T::max);
    PowerLaw::new(k, p, x_min, x_max)
}

fn ulp_shift(v: f64, off: i64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        v
    } else {
        f64::from_bits((v.to_bits() as i64 + off) as u64)
    }
}

fn ulp_neighbours(v: f64, radius: i64) -> impl Iterator<Item = f64> {
    (0..=2 * radius).map(move |i| {
        let off = if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) };
        ulp_shift(v, off)
    })
}

/// Offsets tried for the free value: every ulp out to 64, then a sparse
/// geometric sweep out to 2^29 ulps (about 6e-8 relative). The sparse part
/// is needed when both factors share nearly the same mantissa, where the
/// rounding error of the product barely changes under small nudges.
fn free_offsets() -> impl Iterator<Item = i64> {
    let dense = (0..=128i64).map(|i| if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) });
    let sparse = (7..29).flat_map(|e| (0..8).flat_map(move |j| {
        let off = (1i64 << e) + j * (1i64 << (e - 3));
        [off, -off]
    }));
    dense.chain(sparse)
}

/// Moves `free` by at most 2^29 ulps (nearly always at most 64) and the
/// derived value by at most 8 so that `combine(free, derived) == target`
/// holds bit-exactly. Falls back to the plain `invert(target, free)` when no
/// such pair is found.
fn exact_split(
    target: f64,
    free: f64,
    combine: impl Fn(f64, f64) -> f64,
    invert: impl Fn(f64, f64) -> f64,
) -> (f64, f64) {
    for off in free_offsets() {
        let f = ulp_shift(free, off);
        for x in ulp_neighbours(invert(target, f), 8) {
            if combine(f, x) == target {
                return (f, x);
            }
        }
    }
    (free, invert(target, free))
}

/// `(a', q)` with `a' * q == num` exactly and `a'` within a few ulps of `a`.
pub fn exact_quotient(num: f64, a: f64) -> (f64, f64) {
    exact_split(num, a, |f, x| f * x, |t, f| t / f)
}

/// `(a', d)` with `a' + d == total` exactly and `a'` within a few ulps of `a`.
pub fn exact_difference(total: f64, a: f64) -> (f64, f64) {
    exact_split(total, a, |f, x| f + x, |t, f| t - f)
}

/// Log-spaced values from `lo` to `hi` inclusive at `per_decade` points per
/// decade, anchored at `lo`.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && per_decade > 0);
    let step = std::f64::consts::LN_10 / per_decade as f64;
    let n = ((hi.ln() - lo.ln()) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| (lo.ln() + i as f64 * step).exp().clamp(lo, hi))
        .collect()
}

pub const GRID_PER_DECADE: usize = 64;

/// The grid covering the union of all non-diverged runs' compute ranges.
pub fn envelope_grid(runset: &RunSet, per_decade: usize) -> Result<Vec<f64>, FrontierError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for run in runset.iter().filter(|r| !r.diverged) {
        if let (Some(f), Some(l)) = (run.points.first(), run.points.last()) {
            lo = lo.min(flops(run.model.n_params, f.tokens));
            hi = hi.max(flops(run.model.n_params, l.tokens));
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(FrontierError::EmptyEnvelope);
    }
    Ok(log_grid(lo, hi, per_decade))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub c: f64,
    pub loss: f64,
    pub winner: String,
}

/// Pointwise minimum over all non-diverged runs at each grid value. Grid
/// values outside every run are skipped; ties go to the earlier run id.
pub fn compute_envelope(runset: &RunSet, grid: &[f64]) -> Result<Vec<EnvelopeSample>, FrontierError> {
    let runs: Vec<_> = runset.iter().filter(|r| !r.diverged).collect();
    let columns: Vec<Vec<Option<f64>>> = runs
        .par_iter()
        .map(|run| {
            grid.iter()
                .map(|&c| loss_at_tokens(&run.points, c / (6.0 * run.model.n_params)).ok())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for (i, &c) in grid.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (r, col) in columns.iter().enumerate() {
            if let Some(loss) = col[i] {
                if best.map_or(true, |(b, _)| loss < b) {
                    best = Some((loss, r));
                }
            }
        }
        if let Some((loss, r)) = best {
            out.push(EnvelopeSample {
                c,
                loss,
                winner: runs[r].run_id.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(FrontierError::EmptyEnvelope);
    }
    Ok(out)
}

pub fn envelope_to_csv(samples: &[EnvelopeSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["C", "loss", "winner"]).expect("in-memory write");
    for s in samples {
        w.write_record(&[s.c.to_string(), s.loss.to_string(), s.winner.clone()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    #[serde(rename = "C")]
    pub c: f64,
    pub loss: f64,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub run_id: String,
    /// The winning interval touches the envelope's edge, so its centre is set
    /// by the sweep limits rather than by the neighbours. Informational; the
    /// point still enters the law fit.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierExtraction {
    pub points: Vec<FrontierPoint>,
    /// Model sizes that never win the envelope.
    pub excluded: Vec<f64>,
    pub warnings: Vec<String>,
}

/// One point per winning model at the geometric centre of its longest
/// contiguous winning interval, read from the model's pointwise-min curve.
pub fn extract_frontier_points(
    envelope: &[EnvelopeSample],
    runset: &RunSet,
) -> Result<FrontierExtraction, FrontierError> {
    if envelope.is_empty() {
        return Err(FrontierError::EmptyEnvelope);
    }
    let sizes = runset.model_sizes();
    let mut intervals: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    let model_of = |id: &str| runset.get(id).map(|r| r.model.n_params);
    let mut start = 0;
    for i in 1..=envelope.len() {
        let boundary = i == envelope.len()
            || model_of(&envelope[i].winner) != model_of(&envelope[start].winner);
        if boundary {
            if let Some(n) = model_of(&envelope[start].winner) {
                intervals.entry(n.to_bits()).or_default().push((start, i - 1));
            }
            start = i;
        }
    }

    let mut points = Vec::new();
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    for &n in &sizes {
        let Some(spans) = intervals.get(&n.to_bits()) else {
            excluded.push(n);
            warnings.push(format!("model {n:e} never wins the envelope; excluded"));
            continue;
        };
        if spans.len() > 1 {
            warnings.push(format!(
                "model {n:e} wins {} separate intervals; using the longest",
                spans.len()
            ));
        }
        let &(lo, hi) = spans
            .iter()
            .max_by(|a, b| (a.1 - a.0).cmp(&(b.1 - b.0)).then(b.0.cmp(&a.0)))
            .expect("non-empty span list");
        let c = (envelope[lo].c * envelope[hi].c).sqrt();
        let d = c / (6.0 * n);
        let mut best: Option<(f64, &str, f64)> = None;
        for run in runset.runs_for_model(n).into_iter().filter(|r| !r.diverged) {
            if let Ok(loss) = loss_at_tokens(&run.points, d) {
                if best.map_or(true, |(b, _, _)| loss < b) {
                    best = Some((loss, &run.run_id, run.batch_size_tokens));
                }
            }
        }
        let (loss, run_id, b) = best.ok_or_else(|| {
            FrontierError::Regression(format!("model {n:e} has no curve covering C={c:e}"))
        })?;
        points.push(FrontierPoint {
            c,
            loss,
            n,
            d,
            s: d / b,
            b,
            run_id: run_id.to_string(),
            truncated: lo == 0 || hi == envelope.len() - 1,
        });
        if lo == 0 || hi == envelope.len() - 1 {
            warnings.push(format!(
                "model {n:e} wins up to the edge of the sweep; its point is set by the sweep limits"
            ));
        }
    }
    points.sort_by(|a, b| a.c.total_cmp(&b.c));
    Ok(FrontierExtraction {
        points,
        excluded,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResiduals {
    /// Largest `|6·N_opt·D_opt / C − 1|` over the fitted points' C values.
    pub nd: f64,
    /// Largest `|S_opt·B_opt / D_opt − 1|` over the same values.
    pub sb: f64,
    /// Relative gap between the derived and a free fit, per derived law;
    /// absent when the laws were not fitted from points.
    pub d_opt_vs_free: Option<f64>,
    pub b_opt_vs_free: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub points: Vec<FrontierPoint>,
    pub l_opt: PowerLaw,
    pub n_opt: PowerLaw,
    pub d_opt: PowerLaw,
    pub s_opt: PowerLaw,
    pub b_opt: PowerLaw,
    pub consistency_residuals: ConsistencyResiduals,
}

impl FrontierReport {
    /// Moves the lower validity bound of `b_opt` to the compute at which it
    /// predicts `batch_floor` tokens.
    pub fn with_batch_floor(mut self, batch_floor: f64) -> Self {
        if self.b_opt.p > 0.0 {
            self.b_opt.x_min = self.b_opt.inverse(batch_floor);
        }
        self
    }
}

/// Derives `D_opt = C / (6·N_opt)`. `n_opt` may move by a few ulps so that
/// both identities hold bit-exactly.
pub fn derive_d_opt(n_opt: &mut PowerLaw) -> PowerLaw {
    let (kn, kd) = exact_quotient(1.0 / 6.0, n_opt.k);
    let (pn, pd) = exact_difference(1.0, n_opt.p);
    n_opt.k = kn;
    n_opt.p = pn;
    PowerLaw {
        k: kd,
        p: pd,
        ..*n_opt
    }
}

/// Derives `B_opt = D_opt / S_opt`, nudging `s_opt` like [`derive_d_opt`].
pub fn derive_b_opt(d_opt: &PowerLaw, s_opt: &mut PowerLaw) -> PowerLaw {
    let (ks, kb) = exact_quotient(d_opt.k, s_opt.k);
    let (ps, pb) = exact_difference(d_opt.p, s_opt.p);
    s_opt.k = ks;
    s_opt.p = ps;
    PowerLaw {
        k: kb,
        p: pb,
        ..*s_opt
    }
}

/// Fits `L_opt`, `N_opt` and `S_opt` freely and derives `D_opt` and `B_opt`
/// from them. `B_opt` starts valid at the smallest observed batch.
pub fn frontier_laws(points: &[FrontierPoint]) -> Result<FrontierReport, FrontierError> {
    if points.len() < 3 {
        return Err(FrontierError::InsufficientFrontier(points.len()));
    }
    let fit = |f: fn(&FrontierPoint) -> f64| {
        fit_power_law(&points.iter().map(|p| (p.c, f(p))).collect::<Vec<_>>())
    };
    let l_opt = fit(|p| p.loss)?;
    let mut n_opt = fit(|p| p.n)?;
    let mut s_opt = fit(|p| p.s)?;
    let d_free = fit(|p| p.d)?;
    let b_free = fit(|p| p.b)?;
    let d_opt = derive_d_opt(&mut n_opt);
    let b_opt = derive_b_opt(&d_opt, &mut s_opt);

    let mut nd: f64 = 0.0;
    let mut sb: f64 = 0.0;
    let mut d_gap: f64 = 0.0;
    let mut b_gap: f64 = 0.0;
    for p in points {
        let (n, d, s, b) = (n_opt.eval(p.c), d_opt.eval(p.c), s_opt.eval(p.c), b_opt.eval(p.c));
        nd = nd.max((6.0 * n * d / p.c - 1.0).abs());
        sb = sb.max((s * b / d - 1.0).abs());
        d_gap = d_gap.max((d / d_free.eval(p.c) - 1.0).abs());
        b_gap = b_gap.max((b / b_free.eval(p.c) - 1.0).abs());
    }
    let batch_floor = points.iter().map(|p| p.b).fold(f64::INFINITY, f64::min);
    Ok(FrontierReport {
        points: points.to_vec(),
        l_opt,
        n_opt,
        d_opt,
        s_opt,
        b_opt,
        consistency_residuals: ConsistencyResiduals {
            nd,
            sb,
            d_opt_vs_free: Some(d_gap),
            b_opt_vs_free: Some(b_gap),
        },
    }
    .with_batch_floor(batch_floor))
}
