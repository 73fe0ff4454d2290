//! Optimal batch size against data budget: iso-loss contours over batch
//! sizes, their parabola vertices, and the two-regime law
//! `B_opt(D) = min(D/s_floor, k·D^p)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::{fit_power_law, FrontierError, PowerLaw};
use crate::runlog::{tokens_at_loss, LrScheme, RunSet};

/// Minimum-step threshold used when no linear-regime vertex is observed.
pub const DEFAULT_S_FLOOR: f64 = 4000.0;
/// Contour points on each side of the discrete minimum used for the parabola.
pub const DEFAULT_HALF_WINDOW: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsLawError {
    #[error("contours need at least 3 distinct batch sizes, got {0}")]
    TooFewBatchSizes(usize),
    #[error("loss level {level} is unreachable at every batch size")]
    EmptyContour { level: f64 },
    #[error("parabola needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("fitted quadratic has curvature {curvature} and no interior minimum")]
    NoMinimum { curvature: f64 },
    #[error("law fit needs at least 4 vertices spanning a decade of D: {0}")]
    InsufficientVertices(String),
    #[error("every vertex lies in the linear regime; no power branch to fit")]
    NoPowerRegime,
    #[error(transparent)]
    Frontier(#[from] FrontierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scheme")]
pub enum LrPolicy {
    /// Per batch size, the smallest requirement over every LR variant.
    BestOfSchemes,
    FixedScheme(LrScheme),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub loss_level: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "D_required")]
    pub d_required: f64,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub loss_level: f64,
    /// Sorted by batch size.
    pub points: Vec<ContourPoint>,
    /// Batch sizes that never reach the level.
    pub gaps: Vec<f64>,
}

/// Eight evenly spaced levels between the 20th and 80th percentiles of the
/// non-diverged runs' final losses.
pub fn default_levels(runset: &RunSet, count: usize) -> Vec<f64> {
    let mut finals: Vec<f64> = runset
        .iter()
        .filter(|r| !r.diverged)
        .filter_map(|r| r.final_point().map(|p| p.loss))
        .collect();
    if finals.is_empty() || count == 0 {
        return Vec::new();
    }
    finals.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (finals.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(finals.len() - 1);
        finals[i] + (pos - i as f64) * (finals[j] - finals[i])
    };
    let (lo, hi) = (q(0.2), q(0.8));
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Tokens needed to reach each level at each batch size. `runset` should hold
/// one model size; diverged runs are ignored.
pub fn iso_loss_contour(
    runset: &RunSet,
    levels: &[f64],
    policy: LrPolicy,
) -> Result<Vec<Contour>, BsLawError> {
    let runs: Vec<_> = runset
        .iter()
        .filter(|r| !r.diverged)
        .filter(|r| match policy {
            LrPolicy::BestOfSchemes => true,
            LrPolicy::FixedScheme(s) => r.lr_scheme == s,
        })
        .collect();
    let mut batches: Vec<f64> = runs.iter().map(|r| r.batch_size_tokens).collect();
    batches.sort_by(f64::total_cmp);
    batches.dedup();
    if batches.len() < 3 {
        return Err(BsLawError::TooFewBatchSizes(batches.len()));
    }
    levels
        .par_iter()
        .map(|&level| {
            let mut best: BTreeMap<u64, (f64, &str)> = BTreeMap::new();
            for run in &runs {
                if let Ok(d) = tokens_at_loss(&run.points, level) {
                    let slot = best.entry(run.batch_size_tokens.to_bits());
                    let cand = (d, run.run_id.as_str());
                    slot.and_modify(|cur| {
                        if d < cur.0 {
                            *cur = cand
                        }
                    })
                    .or_insert(cand);
                }
            }
            if best.is_empty() {
                return Err(BsLawError::EmptyContour { level });
            }
            let points: Vec<ContourPoint> = batches
                .iter()
                .filter_map(|b| {
                    best.get(&b.to_bits()).map(|&(d, id)| ContourPoint {
                        loss_level: level,
                        b: *b,
                        d_required: d,
                        run_id: id.to_string(),
                    })
                })
                .collect();
            let gaps = batches
                .iter()
                .copied()
                .filter(|b| !best.contains_key(&b.to_bits()))
                .collect();
            Ok(Contour {
                loss_level: level,
                points,
                gaps,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub loss_level: f64,
    #[serde(rename = "B_star")]
    pub b_star: f64,
    #[serde(rename = "D_star")]
    pub d_star: f64,
    /// The vertex lies outside the batch sizes it was fitted on.
    pub extrapolated: bool,
}

/// Solves the 3x3 normal equations of `y = c0 + c1·x + c2·x²`.
fn quadratic_ls(xs: &[f64], ys: &[f64]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 4]; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let basis = [1.0, x, x * x];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            m[r][3] += basis[r] * y;
        }
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least-squares parabola of `ln D` on `ln B` through all given points and
/// its vertex.
pub fn fit_contour_parabola(points: &[(f64, f64)], loss_level: f64) -> Result<Vertex, BsLawError> {
    if points.len() < 3 {
        return Err(BsLawError::TooFewPoints(points.len()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    // Centring keeps the normal equations well conditioned.
    let cx = lx.iter().sum::<f64>() / lx.len() as f64;
    let xs: Vec<f64> = lx.iter().map(|x| x - cx).collect();
    let [c0, c1, c2] = quadratic_ls(&xs, &ly).ok_or(BsLawError::NoMinimum { curvature: 0.0 })?;
    let scale = ly.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1.0);
    if !(c2 > 1e-12 * scale) {
        return Err(BsLawError::NoMinimum { curvature: c2 });
    }
    let xv = -c1 / (2.0 * c2);
    let yv = c0 + c1 * xv + c2 * xv * xv;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(Vertex {
        loss_level,
        b_star: (xv + cx).exp(),
        d_star: yv.exp(),
        extrapolated: xv < lo || xv > hi,
    })
}

/// Fits the parabola on up to `2·half_window + 1` points centred on the
/// contour's smallest requirement.
pub fn contour_vertex(contour: &Contour, half_window: usize) -> Result<Vertex, BsLawError> {
    let pts = &contour.points;
    if pts.len() < 3 {
        return Err(BsLawError::TooFewPoints(pts.len()));
    }
    let argmin = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.d_required.total_cmp(&b.1.d_required))
        .map(|(i, _)| i)
        .expect("non-empty contour");
    let width = (2 * half_window + 1).max(3).min(pts.len());
    let start = argmin.saturating_sub(width / 2).min(pts.len() - width);
    let window: Vec<(f64, f64)> = pts[start..start + width]
        .iter()
        .map(|p| (p.b, p.d_required))
        .collect();
    fit_contour_parabola(&window, contour.loss_level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SFloorSource {
    Fitted,
    Hint,
    Default,
}

/// `B_opt(D) = min(D/s_floor, k·D^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoptLaw {
    pub k: f64,
    pub p: f64,
    pub s_floor: f64,
    #[serde(rename = "crossover_D")]
    pub crossover_d: f64,
    pub s_floor_source: SFloorSource,
    /// Range of D spanned by the power-regime vertices.
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Linear,
    Power,
}

impl BoptLaw {
    pub fn new(k: f64, p: f64, s_floor: f64, source: SFloorSource, d_min: f64, d_max: f64) -> Self {
        BoptLaw {
            k,
            p,
            s_floor,
            crossover_d: (s_floor * k).powf(1.0 / (1.0 - p)),
            s_floor_source: source,
            d_min,
            d_max,
        }
    }

    pub fn eval(&self, d: f64) -> f64 {
        (d / self.s_floor).min(self.k * d.powf(self.p))
    }

    pub fn regime(&self, d: f64) -> Regime {
        if d / self.s_floor <= self.k * d.powf(self.p) {
            Regime::Linear
        } else {
            Regime::Power
        }
    }

    pub fn is_extrapolation(&self, d: f64) -> bool {
        self.regime(d) == Regime::Power && (d < self.d_min || d > self.d_max)
    }

    pub fn power_branch(&self) -> PowerLaw {
        PowerLaw {
            k: self.k,
            p: self.p,
            x_min: self.d_min,
            x_max: self.d_max,
        }
    }
}

/// Splits vertices (sorted by D) into a leading linear block and a power
/// tail, choosing the split that minimizes the squared error of `ln B`.
/// Ties go to the smaller linear block; a linear block needs at least two
/// vertices, the power tail at least two, and the tail must be sublinear.
pub fn fit_bopt_law(vertices: &[(f64, f64)], s_floor_hint: Option<f64>) -> Result<BoptLaw, BsLawError> {
    if vertices.len() < 4 {
        return Err(BsLawError::InsufficientVertices(format!("got {}", vertices.len())));
    }
    let mut v: Vec<(f64, f64)> = vertices.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    if v.iter().any(|&(d, b)| !(d > 0.0 && b > 0.0)) {
        return Err(BsLawError::InsufficientVertices("values must be positive".into()));
    }
    if v[v.len() - 1].0 / v[0].0 < 10.0 {
        return Err(BsLawError::InsufficientVertices(format!(
            "D spans only {:.3}x",
            v[v.len() - 1].0 / v[0].0
        )));
    }

    let median = |xs: &mut Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        let m = xs.len() / 2;
        if xs.len() % 2 == 1 {
            xs[m]
        } else {
            0.5 * (xs[m - 1] + xs[m])
        }
    };
    let mut best: Option<(f64, usize, PowerLaw, f64)> = None;
    let splits = std::iter::once(0).chain(2..=v.len());
    for k in splits {
        let (lin, pow) = v.split_at(k);
        let s_floor = match (s_floor_hint, lin.is_empty()) {
            (Some(h), _) => h,
            (None, true) => DEFAULT_S_FLOOR,
            (None, false) => median(&mut lin.iter().map(|&(d, b)| d / b).collect()),
        };
        let mut sse: f64 = lin
            .iter()
            .map(|&(d, b)| (b.ln() - (d / s_floor).ln()).powi(2))
            .sum();
        let law = if pow.len() >= 2 {
            let law = fit_power_law(pow)?;
            // A tail growing at least linearly is not a distinct regime.
            if law.p >= 1.0 - 1e-3 {
                continue;
            }
            sse += pow.iter().map(|&(d, b)| (b.ln() - law.eval(d).ln()).powi(2)).sum::<f64>();
            law
        } else if pow.is_empty() {
            if best.as_ref().map_or(true, |b| sse <= b.0) {
                return Err(BsLawError::NoPowerRegime);
            }
            continue;
        } else {
            continue;
        };
        if best.as_ref().map_or(true, |b| sse < b.0 * (1.0 - 1e-12)) {
            best = Some((sse, k, law, s_floor));
        }
    }
    let (_, k, law, s_floor) = best.expect("k = 0 always yields a candidate");
    let source = match (s_floor_hint, k) {
        (Some(_), _) => SFloorSource::Hint,
        (None, 0) => SFloorSource::Default,
        (None, _) => SFloorSource::Fitted,
    };
    Ok(BoptLaw::new(law.k, law.p, s_floor, source, law.x_min, law.x_max))
}

/// `S_opt(D) = D / B_opt(D)` on the power branch.
pub fn derive_sopt(law: &BoptLaw) -> PowerLaw {
    PowerLaw {
        k: 1.0 / law.k,
        p: 1.0 - law.p,
        x_min: law.d_min,
        x_max: law.d_max,
    }
}

/// Contours, vertices and law for one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoptAnalysis {
    pub contours: Vec<Contour>,
    pub vertices: Vec<Vertex>,
    /// Levels whose contour produced no usable vertex, with the reason.
    pub skipped: Vec<(f64, String)>,
}

impl BoptAnalysis {
    /// Vertices inside their fitted batch range, as `(D, B)` pairs.
    pub fn fit_pairs(&self, include_extrapolated: bool) -> Vec<(f64, f64)> {
        self.vertices
            .iter()
            .filter(|v| include_extrapolated || !v.extrapolated)
            .map(|v| (v.d_star, v.b_star))
            .collect()
    }
}

pub fn analyze_contours(
    runset: &RunSet,
    levels: &[f64],
    policy: LrPolicy,
    half_window: usize,
) -> Result<BoptAnalysis, BsLawError> {
    let contours = iso_loss_contour(runset, levels, policy)?;
    let mut vertices = Vec::new();
    let mut skipped = Vec::new();
    for c in &contours {
        match contour_vertex(c, half_window) {
            Ok(v) => vertices.push(v),
            Err(e) => skipped.push((c.loss_level, e.to_string())),
        }
    }
    Ok(BoptAnalysis {
        contours,
        vertices,
        skipped,
    })
}

pub fn contour_points_csv(contours: &[Contour]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["loss_level", "B", "D_required", "is_fitted_extrapolation"])
        .expect("in-memory write");
    for c in contours {
        for p in &c.points {
            w.write_record(&[
                p.loss_level.to_string(),
                p.b.to_string(),
                p.d_required.to_string(),
                "false".into(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn vertices_csv(vertices: &[Vertex]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["loss_level", "B", "D_required", "is_fitted_extrapolation"])
        .expect("in-memory write");
    for v in vertices {
        w.write_record(&[
            v.loss_level.to_string(),
            v.b_star.to_string(),
            v.d_star.to_string(),
            v.extrapolated.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::{CurvePoint, ModelSpec, RunRecord};
    use proptest::prelude::*;

    fn published_law() -> BoptLaw {
        BoptLaw::new(3.24e3, 0.264, DEFAULT_S_FLOOR, SFloorSource::Default, 1e10, 1e12)
    }

    fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    fn run(id: &str, batch: f64, scheme: LrScheme, loss: impl Fn(f64) -> f64) -> RunRecord {
        let points = logspace(batch * 100.0, 1e13, 400)
            .into_iter()
            .map(|t| CurvePoint::new((t / batch).round() as u64, t, loss(t)))
            .collect();
        RunRecord {
            run_id: id.into(),
            model: ModelSpec::new(3.5e8),
            batch_size_tokens: batch,
            lr_peak: 3e-4,
            lr_scheme: scheme,
            lr_factor: 1.0,
            warmup_steps: 1,
            decay_steps: 1,
            diverged: false,
            points,
        }
    }

    // Data-limited loss with D_required = d_min(L)·(1 + B/B_crit).
    const E: f64 = 2.0;
    const BC: f64 = 2e6;
    fn d_min(l: f64) -> f64 {
        (400.0 / (l - E)).powf(1.0 / 0.3)
    }
    fn loss_at(d: f64, factor: f64) -> f64 {
        E + 400.0 * (d / factor).powf(-0.3)
    }

    #[test]
    fn analytic_contour() {
        let mut rs = RunSet::new();
        for (i, b) in [5e5, 2e6, 8e6].into_iter().enumerate() {
            rs.insert(run(&format!("r{i}"), b, LrScheme::Origin, |d| loss_at(d, 1.0 + b / BC)))
                .unwrap();
        }
        let level = 2.9;
        let c = iso_loss_contour(&rs, &[level], LrPolicy::BestOfSchemes).unwrap();
        assert_eq!(c[0].points.len(), 3);
        for p in &c[0].points {
            let expect = d_min(level) * (1.0 + p.b / BC);
            assert!((p.d_required / expect - 1.0).abs() < 0.005, "{p:?} vs {expect}");
        }
    }

    #[test]
    fn unreachable_level_is_an_error() {
        let mut rs = RunSet::new();
        for (i, b) in [5e5, 2e6, 8e6].into_iter().enumerate() {
            rs.insert(run(&format!("r{i}"), b, LrScheme::Origin, |d| loss_at(d, 1.0 + b / BC)))
                .unwrap();
        }
        assert_eq!(
            iso_loss_contour(&rs, &[2.0], LrPolicy::BestOfSchemes),
            Err(BsLawError::EmptyContour { level: 2.0 })
        );
    }

    #[test]
    fn best_of_schemes_dominates_fixed() {
        let mut rs = RunSet::new();
        for (i, b) in [5e5, 2e6, 8e6].into_iter().enumerate() {
            let f = 1.0 + b / BC;
            rs.insert(run(&format!("o{i}"), b, LrScheme::Origin, move |d| loss_at(d, f * 1.3)))
                .unwrap();
            rs.insert(run(&format!("s{i}"), b, LrScheme::Sqrt, move |d| loss_at(d, f * (1.0 + i as f64 * 0.2))))
                .unwrap();
        }
        let levels = [2.8, 3.0, 3.4];
        let best = iso_loss_contour(&rs, &levels, LrPolicy::BestOfSchemes).unwrap();
        for scheme in [LrScheme::Origin, LrScheme::Sqrt] {
            let fixed = iso_loss_contour(&rs, &levels, LrPolicy::FixedScheme(scheme)).unwrap();
            for (b, f) in best.iter().zip(&fixed) {
                for (pb, pf) in b.points.iter().zip(&f.points) {
                    assert!(pb.d_required <= pf.d_required);
                }
            }
        }
    }

    #[test]
    fn exact_parabola_vertex() {
        let pts: Vec<(f64, f64)> = [1e6, 2e6, 4e6, 8e6, 1.6e7]
            .iter()
            .map(|&b: &f64| {
                let x = b.ln() - 4e6f64.ln();
                (b, (x * x + 1e11f64.ln()).exp())
            })
            .collect();
        let v = fit_contour_parabola(&pts, 3.0).unwrap();
        assert!((v.b_star / 4e6 - 1.0).abs() < 1e-9, "{v:?}");
        assert!((v.d_star / 1e11 - 1.0).abs() < 1e-9, "{v:?}");
        assert!(!v.extrapolated);
    }

    #[test]
    fn penalized_contour_vertex_matches_dense_argmin() {
        // D(B) = D_min·(1 + b)(1 + kappa/b), b = B/B_crit.
        let kappa = 2.0;
        let d = |b: f64| 1e10 * (1.0 + b / BC) * (1.0 + kappa * BC / b);
        let dense = logspace(1e5, 1e8, 200_001);
        let brute = dense.iter().copied().min_by(|a, b| d(*a).total_cmp(&d(*b))).unwrap();
        let points = [5e5, 1e6, 2e6, 4e6, 8e6, 1.6e7, 3.2e7]
            .iter()
            .map(|&b| ContourPoint {
                loss_level: 3.0,
                b,
                d_required: d(b),
                run_id: String::new(),
            })
            .collect();
        let contour = Contour {
            loss_level: 3.0,
            points,
            gaps: vec![],
        };
        let v = contour_vertex(&contour, DEFAULT_HALF_WINDOW).unwrap();
        assert!((v.b_star / brute - 1.0).abs() < 0.03, "{} vs {brute}", v.b_star);
    }

    #[test]
    fn monotone_contour_vertex_is_extrapolated() {
        // ln(1 + B/B_crit) is convex in ln B, so the vertex falls left of the data.
        let pts: Vec<(f64, f64)> = [1e6, 2e6, 4e6, 8e6]
            .iter()
            .map(|&b| (b, 1e10 * (1.0 + b / BC)))
            .collect();
        let v = fit_contour_parabola(&pts, 3.0).unwrap();
        assert!(v.extrapolated && v.b_star < 1e6, "{v:?}");
        assert_eq!(fit_contour_parabola(&pts[..2], 3.0), Err(BsLawError::TooFewPoints(2)));
    }

    #[test]
    fn concave_or_flat_contour_has_no_minimum() {
        let concave: Vec<(f64, f64)> = [1e6, 2e6, 4e6, 8e6]
            .iter()
            .map(|&b: &f64| (b, (25.0 - 0.1 * (b.ln() - 2e6f64.ln()).powi(2)).exp()))
            .collect();
        assert!(matches!(fit_contour_parabola(&concave, 3.0), Err(BsLawError::NoMinimum { .. })));
        let flat: Vec<(f64, f64)> = [1e6, 2e6, 4e6].iter().map(|&b| (b, 1e10)).collect();
        assert!(matches!(fit_contour_parabola(&flat, 3.0), Err(BsLawError::NoMinimum { .. })));
    }

    #[test]
    fn vertex_outside_window_is_flagged() {
        let pts: Vec<(f64, f64)> = [1e6, 2e6, 4e6]
            .iter()
            .map(|&b: &f64| {
                let x = b.ln() - 2e7f64.ln();
                (b, (0.1 * x * x + 25.0).exp())
            })
            .collect();
        assert!(fit_contour_parabola(&pts, 3.0).unwrap().extrapolated);
    }

    #[test]
    fn power_only_vertices_recover_constants() {
        let v: Vec<(f64, f64)> = logspace(1e10, 1e12, 9)
            .into_iter()
            .map(|d| (d, 3.24e3 * d.powf(0.264)))
            .collect();
        let law = fit_bopt_law(&v, None).unwrap();
        assert!((law.k / 3.24e3 - 1.0).abs() < 0.01 && (law.p - 0.264).abs() < 0.005, "{law:?}");
        assert_eq!(law.s_floor, DEFAULT_S_FLOOR);
        assert_eq!(law.s_floor_source, SFloorSource::Default);
    }

    #[test]
    fn two_regimes_are_separated() {
        let truth = BoptLaw::new(3.24e3, 0.264, 3000.0, SFloorSource::Fitted, 1e8, 1e13);
        let v: Vec<(f64, f64)> = logspace(3e8, 1e12, 14).into_iter().map(|d| (d, truth.eval(d))).collect();
        let law = fit_bopt_law(&v, None).unwrap();
        assert_eq!(law.s_floor_source, SFloorSource::Fitted);
        assert!((law.s_floor / 3000.0 - 1.0).abs() < 1e-9, "{law:?}");
        assert!((law.p - 0.264).abs() < 1e-9 && (law.k / 3.24e3 - 1.0).abs() < 1e-9);
        assert!((law.crossover_d / truth.crossover_d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_linear_vertices_fail() {
        let v: Vec<(f64, f64)> = logspace(1e6, 1e8, 6).into_iter().map(|d| (d, d / 4000.0)).collect();
        assert_eq!(fit_bopt_law(&v, None), Err(BsLawError::NoPowerRegime));
    }

    #[test]
    fn vertex_preconditions() {
        let v = [(1e10, 1e6), (2e10, 1.1e6), (3e10, 1.2e6), (4e10, 1.3e6)];
        assert!(matches!(fit_bopt_law(&v, None), Err(BsLawError::InsufficientVertices(_))));
        assert!(matches!(fit_bopt_law(&v[..3], None), Err(BsLawError::InsufficientVertices(_))));
    }

    #[test]
    fn published_law_evaluations() {
        let law = published_law();
        assert!((law.eval(1e12) / 4.7e6 - 1.0).abs() < 0.02, "{}", law.eval(1e12));
        assert!((law.eval(1e13) / 8.7e6 - 1.0).abs() < 0.02, "{}", law.eval(1e13));
        assert!((law.eval(2e11) / 3.12e6 - 1.0).abs() < 0.01, "{}", law.eval(2e11));
        assert_eq!(law.eval(1e7), 1e7 / 4000.0);
        assert_eq!(law.regime(1e7), Regime::Linear);
    }

    #[test]
    fn derived_step_law() {
        let s = derive_sopt(&published_law());
        assert!((s.k / 3.09e-4 - 1.0).abs() < 0.005, "{s:?}");
        assert!((s.p - 0.736).abs() < 1e-12);
        let law = published_law();
        for d in logspace(1e10, 1e13, 10) {
            assert!((s.eval(d) * law.eval(d) / d - 1.0).abs() < 1e-12);
        }
        let below = law.crossover_d / 10.0;
        assert!((below / law.eval(below) / law.s_floor - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_columns() {
        let v = [Vertex {
            loss_level: 3.0,
            b_star: 1e6,
            d_star: 1e10,
            extrapolated: true,
        }];
        assert_eq!(
            vertices_csv(&v),
            "loss_level,B,D_required,is_fitted_extrapolation\n3,1000000,10000000000,true\n"
        );
    }

    proptest! {
        #[test]
        fn law_continuous_and_monotone(k in 1e2f64..1e5, p in 0.05f64..0.9, s in 500.0f64..20000.0,
                                       d1 in 1e5f64..1e14, f in 1.0f64..100.0) {
            let law = BoptLaw::new(k, p, s, SFloorSource::Hint, 1e5, 1e14);
            let x = law.crossover_d;
            prop_assert!(((x / s) / (k * x.powf(p)) - 1.0).abs() < 1e-9);
            prop_assert!(law.eval(d1 * f) >= law.eval(d1));
            let d = d1;
            if d < x {
                prop_assert!(d / s <= k * d.powf(p) * (1.0 + 1e-12));
            } else {
                prop_assert!(d / s >= k * d.powf(p) * (1.0 - 1e-12));
            }
        }
    }
}
