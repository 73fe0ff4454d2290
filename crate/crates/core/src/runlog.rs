//! Training-run data model: JSONL ingestion, curve smoothing, FLOP accounting
//! and curve inversion.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunLogError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: field `{field}` {message}")]
    Invalid {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: duplicate run_id \"{run_id}\"")]
    Conflict { line: usize, run_id: String },
    #[error("line {line}: run \"{run_id}\": curve not strictly increasing at point {index}")]
    NonMonotone {
        line: usize,
        run_id: String,
        index: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("target loss {target} is below the curve's final loss {final_loss}")]
    Unreachable { target: f64, final_loss: f64 },
    #[error("target loss {target} is above the curve's initial loss {initial_loss}")]
    PreRange { target: f64, initial_loss: f64 },
    #[error("tokens {tokens} lie outside the curve span [{first}, {last}]")]
    OutOfSpan { tokens: f64, first: f64, last: f64 },
}

/// Architecture summary of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Non-embedding parameter count.
    pub n_params: f64,
    pub layers: Option<u32>,
    pub hidden: Option<u32>,
    pub heads: Option<u32>,
    pub label: String,
}

impl ModelSpec {
    pub fn new(n_params: f64) -> Self {
        ModelSpec {
            n_params,
            layers: None,
            hidden: None,
            heads: None,
            label: String::new(),
        }
    }
}

/// One logged checkpoint of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub tokens: f64,
    /// Per-token cross-entropy in nats.
    pub loss: f64,
}

impl CurvePoint {
    pub fn new(step: u64, tokens: f64, loss: f64) -> Self {
        CurvePoint { step, tokens, loss }
    }
}

/// How the peak learning rate was derived from the base configuration when
/// the batch size changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrScheme {
    Origin,
    Sqrt,
    Linear,
}

impl LrScheme {
    pub const ALL: [LrScheme; 3] = [LrScheme::Origin, LrScheme::Sqrt, LrScheme::Linear];

    /// Multiplier applied to the base learning rate when moving from
    /// `base_batch` to `batch`.
    pub fn scale(self, base_batch: f64, batch: f64) -> f64 {
        let ratio = batch / base_batch;
        match self {
            LrScheme::Origin => 1.0,
            LrScheme::Sqrt => ratio.sqrt(),
            LrScheme::Linear => ratio,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LrScheme::Origin => "origin",
            LrScheme::Sqrt => "sqrt",
            LrScheme::Linear => "linear",
        }
    }
}

impl fmt::Display for LrScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single training run and its loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub model: ModelSpec,
    /// Tokens per global batch.
    pub batch_size_tokens: f64,
    pub lr_peak: f64,
    pub lr_scheme: LrScheme,
    /// Extra multiplier on top of the scheme (the "×k" axis of an LR sweep).
    pub lr_factor: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    /// Set when the run blew up; its curve is truncated at the divergence.
    pub diverged: bool,
    pub points: Vec<CurvePoint>,
}

impl RunRecord {
    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn final_tokens(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.tokens)
    }

    /// Smoothing parameters used when none are given explicitly: half-life of
    /// 1% of the run's tokens, and a transient cut of max(1%, warm-up span).
    pub fn default_smoothing(&self) -> Smoothing {
        let total = self.final_tokens();
        let warmup = self.warmup_steps as f64 * self.batch_size_tokens;
        let discard = if total > 0.0 {
            (warmup / total).max(0.01)
        } else {
            0.01
        };
        Smoothing {
            half_life_tokens: 0.01 * total.max(1.0),
            discard_fraction: discard.min(0.99),
        }
    }

    /// The run's curve after default smoothing.
    pub fn smoothed(&self) -> Result<Vec<CurvePoint>, RunLogError> {
        let s = self.default_smoothing();
        smooth_curve(&self.points, s.half_life_tokens, s.discard_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub half_life_tokens: f64,
    pub discard_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source: Option<String>,
    pub ingested_at: Option<String>,
}

/// Runs keyed by id, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSet {
    pub runs: BTreeMap<String, RunRecord>,
    pub provenance: Provenance,
}

impl RunSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values()
    }

    pub fn get(&self, run_id: &str) -> Option<&RunRecord> {
        self.runs.get(run_id)
    }

    /// Inserts a validated run; fails when the id is already present.
    pub fn insert(&mut self, run: RunRecord) -> Result<(), RunLogError> {
        validate_run(&run, 0)?;
        if self.runs.contains_key(&run.run_id) {
            return Err(RunLogError::Conflict {
                line: 0,
                run_id: run.run_id,
            });
        }
        self.runs.insert(run.run_id.clone(), run);
        Ok(())
    }

    /// Distinct model sizes, ascending.
    pub fn model_sizes(&self) -> Vec<f64> {
        let mut sizes: Vec<f64> = self.iter().map(|r| r.model.n_params).collect();
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        sizes
    }

    /// Runs sharing a model size (exact match), in id order.
    pub fn runs_for_model(&self, n_params: f64) -> Vec<&RunRecord> {
        self.iter().filter(|r| r.model.n_params == n_params).collect()
    }

    /// Subset of runs satisfying `keep`.
    pub fn filtered(&self, keep: impl Fn(&RunRecord) -> bool) -> RunSet {
        RunSet {
            runs: self
                .runs
                .iter()
                .filter(|(_, r)| keep(r))
                .map(|(k, r)| (k.clone(), r.clone()))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Copy with every curve replaced by its log-token smoothing, using each
    /// run's default transient cut. Runs left with fewer than two points are
    /// dropped.
    pub fn log_smoothed(&self, half_life_log: f64) -> RunSet {
        let runs = self
            .runs
            .iter()
            .filter_map(|(k, r)| {
                let cut = r.default_smoothing().discard_fraction;
                let points = smooth_curve_log(&r.points, half_life_log, cut).ok()?;
                Some((k.clone(), RunRecord { points, ..r.clone() }))
            })
            .collect();
        RunSet {
            runs,
            provenance: self.provenance.clone(),
        }
    }

    /// JSONL serialization, one run per line in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for run in self.iter() {
            let line = RunLine::from(run);
            out.push_str(&serde_json::to_string(&line).expect("run records always serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parses JSONL text, one run per non-blank line.
pub fn parse_runs<'a, I>(lines: I) -> Result<RunSet, RunLogError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut set = RunSet::new();
    for (idx, raw) in lines.into_iter().enumerate() {
        let line_no = idx + 1;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let parsed: RunLine = serde_json::from_str(text).map_err(|e| RunLogError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let run = RunRecord::from(parsed);
        validate_run(&run, line_no)?;
        if set.runs.contains_key(&run.run_id) {
            return Err(RunLogError::Conflict {
                line: line_no,
                run_id: run.run_id,
            });
        }
        set.runs.insert(run.run_id.clone(), run);
    }
    Ok(set)
}

/// Parses a whole JSONL document.
pub fn parse_runs_str(text: &str) -> Result<RunSet, RunLogError> {
    parse_runs(text.lines())
}

fn validate_run(run: &RunRecord, line: usize) -> Result<(), RunLogError> {
    let invalid = |field: &'static str, message: String| RunLogError::Invalid {
        line,
        field,
        message,
    };
    if run.run_id.is_empty() {
        return Err(invalid("run_id", "must not be empty".into()));
    }
    let positive = |field: &'static str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(invalid(field, format!("must be a positive finite number, got {v}")))
        }
    };
    positive("n_params", run.model.n_params)?;
    positive("batch_size_tokens", run.batch_size_tokens)?;
    positive("lr_peak", run.lr_peak)?;
    positive("lr_factor", run.lr_factor)?;
    let batch = run.batch_size_tokens;
    for (i, p) in run.points.iter().enumerate() {
        if p.step == 0 {
            return Err(invalid("points", format!("point {i}: step must be >= 1")));
        }
        if !(p.loss.is_finite() && p.loss > 0.0) {
            return Err(invalid(
                "points",
                format!("point {i}: loss must be positive and finite, got {}", p.loss),
            ));
        }
        if !(p.tokens.is_finite() && p.tokens > 0.0) {
            return Err(invalid("points", format!("point {i}: tokens must be positive")));
        }
        if (p.tokens - p.step as f64 * batch).abs() > batch {
            return Err(invalid(
                "points",
                format!(
                    "point {i}: tokens {} disagree with step {} x batch {}",
                    p.tokens, p.step, batch
                ),
            ));
        }
        if i > 0 {
            let prev = &run.points[i - 1];
            if p.step <= prev.step || p.tokens <= prev.tokens {
                return Err(RunLogError::NonMonotone {
                    line,
                    run_id: run.run_id.clone(),
                    index: i,
                });
            }
        }
    }
    Ok(())
}

/// Wire form of one JSONL record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunLine {
    run_id: String,
    n_params: f64,
    batch_size_tokens: f64,
    lr_peak: f64,
    lr_scheme: LrScheme,
    #[serde(default = "default_factor", skip_serializing_if = "is_unit")]
    lr_factor: f64,
    #[serde(deserialize_with = "integral")]
    warmup_steps: u64,
    #[serde(deserialize_with = "integral")]
    decay_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heads: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    diverged: bool,
    points: Vec<PointRow>,
}

fn default_factor() -> f64 {
    1.0
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

fn integral<'de, D: Deserializer<'de>>(de: D) -> Result<u64, D::Error> {
    let v = f64::deserialize(de)?;
    as_count(v).ok_or_else(|| serde::de::Error::custom(format!("expected a non-negative integer, got {v}")))
}

fn as_count(v: f64) -> Option<u64> {
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 9.0e15).then_some(v as u64)
}

/// `[step, tokens, loss]`; the step accepts any integral JSON number.
#[derive(Debug, Clone, Copy)]
struct PointRow(CurvePoint);

impl Serialize for PointRow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.0.step, self.0.tokens, self.0.loss).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PointRow {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let (step, tokens, loss) = <(f64, f64, f64)>::deserialize(de)?;
        let step = as_count(step)
            .ok_or_else(|| serde::de::Error::custom(format!("points: step must be an integer, got {step}")))?;
        Ok(PointRow(CurvePoint { step, tokens, loss }))
    }
}

impl From<RunLine> for RunRecord {
    fn from(l: RunLine) -> Self {
        RunRecord {
            run_id: l.run_id,
            model: ModelSpec {
                n_params: l.n_params,
                layers: l.layers,
                hidden: l.hidden,
                heads: l.heads,
                label: l.label.unwrap_or_default(),
            },
            batch_size_tokens: l.batch_size_tokens,
            lr_peak: l.lr_peak,
            lr_scheme: l.lr_scheme,
            lr_factor: l.lr_factor,
            warmup_steps: l.warmup_steps,
            decay_steps: l.decay_steps,
            diverged: l.diverged,
            points: l.points.into_iter().map(|p| p.0).collect(),
        }
    }
}

impl From<&RunRecord> for RunLine {
    fn from(r: &RunRecord) -> Self {
        RunLine {
            run_id: r.run_id.clone(),
            n_params: r.model.n_params,
            batch_size_tokens: r.batch_size_tokens,
            lr_peak: r.lr_peak,
            lr_scheme: r.lr_scheme,
            lr_factor: r.lr_factor,
            warmup_steps: r.warmup_steps,
            decay_steps: r.decay_steps,
            label: (!r.model.label.is_empty()).then(|| r.model.label.clone()),
            layers: r.model.layers,
            hidden: r.model.hidden,
            heads: r.model.heads,
            diverged: r.diverged,
            points: r.points.iter().copied().map(PointRow).collect(),
        }
    }
}

/// Drops the transient head of a curve and replaces losses with a
/// token-weighted exponential moving average.
///
/// Each earlier point's weight halves every `half_life_tokens`; the average
/// is normalized by the total weight, so it is a convex combination of the
/// surviving losses.
pub fn smooth_curve(
    points: &[CurvePoint],
    half_life_tokens: f64,
    discard_fraction: f64,
) -> Result<Vec<CurvePoint>, RunLogError> {
    assert!(half_life_tokens > 0.0, "half-life must be positive");
    assert!(
        (0.0..1.0).contains(&discard_fraction),
        "discard fraction must lie in [0, 1)"
    );
    let kept = transient_cut(points, discard_fraction)?;
    Ok(ema(&kept, |prev, cur| (cur - prev) / half_life_tokens))
}

/// Like [`smooth_curve`], but weights halve every `half_life_log` in
/// `ln tokens`. The lag is then a constant factor on tokens, so a power law
/// in tokens keeps its exponent and only its coefficient shifts.
pub fn smooth_curve_log(
    points: &[CurvePoint],
    half_life_log: f64,
    discard_fraction: f64,
) -> Result<Vec<CurvePoint>, RunLogError> {
    assert!(half_life_log > 0.0, "half-life must be positive");
    assert!(
        (0.0..1.0).contains(&discard_fraction),
        "discard fraction must lie in [0, 1)"
    );
    let kept = transient_cut(points, discard_fraction)?;
    Ok(ema(&kept, |prev, cur| (cur / prev).ln() / half_life_log))
}

fn transient_cut(points: &[CurvePoint], discard_fraction: f64) -> Result<Vec<&CurvePoint>, RunLogError> {
    if points.len() < 2 {
        return Err(RunLogError::InsufficientData(format!(
            "smoothing needs at least 2 points, got {}",
            points.len()
        )));
    }
    let cutoff = discard_fraction * points[points.len() - 1].tokens;
    let kept: Vec<&CurvePoint> = points.iter().filter(|p| p.tokens >= cutoff).collect();
    if kept.len() < 2 {
        return Err(RunLogError::InsufficientData(format!(
            "only {} point(s) survive the transient cut",
            kept.len()
        )));
    }
    Ok(kept)
}

/// Normalized EMA; `half_lives(prev, cur)` is the gap in half-lives.
fn ema(kept: &[&CurvePoint], half_lives: impl Fn(f64, f64) -> f64) -> Vec<CurvePoint> {
    let mut weighted = 0.0;
    let mut weight = 0.0;
    let mut prev_tokens = kept[0].tokens;
    let mut out = Vec::with_capacity(kept.len());
    for p in kept {
        let decay = 0.5f64.powf(half_lives(prev_tokens, p.tokens));
        weighted = weighted * decay + p.loss;
        weight = weight * decay + 1.0;
        prev_tokens = p.tokens;
        out.push(CurvePoint {
            step: p.step,
            tokens: p.tokens,
            loss: weighted / weight,
        });
    }
    out
}

/// Training compute, `6·N·D` FLOPs.
#[inline]
pub fn flops<T: Real>(n_params: T, tokens: T) -> T {
    T::lit(6.0) * n_params * tokens
}

/// First token count at which the running-minimum envelope of `points`
/// reaches `target_loss`, interpolating linearly in (log tokens, loss).
pub fn tokens_at_loss(points: &[CurvePoint], target_loss: f64) -> Result<f64, RunLogError> {
    let first = points
        .first()
        .ok_or_else(|| RunLogError::InsufficientData("empty curve".into()))?;
    if target_loss > first.loss {
        return Err(RunLogError::PreRange {
            target: target_loss,
            initial_loss: first.loss,
        });
    }
    if target_loss == first.loss {
        return Ok(first.tokens);
    }
    let mut envelope = first.loss;
    let mut prev = (first.tokens.ln(), first.loss);
    for p in &points[1..] {
        let level = envelope.min(p.loss);
        if level <= target_loss {
            if level == target_loss {
                return Ok(p.tokens);
            }
            let (x0, y0) = prev;
            let x1 = p.tokens.ln();
            let t = (y0 - target_loss) / (y0 - level);
            return Ok((x0 + t * (x1 - x0)).exp());
        }
        envelope = level;
        prev = (p.tokens.ln(), level);
    }
    Err(RunLogError::Unreachable {
        target: target_loss,
        final_loss: envelope,
    })
}

/// Loss at `tokens`, interpolated linearly in log-tokens between checkpoints.
pub fn loss_at_tokens(points: &[CurvePoint], tokens: f64) -> Result<f64, RunLogError> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(RunLogError::InsufficientData("empty curve".into())),
    };
    if tokens < first.tokens || tokens > last.tokens || !tokens.is_finite() {
        return Err(RunLogError::OutOfSpan {
            tokens,
            first: first.tokens,
            last: last.tokens,
        });
    }
    let idx = points.partition_point(|p| p.tokens < tokens);
    if idx == 0 {
        return Ok(first.loss);
    }
    let (a, b) = (&points[idx - 1], &points[idx]);
    if b.tokens == tokens {
        return Ok(b.loss);
    }
    let t = (tokens.ln() - a.tokens.ln()) / (b.tokens.ln() - a.tokens.ln());
    Ok(a.loss + t * (b.loss - a.loss))
}

/// CSV of a curve with columns `step,tokens,loss`.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "tokens", "loss"]).expect("in-memory write");
    for p in points {
        w.write_record(&[p.step.to_string(), p.tokens.to_string(), p.loss.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Every run's curve in one table, runs in id order.
pub fn runs_to_csv(runset: &RunSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "n_params", "batch_size_tokens", "lr_peak", "step", "tokens", "loss"])
        .expect("in-memory write");
    for r in runset.iter() {
        for p in &r.points {
            w.write_record(&[
                r.run_id.clone(),
                r.model.n_params.to_string(),
                r.batch_size_tokens.to_string(),
                r.lr_peak.to_string(),
                p.step.to_string(),
                p.tokens.to_string(),
                p.loss.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
