//! Training recommendations from fitted laws: model size, data, steps, batch
//! size and learning rate for a compute budget or a fixed data budget, plus
//! iso-loss model compression and preset lookup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Preset;
use crate::bslaw::{BoptLaw, Regime};
use crate::frontier::FrontierReport;
use crate::lawfit::{ChinchillaLaw, LawFitError};
use crate::lrlaw::{scale_lr, LrLaw, LrScaling};

/// Relative gap between the frontier loss and the loss law above which the
/// recommendation carries a warning.
const LOSS_CROSS_CHECK_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdviseError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("the preset table is empty")]
    EmptyPresets,
    #[error("candidate D {candidate} is below the reference D {reference}")]
    CandidateBelowReference { candidate: f64, reference: f64 },
    #[error(transparent)]
    Law(#[from] LawFitError),
}

fn positive(name: &'static str, value: f64) -> Result<(), AdviseError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AdviseError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviseMode {
    Compute,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub mode: AdviseMode,
    #[serde(rename = "C")]
    pub compute: Option<f64>,
    #[serde(rename = "N")]
    pub n: Option<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "LR")]
    pub lr: Option<f64>,
    pub lr_base: Option<f64>,
    #[serde(rename = "lr_base_B")]
    pub lr_base_b: Option<f64>,
    pub lr_scheme: LrScaling,
    pub predicted_loss: Option<f64>,
    /// The loss law at `(N, D)` when both the frontier and the law are known.
    pub loss_cross_check: Option<f64>,
    pub regime: Option<Regime>,
    /// Field name → the law or rule that produced it.
    pub provenance: BTreeMap<String, String>,
    pub extrapolation_flags: Vec<Flag>,
}

impl Recommendation {
    fn flag(&mut self, field: &str, message: String) {
        self.extrapolation_flags.push(Flag {
            field: field.into(),
            message,
        });
    }

    fn source(&mut self, field: &str, text: impl Into<String>) {
        self.provenance.insert(field.into(), text.into());
    }
}

/// An explicit `(LR, B)` baseline that replaces preset anchoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrAnchor {
    pub lr: f64,
    pub batch: f64,
}

/// Nearest preset by `|ln N − ln N_preset|`; ties go to the larger model.
pub fn preset_lookup(presets: &[Preset], n_params: f64) -> Result<&Preset, AdviseError> {
    positive("N", n_params)?;
    let mut best: Option<(&Preset, f64)> = None;
    for p in presets {
        let dist = (n_params.ln() - p.n_params.ln()).abs();
        let better = match best {
            None => true,
            Some((b, bd)) => dist < bd || (dist == bd && p.n_params > b.n_params),
        };
        if better {
            best = Some((p, dist));
        }
    }
    best.map(|(p, _)| p).ok_or(AdviseError::EmptyPresets)
}

/// Scales the anchor LR to `batch` and applies the ceiling, recording how.
fn anchored_lr(
    rec: &mut Recommendation,
    anchor: LrAnchor,
    anchor_name: &str,
    batch: f64,
    scaling: LrScaling,
    lr_law: Option<&LrLaw>,
) {
    let scaled = scale_lr(anchor.lr, anchor.batch, batch, scaling).expect("anchor and batch are positive");
    let mut source = format!("{anchor_name} scaled {scaling} from B={} to B", anchor.batch);
    let lr = match lr_law.and_then(|l| l.lr_ceiling) {
        Some(ceiling) if scaled > ceiling => {
            source.push_str(", capped at lr_law.lr_ceiling");
            ceiling
        }
        _ => scaled,
    };
    rec.lr = Some(lr);
    rec.lr_base = Some(anchor.lr);
    rec.lr_base_b = Some(anchor.batch);
    rec.source("LR", source);
}

/// Compute mode: `N` from `N_opt(C)`, `D = C/(6N)`, `S` from `S_opt(C)`,
/// `B = D/S`; the loss comes from `L_opt(C)`.
pub fn advise_compute(
    frontier: &FrontierReport,
    law: Option<&ChinchillaLaw>,
    lr_law: Option<&LrLaw>,
    presets: &[Preset],
    compute: f64,
    scaling: LrScaling,
) -> Result<Recommendation, AdviseError> {
    positive("C", compute)?;
    let n = frontier.n_opt.eval(compute);
    let d = compute / (6.0 * n);
    let s = frontier.s_opt.eval(compute);
    let b = d / s;
    let mut rec = Recommendation {
        mode: AdviseMode::Compute,
        compute: Some(compute),
        n: Some(n),
        d,
        s,
        b,
        lr: None,
        lr_base: None,
        lr_base_b: None,
        lr_scheme: scaling,
        predicted_loss: Some(frontier.l_opt.eval(compute)),
        loss_cross_check: law.map(|l| l.eval(n, d)),
        regime: None,
        provenance: BTreeMap::new(),
        extrapolation_flags: Vec::new(),
    };
    rec.source("N", "frontier.n_opt at C");
    rec.source("D", "identity D = C / (6 N)");
    rec.source("S", "frontier.s_opt at C");
    rec.source("B", "identity B = D / S");
    rec.source("predicted_loss", "frontier.l_opt at C");
    if law.is_some() {
        rec.source("loss_cross_check", "loss law at (N, D)");
    }
    for (field, pl) in [
        ("N", &frontier.n_opt),
        ("S", &frontier.s_opt),
        ("B", &frontier.b_opt),
        ("predicted_loss", &frontier.l_opt),
    ] {
        if pl.is_extrapolation(compute) {
            rec.flag(
                field,
                format!("C={compute:e} outside the fitted range [{:.3e}, {:.3e}]", pl.x_min, pl.x_max),
            );
        }
    }
    if let (Some(pred), Some(check)) = (rec.predicted_loss, rec.loss_cross_check) {
        if (pred / check - 1.0).abs() > LOSS_CROSS_CHECK_TOLERANCE {
            rec.flag(
                "predicted_loss",
                format!("frontier loss {pred:.4} and loss law {check:.4} differ by more than 5%"),
            );
        }
    }
    let preset = preset_lookup(presets, n)?;
    let anchor = LrAnchor {
        lr: preset.max_lr,
        batch: preset.gbs,
    };
    anchored_lr(&mut rec, anchor, &format!("preset {}", preset.label), b, scaling, lr_law);
    Ok(rec)
}

/// Data mode: `B` from the two-regime batch law, `S = D/B`. The LR comes
/// from `anchor` when given, otherwise from the preset nearest `n_params`;
/// with neither, no LR is recommended.
#[allow(clippy::too_many_arguments)]
pub fn advise_data(
    bopt: &BoptLaw,
    law: Option<&ChinchillaLaw>,
    lr_law: Option<&LrLaw>,
    presets: &[Preset],
    d: f64,
    n_params: Option<f64>,
    anchor: Option<LrAnchor>,
    scaling: LrScaling,
) -> Result<Recommendation, AdviseError> {
    positive("D", d)?;
    if let Some(n) = n_params {
        positive("N", n)?;
    }
    if let Some(a) = anchor {
        positive("anchor LR", a.lr)?;
        positive("anchor B", a.batch)?;
    }
    let b = bopt.eval(d);
    let regime = bopt.regime(d);
    let mut rec = Recommendation {
        mode: AdviseMode::Data,
        compute: n_params.map(|n| 6.0 * n * d),
        n: n_params,
        d,
        s: d / b,
        b,
        lr: None,
        lr_base: None,
        lr_base_b: None,
        lr_scheme: scaling,
        predicted_loss: None,
        loss_cross_check: None,
        regime: Some(regime),
        provenance: BTreeMap::new(),
        extrapolation_flags: Vec::new(),
    };
    rec.source("D", "input");
    rec.source(
        "B",
        match regime {
            Regime::Linear => "bopt_law linear branch D / s_floor",
            Regime::Power => "bopt_law power branch k D^p",
        },
    );
    rec.source("S", "identity S = D / B");
    if let Some(n) = n_params {
        rec.source("N", "input");
        rec.source("C", "identity C = 6 N D");
        if let Some(l) = law {
            rec.predicted_loss = Some(l.eval(n, d));
            rec.source("predicted_loss", "loss law at (N, D)");
        }
    }
    if bopt.is_extrapolation(d) {
        rec.flag(
            "B",
            format!("D={d:e} outside the fitted range [{:.3e}, {:.3e}]", bopt.d_min, bopt.d_max),
        );
    }
    match (anchor, n_params) {
        (Some(a), _) => anchored_lr(&mut rec, a, "baseline anchor", b, scaling, lr_law),
        (None, Some(n)) => {
            let preset = preset_lookup(presets, n)?;
            let a = LrAnchor {
                lr: preset.max_lr,
                batch: preset.gbs,
            };
            anchored_lr(&mut rec, a, &format!("preset {}", preset.label), b, scaling, lr_law);
        }
        (None, None) => rec.source("LR", "not recommended: neither a model size nor a baseline anchor given"),
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compression {
    pub target_loss: f64,
    pub n_small: f64,
    pub inference_ratio: f64,
}

/// The smallest model reaching the reference loss when trained on
/// `candidate_d` tokens, and the resulting inference-cost ratio.
pub fn compress_query(
    law: &ChinchillaLaw,
    reference: (f64, f64),
    candidate_d: f64,
) -> Result<Compression, AdviseError> {
    let (n0, d0) = reference;
    positive("N0", n0)?;
    positive("D0", d0)?;
    positive("candidate D", candidate_d)?;
    if candidate_d < d0 {
        return Err(AdviseError::CandidateBelowReference {
            candidate: candidate_d,
            reference: d0,
        });
    }
    let target = law.eval(n0, d0);
    let n_small = if candidate_d == d0 {
        n0
    } else {
        law.solve_n_for_loss(target, candidate_d)?
    };
    Ok(Compression {
        target_loss: target,
        n_small,
        inference_ratio: n0 / n_small,
    })
}

fn si(x: f64) -> String {
    let units = [(1e12, "T"), (1e9, "B"), (1e6, "M"), (1e3, "K")];
    for (scale, unit) in units {
        if x.abs() >= scale {
            return format!("{:.2}{unit}", x / scale);
        }
    }
    format!("{x:.2}")
}

/// Aligned text with the columns N, D, FLOPs, B, LR, then flags.
pub fn render_text(rec: &Recommendation) -> String {
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or_else(|| "-".to_string(), f);
    let mut out = format!(
        "{:>10} {:>10} {:>12} {:>10} {:>10} {:>8} {:>10}\n",
        "N", "D", "FLOPs", "B", "S", "LR", "loss"
    );
    out.push_str(&format!(
        "{:>10} {:>10} {:>12} {:>10} {:>10} {:>8} {:>10}\n",
        opt(rec.n, &si),
        si(rec.d),
        opt(rec.compute, &|c| format!("{c:.3e}")),
        si(rec.b),
        format!("{:.0}", rec.s),
        opt(rec.lr, &|l| format!("{l:.2e}")),
        opt(rec.predicted_loss, &|l| format!("{l:.4}")),
    ));
    if let Some(r) = rec.regime {
        out.push_str(&format!("regime: {}\n", match r {
            Regime::Linear => "linear",
            Regime::Power => "power",
        }));
    }
    for f in &rec.extrapolation_flags {
        out.push_str(&format!("warning [{}]: {}\n", f.field, f.message));
    }
    out
}
