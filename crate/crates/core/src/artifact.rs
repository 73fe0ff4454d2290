//! The law artifact: the JSON document holding fitted (or published) laws,
//! fit diagnostics and provenance. Advisor queries and the CLI consume it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bslaw::{BoptLaw, SFloorSource, DEFAULT_S_FLOOR};
use crate::frontier::{ConsistencyResiduals, FrontierReport, PowerLaw};
use crate::lawfit::{ChinchillaLaw, Constraint, FitReport, KaplanLaw, LawFitError};
use crate::lrlaw::LrLaw;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("artifact field `params` does not match form {0:?}")]
    FormMismatch(LawForm),
    #[error(transparent)]
    Law(#[from] LawFitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawForm {
    Chinchilla,
    Kaplan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawParams {
    Chinchilla(ChinchillaLaw),
    Kaplan(KaplanLaw),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub r_squared: f64,
    pub delta: f64,
    pub constraint: Option<Constraint>,
    pub n_points: usize,
}

/// One model-size row of the training presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub label: String,
    pub n_params: f64,
    /// Global batch size in tokens.
    pub gbs: f64,
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
}

/// The five shipped presets, 125M to 2.6B parameters.
pub fn published_presets() -> Vec<Preset> {
    [
        ("125M", 1.25e8, 0.5e6, 6.0e-4, 715, 500_000),
        ("350M", 3.5e8, 0.5e6, 3.0e-4, 715, 500_000),
        ("760M", 7.6e8, 0.5e6, 2.5e-4, 715, 500_000),
        ("1.3B", 1.3e9, 1.0e6, 2.0e-4, 350, 300_000),
        ("2.6B", 2.6e9, 1.0e6, 1.6e-4, 350, 300_000),
    ]
    .into_iter()
    .map(|(label, n, gbs, lr, w, d)| Preset {
        label: label.into(),
        n_params: n,
        gbs,
        max_lr: lr,
        warmup_steps: w,
        decay_steps: d,
    })
    .collect()
}

/// A published allocation: exponents of `N_opt ∝ C^a`, `D_opt ∝ C^b`, and
/// the loss law when one was given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLaw {
    pub n_opt_exponent: f64,
    pub d_opt_exponent: f64,
    pub form: Option<LawForm>,
    pub params: Option<LawParams>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactProvenance {
    /// `published` or `fit`.
    pub source: String,
    pub runs: usize,
    pub seed: Option<u64>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawArtifact {
    pub form: LawForm,
    pub params: LawParams,
    pub fit: Option<FitSummary>,
    pub frontier: Option<FrontierReport>,
    pub bopt_law: Option<BoptLaw>,
    pub lr_law: Option<LrLaw>,
    pub presets: Vec<Preset>,
    pub reference_laws: BTreeMap<String, ReferenceLaw>,
    /// Where each value came from, keyed by field path.
    pub annotations: BTreeMap<String, String>,
    pub provenance: ArtifactProvenance,
    pub warnings: Vec<String>,
}

impl LawArtifact {
    pub fn fitted(
        fit: &FitReport,
        frontier: FrontierReport,
        bopt_law: Option<BoptLaw>,
        lr_law: Option<LrLaw>,
        provenance: ArtifactProvenance,
        warnings: Vec<String>,
    ) -> Self {
        LawArtifact {
            form: LawForm::Chinchilla,
            params: LawParams::Chinchilla(fit.law),
            fit: Some(FitSummary {
                r_squared: fit.r_squared,
                delta: fit.huber_delta,
                constraint: fit.constraint,
                n_points: fit.n_points,
            }),
            frontier: Some(frontier),
            bopt_law,
            lr_law,
            presets: published_presets(),
            reference_laws: BTreeMap::new(),
            annotations: BTreeMap::new(),
            provenance,
            warnings,
        }
    }

    /// The loss law when the artifact carries the Chinchilla form.
    pub fn chinchilla(&self) -> Option<&ChinchillaLaw> {
        match (&self.form, &self.params) {
            (LawForm::Chinchilla, LawParams::Chinchilla(l)) => Some(l),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ArtifactError> {
        match (&self.form, &self.params) {
            (LawForm::Chinchilla, LawParams::Chinchilla(l)) => l.validate()?,
            (LawForm::Kaplan, LawParams::Kaplan(l)) => l.validate()?,
            (form, _) => return Err(ArtifactError::FormMismatch(*form)),
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline; floats use shortest round-trip form.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifacts always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let a: LawArtifact = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    /// Every published constant: the loss law, the compute frontier, the
    /// data-budget batch law, the LR ceiling observed on the 350M sweep, the
    /// reference allocations of earlier laws and the presets.
    pub fn published() -> Self {
        // The frontier fits used batch sizes from 0.5M tokens up and compute
        // spanning roughly 1e18 to 4.7e21 FLOPs.
        let (c_lo, c_hi) = (1e18, 4.7e21);
        let pl = |k: f64, p: f64| PowerLaw { k, p, x_min: c_lo, x_max: c_hi };
        let b_opt = PowerLaw {
            x_min: (0.5e6f64 / 6.42e3).powf(1.0 / 0.102),
            ..pl(6.42e3, 0.102)
        };
        let (n_opt, d_opt, s_opt) = (pl(0.297, 0.464), pl(0.561, 0.536), pl(8.74e-5, 0.434));
        let mut nd: f64 = 0.0;
        let mut sb: f64 = 0.0;
        for i in 0..=8 {
            let c = 10f64.powf(18.0 + i as f64 * 0.5);
            nd = nd.max((6.0 * n_opt.eval(c) * d_opt.eval(c) / c - 1.0).abs());
            sb = sb.max((s_opt.eval(c) * b_opt.eval(c) / d_opt.eval(c) - 1.0).abs());
        }
        let frontier = FrontierReport {
            points: Vec::new(),
            l_opt: pl(23.00, -0.050),
            n_opt,
            d_opt,
            s_opt,
            b_opt,
            consistency_residuals: ConsistencyResiduals {
                nd,
                sb,
                d_opt_vs_free: None,
                b_opt_vs_free: None,
            },
        };
        let bopt_law = BoptLaw::new(3.24e3, 0.264, DEFAULT_S_FLOOR, SFloorSource::Default, 1e9, 1e11);
        let law = ChinchillaLaw::new(1.48, 314.35, 0.331, 460.51, 0.286);

        let reference = |a: f64, b: f64, form: Option<LawForm>, params: Option<LawParams>| ReferenceLaw {
            n_opt_exponent: a,
            d_opt_exponent: b,
            form,
            params,
        };
        let mut reference_laws = BTreeMap::new();
        reference_laws.insert(
            "gpt3".to_string(),
            reference(
                0.73,
                0.27,
                Some(LawForm::Kaplan),
                Some(LawParams::Kaplan(KaplanLaw {
                    nc: 8.8e13,
                    dc: 5.4e13,
                    alpha_n: 0.076,
                    alpha_d: 0.095,
                })),
            ),
        );
        reference_laws.insert(
            "chinchilla".to_string(),
            reference(
                0.49,
                0.51,
                Some(LawForm::Chinchilla),
                Some(LawParams::Chinchilla(ChinchillaLaw::new(1.69, 406.4, 0.34, 410.7, 0.28))),
            ),
        );
        reference_laws.insert("palm2".to_string(), reference(0.49, 0.51, None, None));
        reference_laws.insert("deepseek_llm".to_string(), reference(0.524, 0.476, None, None));
        reference_laws.insert("llama3".to_string(), reference(0.47, 0.53, None, None));
        reference_laws.insert(
            "this_law".to_string(),
            reference(0.464, 0.536, Some(LawForm::Chinchilla), Some(LawParams::Chinchilla(law))),
        );

        let annotations = [
            ("params", "published loss law L(N, D), fitted on 125M-2.6B models"),
            ("frontier.l_opt", "published loss-optimal frontier L_opt(C)"),
            ("frontier.n_opt", "published compute-optimal model size N_opt(C)"),
            ("frontier.d_opt", "published compute-optimal data D_opt(C)"),
            ("frontier.s_opt", "published compute-optimal steps S_opt(C)"),
            ("frontier.b_opt", "published compute-optimal batch B_opt(C); valid for B_opt > 0.5M"),
            ("frontier.x_range", "compute range of the published frontier fits, about 1e18 to 4.7e21"),
            ("bopt_law", "published data-budget batch law B_opt(D); s_floor is the toolkit default"),
            ("bopt_law.d_range", "token range of the published contour vertices, 1e9 to 1e11"),
            ("lr_law.lr_ceiling", "LR ceiling seen on the 350M sweep (x8 over the 3e-4 preset)"),
            ("lr_law.gamma", "published range 0.75-1; no point estimate"),
            ("presets", "published training presets for 125M-2.6B models"),
            ("reference_laws", "published allocation exponents of earlier scaling laws"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

        LawArtifact {
            form: LawForm::Chinchilla,
            params: LawParams::Chinchilla(law),
            fit: None,
            frontier: Some(frontier),
            bopt_law: Some(bopt_law),
            lr_law: Some(LrLaw {
                gamma: None,
                lr_ceiling: Some(2.4e-3),
                plateau_onset_b: None,
                base_lr: 3.0e-4,
                base_b: 0.5e6,
            }),
            presets: published_presets(),
            reference_laws,
            annotations,
            provenance: ArtifactProvenance {
                source: "published".into(),
                runs: 0,
                seed: None,
                tool_version: env!("CARGO_PKG_VERSION").into(),
            },
            warnings: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_round_trips() {
        let a = LawArtifact::published();
        let text = a.to_json();
        let back = LawArtifact::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json(), text);
    }

    /// Set `SCALELAW_BLESS=1` to rewrite the shipped file after changing
    /// [`LawArtifact::published`].
    #[test]
    fn shipped_file_matches_generated() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/published.json");
        let generated = LawArtifact::published().to_json();
        if std::env::var_os("SCALELAW_BLESS").is_some() {
            std::fs::write(path, &generated).unwrap();
        }
        assert_eq!(std::fs::read_to_string(path).unwrap(), generated);
    }

    #[test]
    fn published_frontier_is_nearly_consistent() {
        let f = LawArtifact::published().frontier.unwrap();
        // Printed coefficients are rounded to three digits.
        assert!(f.consistency_residuals.nd < 2e-3);
        assert!(f.consistency_residuals.sb < 2e-3);
        // (0.5M / 6.42e3)^(1/0.102), quoted as about 5e18 when rounded.
        assert!(f.b_opt.x_min > 3e18 && f.b_opt.x_min < 5e18);
    }

    #[test]
    fn form_mismatch_is_rejected() {
        let mut a = LawArtifact::published();
        a.form = LawForm::Kaplan;
        assert!(matches!(a.validate(), Err(ArtifactError::FormMismatch(LawForm::Kaplan))));
        let text = a.to_json();
        assert!(LawArtifact::from_json(&text).is_err());
    }

    #[test]
    fn presets_are_the_five_rows() {
        let p = published_presets();
        assert_eq!(p.len(), 5);
        assert_eq!((p[0].gbs, p[0].max_lr, p[0].warmup_steps, p[0].decay_steps), (0.5e6, 6.0e-4, 715, 500_000));
        assert_eq!((p[4].gbs, p[4].max_lr, p[4].warmup_steps, p[4].decay_steps), (1e6, 1.6e-4, 350, 300_000));
    }
}
