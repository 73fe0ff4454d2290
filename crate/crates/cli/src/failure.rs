//! Command failures and their exit codes: 1 for anything the caller can fix
//! (usage, I/O, malformed or insufficient input), 2 for numerical failures.

use std::fmt;

use scalelaw::advisor::AdviseError;
use scalelaw::artifact::ArtifactError;
use scalelaw::bslaw::BsLawError;
use scalelaw::frontier::FrontierError;
use scalelaw::lawfit::LawFitError;
use scalelaw::lrlaw::LrLawError;
use scalelaw::noisescale::NoiseError;
use scalelaw::pipeline::PipelineError;
use scalelaw::runlog::RunLogError;
use scalelaw::synth::SynthError;
use serde_json::Value;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    /// Best partial result of a failed numerical step, when there is one.
    pub partial: Option<Value>,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
            partial: None,
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERICAL,
            message: message.into(),
            partial: None,
        }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RunLogError> for Failure {
    fn from(e: RunLogError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<LawFitError> for Failure {
    fn from(e: LawFitError) -> Self {
        match e {
            LawFitError::FitFailure { best } => Failure {
                code: EXIT_NUMERICAL,
                message: "the loss-law fit did not converge from any start".into(),
                partial: serde_json::to_value(&*best).ok(),
            },
            LawFitError::UndefinedVariance | LawFitError::Infeasible { .. } => Failure::numerical(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<FrontierError> for Failure {
    fn from(e: FrontierError) -> Self {
        match e {
            FrontierError::Regression(_) => Failure::numerical(e.to_string()),
            FrontierError::RunLog(inner) => inner.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<BsLawError> for Failure {
    fn from(e: BsLawError) -> Self {
        match e {
            BsLawError::NoMinimum { .. } | BsLawError::NoPowerRegime => Failure::numerical(e.to_string()),
            BsLawError::Frontier(inner) => inner.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<LrLawError> for Failure {
    fn from(e: LrLawError) -> Self {
        match e {
            LrLawError::GammaUndefined { .. } => Failure::numerical(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<NoiseError> for Failure {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Infeasible { .. } => Failure::numerical(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Frontier(inner) => Failure::from(inner).context("frontier"),
            PipelineError::LawFit(inner) => Failure::from(inner).context("loss-law fit"),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Infeasible { .. } => Failure::numerical(e.to_string()),
            SynthError::Law(inner) => inner.into(),
            SynthError::Noise(inner) => inner.into(),
            SynthError::RunLog(inner) => inner.into(),
            SynthError::Config(_) => Failure::validation(e.to_string()),
        }
    }
}

impl From<AdviseError> for Failure {
    fn from(e: AdviseError) -> Self {
        match e {
            AdviseError::Law(inner) => inner.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<ArtifactError> for Failure {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Law(inner) => inner.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}
