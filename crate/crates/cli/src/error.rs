use tmlp::data::DataError;
use tmlp::ensemble::EnsembleError;
use tmlp::pipeline::PipelineError;

use crate::bundle::BundleError;

/// Every failure the command line can report. [`CliError::code`] gives the
/// stable machine-readable prefix.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("input does not match the model schema: {0}")]
    SchemaMismatch(String),
    #[error("the table has no target column {0:?}")]
    LabelColumnMissing(String),
    #[error("the model was trained without a feature gate")]
    GateAbsent,
    #[error("feature {0:?} is not numerical")]
    NonNumericalFeature(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "CONFIG",
            CliError::Io(_) => "IO",
            CliError::Data(e) => data_code(e),
            CliError::Pipeline(e) => match e {
                PipelineError::Data(d) => data_code(d),
                PipelineError::Gbdt(_) => "GBDT",
                PipelineError::Tensorize(_) => "TENSORIZE",
                PipelineError::Model(_) => "MODEL",
                PipelineError::Ensemble(EnsembleError::GateAbsent) => "GATE_ABSENT",
                PipelineError::Ensemble(EnsembleError::FeatureCountMismatch { .. }) => "SCHEMA_MISMATCH",
                PipelineError::Ensemble(_) => "ENSEMBLE",
                PipelineError::Metric(_) => "METRIC",
                PipelineError::LabelColumnMissing => "LABEL_COLUMN_MISSING",
            },
            CliError::Bundle(BundleError::Io(_)) => "IO",
            CliError::Bundle(BundleError::CorruptModel(_)) => "CORRUPT_MODEL",
            CliError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            CliError::LabelColumnMissing(_) => "LABEL_COLUMN_MISSING",
            CliError::GateAbsent => "GATE_ABSENT",
            CliError::NonNumericalFeature(_) => "NON_NUMERICAL_FEATURE",
        }
    }

    /// `error[CODE]: message` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.code())
    }
}

fn data_code(e: &DataError) -> &'static str {
    match e {
        DataError::Io(_) => "IO",
        DataError::MissingHeader => "MISSING_HEADER",
        DataError::MissingColumn(_) => "SCHEMA_MISMATCH",
        DataError::UnparsableNumeric { .. } => "UNPARSABLE_NUMERIC",
        DataError::MissingKey(_) | DataError::UnknownTask(_) | DataError::OverlappingColumns(_) | DataError::TargetIsFeature(_) | DataError::NoFeatures => "BAD_SCHEMA",
        DataError::BadFractions(_) | DataError::BadSplit(_) => "BAD_SPLIT",
        DataError::MissingTargets => "LABEL_COLUMN_MISSING",
        _ => "DATA",
    }
}
