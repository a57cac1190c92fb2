// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::dump::DumpError;

/// Everything a CLI run can fail with. [`ToolError::code`] gives the stable
/// machine-readable code printed on failure.
#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("unknown subcommand: {0}")]
    UnknownSubcommand(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Analysis(#[from] rivalry_core::Error),
}

impl ToolError {
    pub fn code(&self) -> &'static str {
        use rivalry_core::Error as E;
        match self {
            ToolError::UnknownSubcommand(_) => "unknown_subcommand",
            ToolError::Usage(_) => "usage",
            ToolError::Config(_) => "invalid_config",
            ToolError::Dump(e) => e.code(),
            ToolError::Analysis(e) => match e {
                E::DimensionMismatch { .. } => "dimension_mismatch",
                E::NonFinite { .. } => "non_finite",
                E::ZeroVariance => "zero_variance",
                E::Empty(_) => "empty_input",
                E::InvalidArgument(_) => "invalid_argument",
                E::SingleClass => "single_class",
                E::NoActiveFeatures { .. } => "no_active_features",
                E::NoValidPairs { .. } => "no_valid_pairs",
                E::ZeroAxis { .. } => "zero_axis",
                E::FeatureOutOfRange { .. } => "feature_out_of_range",
                E::MissingBaseline { .. } => "missing_baseline",
                E::MissingRandom { .. } => "missing_random",
                E::DuplicateRecord { .. } => "duplicate_record",
                E::InfeasibleCorrelation { .. } => "infeasible_correlation",
                E::UnmatchedPair(_) => "unmatched_pair",
                E::InconsistentSamples { .. } => "inconsistent_samples",
            },
        }
    }

    /// Process exit status: 2 for usage and configuration problems, 1 for
    /// everything else.
    pub fn exit_status(&self) -> i32 {
        match self {
            ToolError::UnknownSubcommand(_) | ToolError::Usage(_) | ToolError::Config(_) => 2,
            _ => 1,
        }
    }
}
