//! Executable checks of the structural properties of conditional positional
//! encodings: a brute-force convolution oracle, invariance and variance
//! probes, a coordinate-readout leakage probe, and a small training
//! comparison of fixed against learned PEG kernels.

mod comparison;
mod oracle;
mod probes;
mod report;

pub use comparison::{
    fixed_peg_comparison, fixed_peg_report, ordering_report, run_variants, shifted_ordering_comparison, train_variant,
    ComparisonSetup, Variant, VariantResult, FIXED_PEG_VARIANTS, ORDERING_VARIANTS,
};
pub use oracle::{conv_expansion_oracle, conv_expansion_oracle_tokens};
pub use probes::{
    conv_expansion_probe, coordinate_r2, leakage_features, permutation_probe, position_leakage_probe, translation_probe, Content, LeakageSetup,
    PermutationSubject, TranslationSubject, toroidal_gap_config,
};
pub use report::ProbeReport;

/// Every numeric tolerance used by the checks, in one place.
pub mod tol {
    /// Equality of 64-bit implementations against brute-force oracles.
    pub const ORACLE: f64 = 1e-12;
    /// Layer-level equivariance identities.
    pub const LAYER: f64 = 1e-6;
    /// Model-level invariances with 32-bit accumulation.
    pub const MODEL: f64 = 1e-5;
    /// Analytic vs. central-difference gradients (relative).
    pub const GRAD: f64 = 1e-4;
    /// Step of the central differences.
    pub const GRAD_EPS: f64 = 1e-5;
    /// Smallest deviation that counts as permutation variance.
    pub const VARIANCE: f64 = 1e-3;
    /// Minimum R²(zero) − R²(circular) of the leakage probe.
    pub const LEAKAGE_GAP: f64 = 0.2;
    /// Slack allowed for learned PEG against fixed PEG (absolute accuracy).
    pub const LEARNED_SLACK: f64 = 0.02;
    /// Ridge added to the normal equations of the readout fit.
    pub const RIDGE: f64 = 1e-6;
}
