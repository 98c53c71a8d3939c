use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid exponent {value} for {what}: exponents must be finite and > 0")]
    Exponent { what: &'static str, value: f64 },

    #[error("cubes below grid resolution: {}", .0.join(", "))]
    BelowResolution(Vec<String>),

    #[error("cube {0} is not a member of the collection")]
    NotInCollection(String),

    #[error("major subset violated: |F~| = {kept} < |F|/2 = {half}; increase C")]
    MajorityViolated { kept: f64, half: f64 },

    #[error("exceptional-set budget {budget} unattainable: |Omega| = {measure} at C = {c}")]
    BudgetUnattainable { budget: f64, measure: f64, c: f64 },

    #[error("N too small: measured contraction ratio {ratio} >= 1 (measured C = {constant})")]
    NTooSmall { ratio: f64, constant: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("sparse family has not been verified")]
    Unverified,

    #[error("sparse invariant violated: {0}")]
    SparseInvariant(String),

    #[error("nonpositive weight sample {value} at index {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("preflight failed: invariant `{0}` does not hold")]
    Preflight(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn check_exponent(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LabError::Exponent { what, value })
    }
}
