use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {index} = {value} lies outside the support [-1, 1]")]
    OutOfSupport { index: usize, value: f64 },

    #[error("moment order {order} exceeds the supported maximum {max}")]
    MomentOrder { order: usize, max: usize },

    #[error(
        "{points}-point moment-based rule refused: numerically unstable for large quadratures, \
         N ≈ 10 (maximum supported is {max})"
    )]
    UnstableOrder { points: usize, max: usize },

    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("non-finite value in {stage} at index {index}")]
    NonFinite { stage: &'static str, index: usize },

    #[error("inconsistent estimate {value} (rule unsuited to integrand)")]
    Inconsistent { value: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },
}
