use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual:?}")]
    Shape {
        context: String,
        expected: String,
        actual: Vec<usize>,
    },

    #[error("non-finite activation after layer `{layer}`")]
    NonFinite { layer: String },

    #[error("layer `{layer}` has no exact linearization (only conv, linear and piecewise-linear activations do)")]
    NotLinearizable { layer: String },

    #[error("cache kind does not match layer `{layer}`")]
    CacheMismatch { layer: String },

    #[error("optimizer state does not match parameters: {0}")]
    OptimizerState(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &str, expected: impl Into<String>, actual: &[usize]) -> NnError {
    NnError::Shape {
        context: context.to_string(),
        expected: expected.into(),
        actual: actual.to_vec(),
    }
}
