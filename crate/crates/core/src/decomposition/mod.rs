//! Large-sample weights and bias terms of the pooled matched 2WFE.

mod bias;
mod weights;

pub use bias::{plim_bias, BiasDecomposition};
pub use weights::{plim_weights, PlimWeights};
