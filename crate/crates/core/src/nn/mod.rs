//! Small differentiable function approximators.

pub mod checkpoint;
pub mod mlp;
pub mod policy;
pub mod tape;

pub use mlp::{Layer, MlpParams, MlpVars, DEFAULT_HIDDEN};
pub use policy::{
    kl_graph, log_prob_graph, Action, AgentActions, DistNodes, PolicyDist, PolicyHead,
    PolicyParams, PolicyVars, LOG_STD_MAX, LOG_STD_MIN,
};
pub use tape::{GradVector, Gradients, Graph, Var};

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Centralized critic output for one global state. The network must have a
/// single output.
pub fn value_forward(params: &MlpParams, global_state: &[f64]) -> Result<f64> {
    if params.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "critic output",
            expected: 1,
            got: params.output_dim(),
        });
    }
    let x = ArrayView2::from_shape((1, global_state.len()), global_state)
        .expect("row view of a slice");
    Ok(params.forward(x)?[[0, 0]])
}
