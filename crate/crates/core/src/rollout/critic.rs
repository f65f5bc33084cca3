use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{Graph, MlpParams};
use crate::seeding::Rng;

/// State-value estimates for a batch of global states.
pub trait ValueFn: Sync {
    fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>>;
}

impl ValueFn for MlpParams {
    fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "critic output",
                expected: 1,
                got: self.output_dim(),
            });
        }
        Ok(self.forward(states)?.column(0).to_vec())
    }
}

/// `V = 0` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCritic;

impl ValueFn for ZeroCritic {
    fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(vec![0.0; states.nrows()])
    }
}

/// Table lookup for one-hot global states, e.g. exact values from the
/// tabular oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactCritic {
    pub table: Vec<f64>,
}

impl ValueFn for ExactCritic {
    fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if states.ncols() != self.table.len() {
            return Err(Error::DimensionMismatch {
                context: "one-hot state width",
                expected: self.table.len(),
                got: states.ncols(),
            });
        }
        states
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .position(|x| *x == 1.0)
                    .map(|s| self.table[s])
                    .ok_or_else(|| Error::InvalidArgument("state is not one-hot".into()))
            })
            .collect()
    }
}

/// Mean squared error of `critic` against `targets`.
pub fn critic_loss(critic: &MlpParams, states: ArrayView2<'_, f64>, targets: &[f64]) -> Result<f64> {
    let v = critic.values(states)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    Ok(v.iter().zip(targets).map(|(v, t)| (v - t).powi(2)).sum::<f64>() / v.len() as f64)
}

/// Mini-batch SGD on the mean squared error to `targets`. Each epoch visits
/// every sample once in an order drawn from `rng`. Returns the full-batch
/// loss after training. Fails with [`Error::CriticDivergence`] if the loss
/// after an epoch exceeds ten times the initial loss.
pub fn critic_update(
    critic: &mut MlpParams,
    states: ArrayView2<'_, f64>,
    targets: &[f64],
    epochs: usize,
    minibatch: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if targets.len() != states.nrows() {
        return Err(Error::DimensionMismatch {
            context: "critic targets",
            expected: states.nrows(),
            got: targets.len(),
        });
    }
    if minibatch == 0 {
        return Err(Error::InvalidArgument("minibatch size must be positive".into()));
    }
    let initial = critic_loss(critic, states, targets)?;
    let mut loss = initial;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(minibatch) {
            let x = states.select(Axis(0), chunk);
            let y = Array2::from_shape_fn((chunk.len(), 1), |(i, _)| targets[chunk[i]]);
            let mut g = Graph::new();
            let vars = critic.register(&mut g);
            let xv = g.constant(x);
            let out = critic.forward_graph(&mut g, &vars, xv)?;
            let yv = g.constant(y);
            let err = g.sub(out, yv);
            let sq = g.square(err);
            let mse = g.mean(sq);
            let grad = g.backward(mse).flat();
            let mut flat = critic.flatten();
            flat.iter_mut().zip(grad.as_slice()).for_each(|(p, g)| *p -= lr * g);
            critic.assign(&flat)?;
        }
        loss = critic_loss(critic, states, targets)?;
        if !loss.is_finite() || (loss > 10.0 * initial && loss > 1e-12) {
            return Err(Error::CriticDivergence { loss, initial });
        }
    }
    Ok(loss)
}
