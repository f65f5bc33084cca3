use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::tape::{Graph, Var};

/// Default hidden layer widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`, applied as `x W + b`.
    pub weight: Array2<f64>,
    /// `1 x outputs`.
    pub bias: Array2<f64>,
}

/// Fully connected network with tanh between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

/// Graph handles for the parameters (or constants) of one network.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

/// Random matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let gaussian = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = gaussian.qr();
    let (q, r) = (qr.q(), qr.r());
    // Sign fix makes the distribution uniform over orthogonal matrices.
    let q = DMatrix::from_fn(tall, short, |i, j| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign * gain
    });
    if rows >= cols {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
    } else {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(j, i)])
    }
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes {sizes:?} need an input and an output of positive width"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array2::zeros((1, w[1])),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// Orthogonal init with gain `hidden_gain` for hidden layers and
    /// `output_gain` for the last layer; biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        let last = params.layers.len() - 1;
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let gain = if i == last { output_gain } else { hidden_gain };
            let (rows, cols) = layer.weight.dim();
            layer.weight = orthogonal(rows, cols, gain, rng);
        }
        Ok(params)
    }

    /// Builds from explicit layers, checking shape consistency.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidArgument("network needs a layer".into()));
        };
        let mut sizes = vec![first.weight.nrows()];
        for layer in &layers {
            let (rows, cols) = layer.weight.dim();
            if rows != *sizes.last().expect("nonempty") || layer.bias.dim() != (1, cols) {
                return Err(Error::InvalidArgument("inconsistent layer shapes".into()));
            }
            sizes.push(cols);
        }
        let params = Self { sizes, layers };
        if params.flatten().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Layer by layer: weight row-major, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weight.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); returns the unused tail.
    pub fn assign<'a>(&mut self, mut flat: &'a [f64]) -> Result<&'a [f64]> {
        if flat.len() < self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "flat parameters",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        for layer in &mut self.layers {
            for x in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *x = flat[0];
                flat = &flat[1..];
            }
        }
        Ok(flat)
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass, one row per input.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i != last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Registers every weight and bias as a differentiable parameter.
    pub fn register(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &MlpVars, x: Var) -> Result<Var> {
        self.check_input(g.value(x).ncols())?;
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = g.matmul(h, w);
            h = g.add_row(z, b);
            if i != last {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }
}
