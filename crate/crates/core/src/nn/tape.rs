//! A small reverse-mode differentiation tape over 2-D arrays.
//!
//! Only the operations the policy and critic losses need are provided.
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for back-propagation.

use ndarray::{Array2, Axis, Zip};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a (n x m) + row (1 x m)`
    AddRow(Var, Var),
    /// `a (n x m) * row (1 x m)`
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    RowSum(Var),
    RepeatRows(Var),
    Sum(Var),
    WeightedSum(Var, Array2<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Flat gradient aligned with the parameter registration order of a graph
/// (each parameter flattened row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A differentiable leaf. Parameters are flattened into [`GradVector`]
    /// in registration order.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        self.push(value, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a) + shift;
        self.push(value, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmax(a))
    }

    /// Selects column `indices[i]` from row `i`, giving an `n x 1` column.
    pub fn pick(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), indices.len(), "one index per row");
        let value = Array2::from_shape_fn((indices.len(), 1), |(i, _)| src[[i, indices[i]]]);
        self.push(value, Op::Pick(a, indices))
    }

    /// Sum over columns, giving an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSum(a))
    }

    /// Stacks a `1 x m` row `n` times.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Var {
        let src = self.value(row);
        assert_eq!(src.nrows(), 1, "repeat_rows expects a single row");
        let value = src
            .broadcast((n, src.ncols()))
            .expect("row broadcast")
            .to_owned();
        self.push(value, Op::RepeatRows(row))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let total = self.sum(a);
        self.scale(total, 1.0 / n)
    }

    /// `sum_ij a_ij w_ij` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), weights.dim());
        let value = Array2::from_elem((1, 1), (self.value(a) * &weights).sum());
        self.push(value, Op::WeightedSum(a, weights))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                // Leaves keep their gradient for lookup.
                Op::Leaf => grads[idx] = Some(upstream),
                Op::MatMul(a, b) => {
                    let da = upstream.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&upstream);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, upstream);
                }
                Op::MulRow(a, row) => {
                    let drow = (&upstream * self.value(*a))
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    let da = &upstream * self.value(*row);
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, da);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, upstream.clone());
                    accumulate(&mut grads, *a, upstream);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&upstream);
                    accumulate(&mut grads, *a, upstream);
                }
                Op::Mul(a, b) => {
                    let da = &upstream * self.value(*b);
                    let db = &upstream * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = upstream.clone();
                    let mut db = upstream;
                    Zip::from(&mut da)
                        .and(&mut db)
                        .and(va)
                        .and(vb)
                        .for_each(|ga, gb, &x, &y| {
                            if x <= y {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        });
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, upstream * *factor),
                Op::Offset(a) => accumulate(&mut grads, *a, upstream),
                Op::Tanh(a) => {
                    let da = &upstream * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, &upstream * &node.value),
                Op::Square(a) => {
                    let da = &upstream * &self.value(*a).mapv(|x| 2.0 * x);
                    accumulate(&mut grads, *a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut da = upstream;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmax(a) => {
                    // dx = dy - softmax(x) * sum(dy)
                    let totals = upstream.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let softmax = node.value.mapv(f64::exp);
                    let da = &upstream - &(softmax * &totals);
                    accumulate(&mut grads, *a, da);
                }
                Op::Pick(a, indices) => {
                    let mut da = Array2::zeros(self.value(*a).dim());
                    for (i, &j) in indices.iter().enumerate() {
                        da[[i, j]] = upstream[[i, 0]];
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RowSum(a) => {
                    let dim = self.value(*a).dim();
                    let da = upstream.broadcast(dim).expect("column broadcast").to_owned();
                    accumulate(&mut grads, *a, da);
                }
                Op::RepeatRows(row) => {
                    let drow = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, drow);
                }
                Op::Sum(a) => {
                    let da = Array2::from_elem(self.value(*a).dim(), upstream[[0, 0]]);
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightedSum(a, weights) => {
                    accumulate(&mut grads, *a, weights * upstream[[0, 0]]);
                }
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Gradients of a scalar with respect to every leaf reached by the sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<Var>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for a leaf; zeros if the leaf does not influence the root.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }

    /// All parameter gradients, flattened in registration order.
    pub fn flat(&self) -> GradVector {
        let mut out = Vec::new();
        for &p in &self.params {
            match self.grads.get(p.0).and_then(|g| g.as_ref()) {
                Some(g) => out.extend(g.iter().copied()),
                None => out.extend(std::iter::repeat_n(0.0, self.shapes[p.0].0 * self.shapes[p.0].1)),
            }
        }
        GradVector(out)
    }
}
