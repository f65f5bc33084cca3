//! Policy heads: categorical over logits and diagonal Gaussian with a
//! state-independent log standard deviation.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::mlp::{MlpParams, MlpVars};
use crate::nn::tape::{Graph, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One agent's actions for a whole batch.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentActions {
    Discrete(Vec<usize>),
    /// One row per sample.
    Continuous(Array2<f64>),
}

impl AgentActions {
    pub fn len(&self) -> usize {
        match self {
            AgentActions::Discrete(a) => a.len(),
            AgentActions::Continuous(a) => a.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Action {
        match self {
            AgentActions::Discrete(a) => Action::Discrete(a[i]),
            AgentActions::Continuous(a) => Action::Continuous(a.row(i).to_vec()),
        }
    }

    /// Rows selected by `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> AgentActions {
        match self {
            AgentActions::Discrete(a) => AgentActions::Discrete(indices.iter().map(|&i| a[i]).collect()),
            AgentActions::Continuous(a) => AgentActions::Continuous(a.select(ndarray::Axis(0), indices)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    Categorical { n_actions: usize },
    Gaussian { dim: usize, log_std: Array1<f64> },
}

/// Network body plus head. The body's output width equals the number of
/// actions (categorical) or the action dimension (Gaussian mean).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub body: MlpParams,
    pub head: PolicyHead,
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    body: MlpVars,
    log_std: Option<Var>,
}

/// Distribution parameters for a batch of observations, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub enum DistNodes {
    /// `n x k` log-probabilities.
    Categorical { log_probs: Var },
    /// `n x d` means and a `1 x d` clamped log standard deviation.
    Gaussian { mean: Var, log_std: Var },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyDist {
    Categorical { logits: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl PolicyDist {
    pub fn gaussian(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        PolicyDist::Gaussian {
            mean,
            log_std: log_std
                .into_iter()
                .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect(),
        }
    }

    /// Categorical probabilities (panics for Gaussian).
    pub fn probs(&self) -> Vec<f64> {
        match self {
            PolicyDist::Categorical { logits } => log_softmax(logits).into_iter().map(f64::exp).collect(),
            PolicyDist::Gaussian { .. } => panic!("probs() on a Gaussian distribution"),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (PolicyDist::Categorical { logits }, Action::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(Error::InvalidAction(format!(
                        "index {a} for {} actions",
                        logits.len()
                    )));
                }
                Ok(log_softmax(logits)[*a])
            }
            (PolicyDist::Gaussian { mean, log_std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        context: "continuous action",
                        expected: mean.len(),
                        got: x.len(),
                    });
                }
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(x)
                    .map(|((m, l), x)| {
                        let z = (x - m) * (-l).exp();
                        -0.5 * z * z - l - HALF_LN_2PI
                    })
                    .sum())
            }
            _ => Err(Error::InvalidAction(
                "action kind does not match distribution family".into(),
            )),
        }
    }

    /// `KL(self || other)` in closed form.
    pub fn kl(&self, other: &PolicyDist) -> Result<f64> {
        match (self, other) {
            (PolicyDist::Categorical { logits: p }, PolicyDist::Categorical { logits: q })
                if p.len() == q.len() =>
            {
                let (lp, lq) = (log_softmax(p), log_softmax(q));
                Ok(lp
                    .iter()
                    .zip(&lq)
                    .map(|(a, b)| a.exp() * (a - b))
                    .sum::<f64>()
                    .max(0.0))
            }
            (
                PolicyDist::Gaussian { mean: mp, log_std: lp },
                PolicyDist::Gaussian { mean: mq, log_std: lq },
            ) if mp.len() == mq.len() => Ok(mp
                .iter()
                .zip(mq)
                .zip(lp.iter().zip(lq))
                .map(|((mp, mq), (lp, lq))| {
                    let var_ratio = (2.0 * (lp - lq)).exp();
                    let d = mp - mq;
                    lq - lp + 0.5 * (var_ratio + d * d * (-2.0 * lq).exp()) - 0.5
                })
                .sum::<f64>()
                .max(0.0)),
            _ => Err(Error::InvalidArgument(
                "KL between different families or dimensions".into(),
            )),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            PolicyDist::Categorical { logits } => -log_softmax(logits)
                .iter()
                .map(|l| if l.is_finite() { l.exp() * l } else { 0.0 })
                .sum::<f64>(),
            PolicyDist::Gaussian { log_std, .. } => {
                log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            PolicyDist::Categorical { .. } => {
                let probs = self.probs();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                // Round-off: fall back to the last action with mass.
                let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
                Action::Discrete(last)
            }
            PolicyDist::Gaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, l)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + l.exp() * z
                    })
                    .collect(),
            ),
        }
    }
}

impl PolicyParams {
    pub fn categorical(body: MlpParams) -> Self {
        let n_actions = body.output_dim();
        Self {
            body,
            head: PolicyHead::Categorical { n_actions },
        }
    }

    pub fn gaussian(body: MlpParams, initial_log_std: f64) -> Self {
        let dim = body.output_dim();
        Self {
            body,
            head: PolicyHead::Gaussian {
                dim,
                log_std: Array1::from_elem(dim, initial_log_std),
            },
        }
    }

    pub fn n_params(&self) -> usize {
        self.body.n_params()
            + match &self.head {
                PolicyHead::Categorical { .. } => 0,
                PolicyHead::Gaussian { dim, .. } => *dim,
            }
    }

    /// Body parameters, then the log standard deviation for Gaussian heads.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = self.body.flatten();
        if let PolicyHead::Gaussian { log_std, .. } = &self.head {
            flat.extend(log_std.iter().copied());
        }
        flat
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "policy parameters",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let rest = self.body.assign(flat)?;
        if let PolicyHead::Gaussian { log_std, .. } = &mut self.head {
            log_std.iter_mut().zip(rest).for_each(|(l, v)| *l = *v);
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.body.input_dim()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.head, PolicyHead::Categorical { .. })
    }

    /// Distribution for a single observation.
    pub fn forward(&self, observation: &[f64]) -> Result<PolicyDist> {
        let x = ArrayView2::from_shape((1, observation.len()), observation)
            .expect("row view of a slice");
        Ok(self.forward_batch(x)?.pop().expect("one row"))
    }

    pub fn forward_batch(&self, obs: ArrayView2<'_, f64>) -> Result<Vec<PolicyDist>> {
        let out = self.body.forward(obs)?;
        Ok(out
            .rows()
            .into_iter()
            .map(|row| match &self.head {
                PolicyHead::Categorical { .. } => PolicyDist::Categorical {
                    logits: row.to_vec(),
                },
                PolicyHead::Gaussian { log_std, .. } => {
                    PolicyDist::gaussian(row.to_vec(), log_std.to_vec())
                }
            })
            .collect())
    }

    /// Log-probabilities of a batch of actions.
    pub fn log_probs(&self, obs: ArrayView2<'_, f64>, actions: &AgentActions) -> Result<Vec<f64>> {
        if actions.len() != obs.nrows() {
            return Err(Error::DimensionMismatch {
                context: "actions per observation",
                expected: obs.nrows(),
                got: actions.len(),
            });
        }
        self.forward_batch(obs)?
            .iter()
            .enumerate()
            .map(|(i, d)| d.log_prob(&actions.get(i)))
            .collect()
    }

    /// Registers all parameters on the graph.
    pub fn register(&self, g: &mut Graph) -> PolicyVars {
        let body = self.body.register(g);
        let log_std = match &self.head {
            PolicyHead::Categorical { .. } => None,
            PolicyHead::Gaussian { log_std, .. } => {
                Some(g.param(log_std.clone().insert_axis(ndarray::Axis(0))))
            }
        };
        PolicyVars { body, log_std }
    }

    pub fn dist_graph(&self, g: &mut Graph, vars: &PolicyVars, obs: Var) -> Result<DistNodes> {
        let out = self.body.forward_graph(g, &vars.body, obs)?;
        Ok(match vars.log_std {
            None => DistNodes::Categorical {
                log_probs: g.log_softmax(out),
            },
            Some(ls) => DistNodes::Gaussian {
                mean: out,
                log_std: g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX),
            },
        })
    }

    /// Distribution parameters for a batch as constant nodes.
    pub fn dist_constants(&self, g: &mut Graph, obs: ArrayView2<'_, f64>) -> Result<DistNodes> {
        let out = self.body.forward(obs)?;
        Ok(match &self.head {
            PolicyHead::Categorical { .. } => {
                let mut lp = out;
                for mut row in lp.rows_mut() {
                    let v = log_softmax(row.as_slice().expect("contiguous row"));
                    row.iter_mut().zip(v).for_each(|(x, y)| *x = y);
                }
                DistNodes::Categorical {
                    log_probs: g.constant(lp),
                }
            }
            PolicyHead::Gaussian { log_std, .. } => DistNodes::Gaussian {
                mean: g.constant(out),
                log_std: g.constant(
                    log_std
                        .mapv(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
                        .insert_axis(ndarray::Axis(0)),
                ),
            },
        })
    }
}

/// `n x 1` log-probabilities of `actions` under `dist`.
pub fn log_prob_graph(g: &mut Graph, dist: DistNodes, actions: &AgentActions) -> Result<Var> {
    match (dist, actions) {
        (DistNodes::Categorical { log_probs }, AgentActions::Discrete(a)) => {
            let k = g.value(log_probs).ncols();
            if let Some(bad) = a.iter().find(|&&x| x >= k) {
                return Err(Error::InvalidAction(format!("index {bad} for {k} actions")));
            }
            Ok(g.pick(log_probs, a.clone()))
        }
        (DistNodes::Gaussian { mean, log_std }, AgentActions::Continuous(x)) => {
            let n = x.nrows();
            let d = x.ncols() as f64;
            let x = g.constant(x.clone());
            let diff = g.sub(x, mean);
            let neg_ls = g.scale(log_std, -1.0);
            let inv_std = g.exp(neg_ls);
            let z = g.mul_row(diff, inv_std);
            let z2 = g.square(z);
            let quad = g.row_sum(z2);
            let quad = g.scale(quad, -0.5);
            let ls_total = g.row_sum(log_std);
            let ls_col = g.repeat_rows(ls_total, n);
            let lp = g.sub(quad, ls_col);
            Ok(g.offset(lp, -d * HALF_LN_2PI))
        }
        _ => Err(Error::InvalidAction(
            "action kind does not match distribution family".into(),
        )),
    }
}

/// `n x 1` per-row `KL(p || q)`.
pub fn kl_graph(g: &mut Graph, p: DistNodes, q: DistNodes) -> Result<Var> {
    match (p, q) {
        (DistNodes::Categorical { log_probs: lp }, DistNodes::Categorical { log_probs: lq }) => {
            let probs = g.exp(lp);
            let gap = g.sub(lp, lq);
            let terms = g.mul(probs, gap);
            Ok(g.row_sum(terms))
        }
        (
            DistNodes::Gaussian { mean: mp, log_std: lp },
            DistNodes::Gaussian { mean: mq, log_std: lq },
        ) => {
            let n = g.value(mp).nrows();
            let d = g.value(mp).ncols() as f64;
            // sum_d (lq - lp) + 0.5 sum_d exp(2(lp - lq))
            let ls_gap = g.sub(lq, lp);
            let ls_term = g.row_sum(ls_gap);
            let doubled = g.scale(ls_gap, -2.0);
            let var_ratio = g.exp(doubled);
            let var_term = g.row_sum(var_ratio);
            let var_term = g.scale(var_term, 0.5);
            let per_row = g.add(ls_term, var_term);
            let per_row = g.repeat_rows(per_row, n);
            // 0.5 sum_d (mp - mq)^2 / sq^2
            let diff = g.sub(mp, mq);
            let diff2 = g.square(diff);
            let neg2lq = g.scale(lq, -2.0);
            let inv_var = g.exp(neg2lq);
            let scaled = g.mul_row(diff2, inv_var);
            let mean_term = g.row_sum(scaled);
            let mean_term = g.scale(mean_term, 0.5);
            let total = g.add(per_row, mean_term);
            Ok(g.offset(total, -0.5 * d))
        }
        _ => Err(Error::InvalidArgument(
            "KL between different families".into(),
        )),
    }
}

/// Differential entropy of a standard normal per dimension, for reference.
pub fn standard_normal_entropy() -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream_rng, Stream};
    use ndarray::array;

    #[test]
    fn uniform_categorical_log_prob() {
        let d = PolicyDist::Categorical { logits: vec![0.0; 4] };
        assert!((d.log_prob(&Action::Discrete(2)).unwrap() + 4f64.ln()).abs() < 1e-15);
        assert!(d.log_prob(&Action::Discrete(4)).is_err());
        assert!(d.log_prob(&Action::Continuous(vec![0.0])).is_err());
    }

    #[test]
    fn standard_normal_at_mode() {
        let d = PolicyDist::gaussian(vec![0.0, 0.0], vec![0.0, 0.0]);
        let lp = d.log_prob(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-14);
        assert!((d.entropy() - 2.0 * standard_normal_entropy()).abs() < 1e-14);
    }

    #[test]
    fn kl_known_value_and_zero() {
        let p = PolicyDist::Categorical { logits: vec![0.0, 0.0] };
        let q = PolicyDist::Categorical {
            logits: vec![0.25f64.ln(), 0.75f64.ln()],
        };
        assert!((p.kl(&q).unwrap() - 0.143_841_036_225_890_42).abs() < 1e-12);
        assert_eq!(p.kl(&p).unwrap(), 0.0);
        let g = PolicyDist::gaussian(vec![0.3], vec![-0.2]);
        assert_eq!(g.kl(&g).unwrap(), 0.0);
        assert!(p.kl(&g).is_err());
    }

    #[test]
    fn log_std_is_clamped() {
        let d = PolicyDist::gaussian(vec![1.0], vec![-20.0]);
        let mut rng = stream_rng(0, Stream::Episode, 0);
        for _ in 0..1000 {
            let Action::Continuous(x) = d.sample(&mut rng) else { unreachable!() };
            assert!((x[0] - 1.0).abs() <= 5.0 * (-5f64).exp() * 6.0);
        }
        let PolicyDist::Gaussian { log_std, .. } = d else { unreachable!() };
        assert_eq!(log_std, vec![LOG_STD_MIN]);
    }

    #[test]
    fn point_mass_sampling() {
        let d = PolicyDist::Categorical {
            logits: vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
        };
        let mut rng = stream_rng(1, Stream::Episode, 0);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), Action::Discrete(2));
        }
    }

    #[test]
    fn zero_body_gives_uniform_and_bias_log_std() {
        let body = MlpParams::zeros(&[3, 4, 2]).unwrap();
        let cat = PolicyParams::categorical(body.clone());
        let d = cat.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d, PolicyDist::Categorical { logits: vec![0.0, 0.0] });
        let gauss = PolicyParams::gaussian(body, -0.7);
        let PolicyDist::Gaussian { mean, log_std } = gauss.forward(&[1.0, 2.0, 3.0]).unwrap() else {
            unreachable!()
        };
        assert_eq!(mean, vec![0.0, 0.0]);
        assert_eq!(log_std, vec![-0.7, -0.7]);
    }

    #[test]
    fn graph_values_match_direct() {
        let mut rng = stream_rng(2, Stream::Init, 0);
        let obs = array![[0.2, -0.1], [1.0, 0.5], [-0.3, 0.9]];
        for discrete in [true, false] {
            let body = MlpParams::init(&[2, 6, if discrete { 3 } else { 2 }], 1.0, 1.0, &mut rng).unwrap();
            let (policy, old, actions) = if discrete {
                let p = PolicyParams::categorical(body.clone());
                let mut o = p.clone();
                o.body.layers_mut()[1].bias[[0, 1]] += 0.3;
                (p, o, AgentActions::Discrete(vec![0, 2, 1]))
            } else {
                let p = PolicyParams::gaussian(body, -0.3);
                let mut o = p.clone();
                o.body.layers_mut()[1].bias[[0, 0]] -= 0.4;
                if let PolicyHead::Gaussian { log_std, .. } = &mut o.head {
                    log_std[1] = 0.2;
                }
                (p, o, AgentActions::Continuous(array![[0.1, 0.2], [-1.0, 0.0], [0.5, 0.5]]))
            };
            let mut g = Graph::new();
            let vars = policy.register(&mut g);
            let x = g.constant(obs.clone());
            let dist = policy.dist_graph(&mut g, &vars, x).unwrap();
            let lp = log_prob_graph(&mut g, dist, &actions).unwrap();
            let old_dist = old.dist_constants(&mut g, obs.view()).unwrap();
            let kl = kl_graph(&mut g, dist, old_dist).unwrap();
            let direct_lp = policy.log_probs(obs.view(), &actions).unwrap();
            let new_d = policy.forward_batch(obs.view()).unwrap();
            let old_d = old.forward_batch(obs.view()).unwrap();
            for i in 0..3 {
                assert!((g.value(lp)[[i, 0]] - direct_lp[i]).abs() < 1e-12);
                let direct_kl = new_d[i].kl(&old_d[i]).unwrap();
                assert!((g.value(kl)[[i, 0]] - direct_kl).abs() < 1e-12);
            }
        }
    }
}
