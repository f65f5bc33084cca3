use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{kl_graph, log_prob_graph, AgentActions, DistNodes, Graph, PolicyParams, PolicyVars, Var};
use crate::rollout::RolloutBatch;
use crate::trainer::GRAD_CLIP;

/// Largest tolerated `|log pi_theta - log pi_theta_k|` on any sample.
pub const LOG_RATIO_LIMIT: f64 = 20.0;

/// One agent's view of a batch.
#[derive(Debug, Clone, Copy)]
pub struct AgentSamples<'a> {
    pub observations: ArrayView2<'a, f64>,
    pub actions: &'a AgentActions,
    pub old_log_probs: &'a [f64],
    pub m_weight: &'a [f64],
    /// Sample weights summing to one; `None` means the plain mean.
    pub weights: Option<&'a [f64]>,
}

impl RolloutBatch {
    pub fn agent_samples(&self, agent: usize) -> AgentSamples<'_> {
        AgentSamples {
            observations: self.observations[agent].view(),
            actions: &self.actions[agent],
            old_log_probs: &self.old_log_probs[agent],
            m_weight: &self.m_weight,
            weights: None,
        }
    }
}

impl AgentSamples<'_> {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.observations.nrows();
        for (context, got) in [
            ("actions", self.actions.len()),
            ("old log-probabilities", self.old_log_probs.len()),
            ("importance weights", self.m_weight.len()),
            ("sample weights", self.weights.map_or(n, <[f64]>::len)),
        ] {
            if got != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    got,
                });
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    fn weight_column(&self) -> Array2<f64> {
        let n = self.len();
        match self.weights {
            Some(w) => Array2::from_shape_fn((n, 1), |(i, _)| w[i]),
            None => Array2::from_elem((n, 1), 1.0 / n as f64),
        }
    }
}

/// Graph nodes of a per-agent loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub loss: Var,
    /// Weighted mean of `ratio * M`.
    pub surrogate: Var,
    /// Weighted mean of `KL(new || old)` per sample (HAMDPO only).
    pub mean_kl: Option<Var>,
    /// `n x 1` probability ratios.
    pub ratio: Var,
}

fn ratio_node(
    g: &mut Graph,
    agent: usize,
    policy: &PolicyParams,
    vars: &PolicyVars,
    samples: &AgentSamples<'_>,
) -> Result<(Var, DistNodes)> {
    samples.check()?;
    let obs = g.constant(samples.observations.to_owned());
    let dist = policy.dist_graph(g, vars, obs)?;
    let log_prob = log_prob_graph(g, dist, samples.actions)?;
    let old = Array2::from_shape_fn((samples.len(), 1), |(i, _)| samples.old_log_probs[i]);
    let gap = g
        .value(log_prob)
        .iter()
        .zip(&old)
        .map(|(a, b)| a - b)
        .fold(0.0_f64, |m, x| if x.abs() > m.abs() || x.is_nan() { x } else { m });
    if !(gap.abs() <= LOG_RATIO_LIMIT) {
        return Err(Error::RatioOverflow { agent, gap });
    }
    let old = g.constant(old);
    let log_ratio = g.sub(log_prob, old);
    Ok((g.exp(log_ratio), dist))
}

/// `-mean(ratio * M) + inv_stepsize * mean KL(pi_theta || pi_theta_k)`,
/// with means weighted by `samples.weights`. `inv_stepsize = 0` gives the
/// plain importance-weighted policy gradient objective.
pub fn hamdpo_agent_loss(
    g: &mut Graph,
    agent: usize,
    policy: &PolicyParams,
    vars: &PolicyVars,
    snapshot: &PolicyParams,
    samples: &AgentSamples<'_>,
    inv_stepsize: f64,
) -> Result<LossNodes> {
    if !(inv_stepsize >= 0.0 && inv_stepsize.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "inverse step size must be finite and non-negative, got {inv_stepsize}"
        )));
    }
    let (ratio, dist) = ratio_node(g, agent, policy, vars, samples)?;
    let w = samples.weight_column();
    let wm = &w * &Array2::from_shape_fn((samples.len(), 1), |(i, _)| samples.m_weight[i]);
    let surrogate = g.weighted_sum(ratio, wm);
    let old_dist = snapshot.dist_constants(g, samples.observations)?;
    let kl = kl_graph(g, dist, old_dist)?;
    let mean_kl = g.weighted_sum(kl, w);
    let penalty = g.scale(mean_kl, inv_stepsize);
    let loss = g.sub(penalty, surrogate);
    Ok(LossNodes {
        loss,
        surrogate,
        mean_kl: Some(mean_kl),
        ratio,
    })
}

/// `-mean(min(ratio * M, clamp(ratio, 1 - eps, 1 + eps) * M))`.
pub fn happo_clip_agent_loss(
    g: &mut Graph,
    agent: usize,
    policy: &PolicyParams,
    vars: &PolicyVars,
    samples: &AgentSamples<'_>,
    epsilon: f64,
) -> Result<LossNodes> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("clip epsilon {epsilon} outside (0, 1)")));
    }
    let (ratio, _) = ratio_node(g, agent, policy, vars, samples)?;
    let w = samples.weight_column();
    let m = g.constant(Array2::from_shape_fn((samples.len(), 1), |(i, _)| samples.m_weight[i]));
    let unclipped = g.mul(ratio, m);
    let clipped_ratio = g.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
    let clipped = g.mul(clipped_ratio, m);
    let pessimistic = g.minimum(unclipped, clipped);
    let objective = g.weighted_sum(pessimistic, w.clone());
    let loss = g.scale(objective, -1.0);
    let surrogate = g.weighted_sum(unclipped, w);
    Ok(LossNodes {
        loss,
        surrogate,
        mean_kl: None,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Hamdpo { inv_stepsize: f64 },
    HappoClip { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOptions {
    pub sgd_steps: usize,
    pub learning_rate: f64,
    /// Elementwise gradient multiplier (e.g. zeros to freeze parameters).
    pub gradient_mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentUpdateReport {
    pub agent: usize,
    /// Surrogate at `theta_k` (the weighted mean of `M`).
    pub pre_surrogate: f64,
    pub post_surrogate: f64,
    /// Weighted mean of `KL(new || old)` over the batch states.
    pub mean_kl: f64,
    /// Final loss value.
    pub loss: f64,
    /// Largest gradient norm seen, before clipping.
    pub grad_norm: f64,
    /// SGD steps whose gradient was clipped.
    pub grad_clips: usize,
    pub ratio_min: f64,
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub max_abs_m: f64,
}

fn build(
    g: &mut Graph,
    agent: usize,
    policy: &PolicyParams,
    snapshot: &PolicyParams,
    samples: &AgentSamples<'_>,
    objective: Objective,
) -> Result<LossNodes> {
    let vars = policy.register(g);
    match objective {
        Objective::Hamdpo { inv_stepsize } => {
            hamdpo_agent_loss(g, agent, policy, &vars, snapshot, samples, inv_stepsize)
        }
        Objective::HappoClip { epsilon } => {
            happo_clip_agent_loss(g, agent, policy, &vars, samples, epsilon)
        }
    }
}

/// Runs exactly `sgd_steps` gradient steps on the loss from `snapshot`,
/// `theta <- theta - eta grad(loss)`, clipping gradient norms at
/// [`GRAD_CLIP`].
pub fn update_agent(
    agent: usize,
    snapshot: &PolicyParams,
    samples: &AgentSamples<'_>,
    objective: Objective,
    opts: &UpdateOptions,
) -> Result<(PolicyParams, AgentUpdateReport)> {
    if let Some(mask) = &opts.gradient_mask {
        if mask.len() != snapshot.n_params() {
            return Err(Error::DimensionMismatch {
                context: "gradient mask",
                expected: snapshot.n_params(),
                got: mask.len(),
            });
        }
    }
    let mut params = snapshot.clone();
    let mut flat = params.flatten();
    let mut grad_norm = 0.0_f64;
    let mut grad_clips = 0;
    let mut pre_surrogate = None;
    for _ in 0..opts.sgd_steps {
        let mut g = Graph::new();
        let nodes = build(&mut g, agent, &params, snapshot, samples, objective)?;
        pre_surrogate.get_or_insert(g.scalar(nodes.surrogate));
        let mut grad = g.backward(nodes.loss).flat();
        if let Some(mask) = &opts.gradient_mask {
            grad.0.iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
        }
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                what: "policy gradient",
            });
        }
        grad_norm = grad_norm.max(norm);
        if norm > GRAD_CLIP {
            grad.scale(GRAD_CLIP / norm);
            grad_clips += 1;
        }
        flat.iter_mut()
            .zip(grad.as_slice())
            .for_each(|(p, d)| *p -= opts.learning_rate * d);
        params.assign(&flat)?;
    }

    let mut g = Graph::new();
    let nodes = build(&mut g, agent, &params, snapshot, samples, objective)?;
    let post_surrogate = g.scalar(nodes.surrogate);
    let loss = g.scalar(nodes.loss);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "policy loss",
        });
    }
    let mean_kl = match nodes.mean_kl {
        Some(kl) => g.scalar(kl),
        None => {
            let vars = params.register(&mut g);
            let obs = g.constant(samples.observations.to_owned());
            let dist = params.dist_graph(&mut g, &vars, obs)?;
            let old = snapshot.dist_constants(&mut g, samples.observations)?;
            let kl = kl_graph(&mut g, dist, old)?;
            let mean = g.weighted_sum(kl, samples.weight_column());
            g.scalar(mean)
        }
    };
    let ratios = g.value(nodes.ratio);
    let ratio_min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio_max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio_mean = ratios.mean().unwrap_or(1.0);
    let max_abs_m = samples.m_weight.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    // Weighted mean of M at theta_k, also valid when no step was taken.
    let pre_surrogate = pre_surrogate.unwrap_or(post_surrogate);
    Ok((
        params,
        AgentUpdateReport {
            agent,
            pre_surrogate,
            post_surrogate,
            mean_kl: mean_kl.max(0.0),
            loss,
            grad_norm,
            grad_clips,
            ratio_min,
            ratio_mean,
            ratio_max,
            max_abs_m,
        },
    ))
}

/// Multiplies every sample's `m_weight` by
/// `pi_new(a^i | s) / pi_old(a^i | s)` for the agent just updated and
/// records the agent in `m_applied`.
pub fn accumulate_m(batch: &mut RolloutBatch, agent: usize, new_policy: &PolicyParams) -> Result<()> {
    if batch.m_applied.contains(&agent) {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} ratio already applied this iteration"
        )));
    }
    let new = new_policy.log_probs(batch.observations[agent].view(), &batch.actions[agent])?;
    let mut ratios = Vec::with_capacity(new.len());
    for (lp, old) in new.iter().zip(&batch.old_log_probs[agent]) {
        let gap = lp - old;
        if !(gap.abs() <= LOG_RATIO_LIMIT) {
            return Err(Error::RatioOverflow { agent, gap });
        }
        ratios.push(gap.exp());
    }
    batch.m_weight.iter_mut().zip(ratios).for_each(|(m, r)| *m *= r);
    batch.m_applied.push(agent);
    Ok(())
}
