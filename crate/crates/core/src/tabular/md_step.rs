//! Closed-form sequential mirror descent step in the tabular simplex.

use crate::error::{Error, Result};
use crate::tabular::game::{for_each_assignment, TabularGame};
use crate::tabular::policy::{AgentTable, TabularJointPolicy};
use crate::tabular::subset::{validate_subset, SubsetOracle};

/// Per-state maximizer of `<g, pi> - (1/t) KL(pi || old)`:
/// `pi(a) ∝ old(a) exp(t g(a))`, shifted by `max g` before exponentiating.
pub fn mirror_step_row(old: &[f64], scores: &[f64], t: f64) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(old)
        .filter(|(_, p)| **p > 0.0)
        .map(|(g, _)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = old
        .iter()
        .zip(scores)
        .map(|(&p, &g)| if p > 0.0 { p * (t * (g - max)).exp() } else { 0.0 })
        .collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|x| x / total).collect()
}

/// One sequential update: for each agent in `ordering`, every state's row
/// becomes `old(.|s) exp(t_k E_{pred ~ updated}[A^{i_m}(s, a^{pred}, .)])`,
/// renormalized. Advantages are those of the incoming `policy`; each agent
/// sees its predecessors' updated rows.
pub fn exact_hamdpo_step(
    game: &TabularGame,
    policy: &TabularJointPolicy,
    t_k: f64,
    ordering: &[usize],
) -> Result<TabularJointPolicy> {
    if !(t_k > 0.0) || !t_k.is_finite() {
        return Err(Error::InvalidArgument(format!("step size {t_k} must be positive")));
    }
    validate_subset(game.n_agents(), ordering)?;
    let oracle = SubsetOracle::new(game, policy)?;
    let counts = game.action_counts();
    let mut updated = policy.clone();
    for (m, &agent) in ordering.iter().enumerate() {
        let preds = &ordering[..m];
        let k = counts[agent];
        let mut probs = Vec::with_capacity(game.n_states() * k);
        for s in 0..game.n_states() {
            let mut scores = vec![0.0; k];
            for_each_assignment(counts, preds, |pred_actions| {
                let w: f64 = preds
                    .iter()
                    .zip(pred_actions)
                    .map(|(&i, &a)| updated.agent(i).prob(s, a))
                    .product();
                if w == 0.0 {
                    return;
                }
                for (a, score) in scores.iter_mut().enumerate() {
                    *score += w * oracle.subset_advantage_at(s, preds, pred_actions, &[agent], &[a]);
                }
            });
            if scores.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("non-finite advantage in state {s}")));
            }
            probs.extend(mirror_step_row(policy.agent(agent).row(s), &scores, t_k));
        }
        updated = updated.with_agent(agent, AgentTable::new(game.n_states(), k, probs)?);
    }
    Ok(updated)
}
