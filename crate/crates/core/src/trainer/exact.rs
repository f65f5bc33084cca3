//! Exact-advantage tabular training: the sampled loss with the batch
//! replaced by every (state, joint action) pair, weighted by the normalized
//! occupancy times the joint policy probability, and `M` initialized from
//! the exact advantage.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{AgentActions, MlpParams, PolicyParams};
use crate::seeding::{stream_rng, Stream};
use crate::tabular::{exact_advantage, exact_occupancy, joint_return, AgentTable, TabularGame, TabularJointPolicy};
use crate::trainer::loss::{update_agent, AgentSamples, AgentUpdateReport, Objective, UpdateOptions, LOG_RATIO_LIMIT};
use crate::trainer::{draw_permutation, stepsize, TrainerConfig};

/// One linear softmax policy per agent over one-hot states, all starting
/// uniform. Logits for state `s` are row `s` of the weight matrix.
pub fn one_hot_policies(game: &TabularGame) -> Vec<PolicyParams> {
    game.action_counts()
        .iter()
        .map(|&k| {
            PolicyParams::categorical(
                MlpParams::zeros(&[game.n_states(), k]).expect("positive sizes"),
            )
        })
        .collect()
}

/// Probability tables of one-hot policies.
pub fn tabular_policy_of(policies: &[PolicyParams], n_states: usize) -> Result<TabularJointPolicy> {
    let eye = Array2::<f64>::eye(n_states);
    let agents = policies
        .iter()
        .map(|p| {
            if !p.is_discrete() || p.obs_dim() != n_states {
                return Err(Error::InvalidPolicy(
                    "exact mode needs categorical policies over one-hot states".into(),
                ));
            }
            let logits = p.body.forward(eye.view())?;
            Ok(AgentTable::from_logits(
                p.body.output_dim(),
                logits.as_slice().expect("standard layout"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    TabularJointPolicy::new(agents)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactIterationReport {
    pub iteration: usize,
    pub j_before: f64,
    pub j_after: f64,
    pub permutation: Vec<usize>,
    pub reports: Vec<AgentUpdateReport>,
}

/// One exact-advantage iteration with the HAMDPO loss. Only the per-state
/// logit weights are trained (the shared bias stays fixed), so each state's
/// row is updated from its own occupancy-weighted term.
pub fn exact_tabular_iteration(
    game: &TabularGame,
    policies: &mut [PolicyParams],
    cfg: &TrainerConfig,
    k: usize,
) -> Result<ExactIterationReport> {
    cfg.validate()?;
    let t_k = stepsize(k, cfg)?;
    let n_states = game.n_states();
    let pi = tabular_policy_of(policies, n_states)?;
    pi.check_against(game)?;
    let adv = exact_advantage(game, &pi)?;
    let rho = exact_occupancy(game, &pi)?.normalized();
    let j_before = joint_return(game, &pi)?;

    let space = game.joint_space();
    let n_agents = game.n_agents();
    let n = n_states * space.size();
    let mut observations = Array2::zeros((n, n_states));
    let mut weights = Vec::with_capacity(n);
    let mut m_weight = Vec::with_capacity(n);
    let mut actions = vec![Vec::with_capacity(n); n_agents];
    let mut old_log_probs = vec![Vec::with_capacity(n); n_agents];
    for s in 0..n_states {
        for j in 0..space.size() {
            let row = s * space.size() + j;
            observations[[row, s]] = 1.0;
            let a = space.decode(j);
            weights.push(rho[s] * pi.joint_prob(s, &a));
            m_weight.push(adv.get(s, j));
            for i in 0..n_agents {
                actions[i].push(a[i]);
                old_log_probs[i].push(pi.agent(i).prob(s, a[i]).ln());
            }
        }
    }
    let actions: Vec<AgentActions> = actions.into_iter().map(AgentActions::Discrete).collect();

    let permutation = draw_permutation(n_agents, &mut stream_rng(cfg.seed, Stream::Permutation, k as u64));
    let mut reports = Vec::with_capacity(n_agents);
    for &agent in &permutation {
        let snapshot = policies[agent].clone();
        let k_actions = snapshot.body.output_dim();
        let mut mask = vec![1.0; n_states * k_actions];
        mask.extend(std::iter::repeat_n(0.0, k_actions));
        let opts = UpdateOptions {
            sgd_steps: cfg.sgd_steps,
            learning_rate: cfg.learning_rate,
            gradient_mask: Some(mask),
        };
        let samples = AgentSamples {
            observations: observations.view(),
            actions: &actions[agent],
            old_log_probs: &old_log_probs[agent],
            m_weight: &m_weight,
            weights: Some(&weights),
        };
        let objective = Objective::Hamdpo {
            inv_stepsize: 1.0 / t_k,
        };
        let (new, report) = update_agent(agent, &snapshot, &samples, objective, &opts)?;
        let new_lp = new.log_probs(observations.view(), &actions[agent])?;
        for ((m, lp), old) in m_weight.iter_mut().zip(&new_lp).zip(&old_log_probs[agent]) {
            let gap = lp - old;
            if !(gap.abs() <= LOG_RATIO_LIMIT) {
                return Err(Error::RatioOverflow { agent, gap });
            }
            *m *= gap.exp();
        }
        policies[agent] = new;
        reports.push(report);
    }
    let j_after = joint_return(game, &tabular_policy_of(policies, n_states)?)?;
    Ok(ExactIterationReport {
        iteration: k,
        j_before,
        j_after,
        permutation,
        reports,
    })
}
