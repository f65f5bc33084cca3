//! Surrogate objectives, the joint advantage estimator and the sequential
//! policy improvement bound, all evaluated by exhaustive summation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tabular::eval::{exact_occupancy, joint_return};
use crate::tabular::game::{for_each_assignment, JointActionSpace, TabularGame};
use crate::tabular::policy::{AgentTable, TabularJointPolicy};
use crate::tabular::subset::{validate_subset, SubsetOracle};

/// `KL(p || q)` between two probability rows. Zero-probability entries of
/// `p` contribute nothing; `q(a) = 0 < p(a)` is a domain error.
pub fn kl_rows(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa == 0.0 {
            continue;
        }
        if qa == 0.0 {
            return Err(Error::Domain(format!(
                "KL is infinite: target assigns zero probability to action {a}"
            )));
        }
        kl += pa * (pa / qa).ln();
    }
    Ok(kl)
}

/// `max_s KL(p(.|s) || q(.|s))` for one agent.
pub fn max_kl(p: &AgentTable, q: &AgentTable) -> Result<f64> {
    (0..p.n_states()).try_fold(0.0_f64, |m, s| Ok(m.max(kl_rows(p.row(s), q.row(s))?)))
}

fn check_ordering(
    game: &TabularGame,
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> Result<()> {
    if ordering.is_empty() {
        return Err(Error::InvalidArgument("ordering must be nonempty".into()));
    }
    validate_subset(game.n_agents(), ordering)?;
    if bar_policies.len() + 1 != ordering.len() {
        return Err(Error::DimensionMismatch {
            context: "predecessor tables",
            expected: ordering.len() - 1,
            got: bar_policies.len(),
        });
    }
    let tables = bar_policies.iter().chain(std::iter::once(hat_policy));
    for (&i, table) in ordering.iter().zip(tables) {
        if table.n_actions() != game.action_counts()[i] || table.n_states() != game.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "table for agent {i} does not match the game's shape"
            )));
        }
    }
    Ok(())
}

/// Per-state `E_{a^{1:m-1} ~ bar, a^m ~ hat}[A^{i_m}(s, a^{1:m-1}, a^m)]`.
fn conditional_expected_advantage(
    oracle: &SubsetOracle<'_>,
    space: &JointActionSpace,
    s: usize,
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> f64 {
    let (last, preds) = ordering.split_last().expect("nonempty ordering");
    let mut total = 0.0;
    for_each_assignment(space.counts(), ordering, |actions| {
        let (a_last, a_preds) = actions.split_last().expect("nonempty");
        let w = bar_policies
            .iter()
            .zip(a_preds)
            .map(|(t, &a)| t.prob(s, a))
            .product::<f64>()
            * hat_policy.prob(s, *a_last);
        if w != 0.0 {
            total += w * oracle.subset_advantage_at(s, preds, a_preds, &[*last], &[*a_last]);
        }
    });
    total
}

/// `L^{i_1:m}_pi(bar, hat) = sum_s rho_pi(s) E_{bar, hat}[A^{i_m}_pi]` with
/// unnormalized occupancy `rho_pi`. `bar_policies[j]` is the table of
/// `ordering[j]`; `hat_policy` belongs to the last agent in `ordering`.
pub fn surrogate_objective(
    game: &TabularGame,
    base: &TabularJointPolicy,
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> Result<f64> {
    check_ordering(game, bar_policies, hat_policy, ordering)?;
    let oracle = SubsetOracle::new(game, base)?;
    let rho = exact_occupancy(game, base)?;
    Ok(surrogate_with(
        &oracle,
        game.joint_space(),
        rho.mass(),
        bar_policies,
        hat_policy,
        ordering,
    ))
}

fn surrogate_with(
    oracle: &SubsetOracle<'_>,
    space: &JointActionSpace,
    rho: &[f64],
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> f64 {
    rho.iter()
        .enumerate()
        .map(|(s, &mass)| {
            mass * conditional_expected_advantage(oracle, space, s, bar_policies, hat_policy, ordering)
        })
        .sum()
}

/// Both sides of the joint advantage estimator, per state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSides {
    pub direct: Vec<f64>,
    pub importance_weighted: Vec<f64>,
}

impl EstimatorSides {
    pub fn max_error(&self) -> f64 {
        self.direct
            .iter()
            .zip(&self.importance_weighted)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Evaluates, per state, the conditional expected advantage directly and
/// through the importance-weighted joint advantage
/// `E_{a~pi}[(hat/pi^{i_m} - 1) (bar/pi^{i_1:m-1}) A_pi(s, a)]`.
pub fn estimator_sides(
    game: &TabularGame,
    base: &TabularJointPolicy,
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> Result<EstimatorSides> {
    check_ordering(game, bar_policies, hat_policy, ordering)?;
    let oracle = SubsetOracle::new(game, base)?;
    let space = game.joint_space();
    let (&last, preds) = ordering.split_last().expect("checked nonempty");
    let mut direct = Vec::with_capacity(game.n_states());
    let mut weighted = Vec::with_capacity(game.n_states());
    for s in 0..game.n_states() {
        direct.push(conditional_expected_advantage(
            &oracle,
            space,
            s,
            bar_policies,
            hat_policy,
            ordering,
        ));
        let mut total = 0.0;
        for j in 0..space.size() {
            let actions = space.decode(j);
            let p_joint = base.joint_prob(s, &actions);
            let base_last = base.agent(last).prob(s, actions[last]);
            let hat_ratio = ratio(hat_policy.prob(s, actions[last]), base_last, last)?;
            let mut pred_ratio = 1.0;
            for (&i, table) in preds.iter().zip(bar_policies) {
                pred_ratio *= ratio(table.prob(s, actions[i]), base.agent(i).prob(s, actions[i]), i)?;
            }
            if p_joint == 0.0 {
                continue;
            }
            let adv = oracle.q().get(s, j) - oracle.values()[s];
            total += p_joint * (hat_ratio - 1.0) * pred_ratio * adv;
        }
        weighted.push(total);
    }
    Ok(EstimatorSides {
        direct,
        importance_weighted: weighted,
    })
}

fn ratio(target: f64, base: f64, agent: usize) -> Result<f64> {
    if base == 0.0 {
        if target == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Domain(format!(
            "agent {agent}: base policy has zero probability where the target does not"
        )));
    }
    Ok(target / base)
}

pub fn estimator_identity_check(
    game: &TabularGame,
    base: &TabularJointPolicy,
    bar_policies: &[AgentTable],
    hat_policy: &AgentTable,
    ordering: &[usize],
) -> Result<f64> {
    Ok(estimator_sides(game, base, bar_policies, hat_policy, ordering)?.max_error())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementBoundReport {
    pub j_old: f64,
    pub j_new: f64,
    /// One surrogate term per position in the ordering.
    pub surrogate_terms: Vec<f64>,
    /// `4 gamma max|A_pi| / (1 - gamma)^2`.
    pub penalty_constant: f64,
    /// `max_s KL(old^{i_m} || new^{i_m})`, per position in the ordering.
    pub max_kls: Vec<f64>,
    pub rhs: f64,
    pub holds: bool,
}

impl ImprovementBoundReport {
    /// Amount by which the bound is violated (0 when it holds with slack).
    pub fn violation(&self) -> f64 {
        (self.rhs - self.j_new).max(0.0)
    }
}

/// Checks `J(new) >= J(old) + sum_m [L^{i_1:m} - C D_KL^max(old^{i_m}, new^{i_m})]`.
pub fn improvement_bound_check(
    game: &TabularGame,
    old: &TabularJointPolicy,
    new: &TabularJointPolicy,
    ordering: &[usize],
) -> Result<ImprovementBoundReport> {
    old.check_against(game)?;
    new.check_against(game)?;
    validate_subset(game.n_agents(), ordering)?;
    if ordering.len() != game.n_agents() {
        return Err(Error::InvalidArgument(
            "ordering must be a permutation of all agents".into(),
        ));
    }
    let oracle = SubsetOracle::new(game, old)?;
    let rho = exact_occupancy(game, old)?;
    let gamma = game.gamma();
    let max_adv = (0..game.n_states())
        .flat_map(|s| {
            let v = oracle.values()[s];
            oracle.q().row(s).iter().map(move |q| (q - v).abs())
        })
        .fold(0.0_f64, f64::max);
    let penalty_constant = 4.0 * gamma * max_adv / (1.0 - gamma).powi(2);

    let mut surrogate_terms = Vec::with_capacity(ordering.len());
    let mut max_kls = Vec::with_capacity(ordering.len());
    for m in 0..ordering.len() {
        let bar: Vec<AgentTable> = ordering[..m].iter().map(|&i| new.agent(i).clone()).collect();
        let hat = new.agent(ordering[m]);
        surrogate_terms.push(surrogate_with(
            &oracle,
            game.joint_space(),
            rho.mass(),
            &bar,
            hat,
            &ordering[..=m],
        ));
        max_kls.push(max_kl(old.agent(ordering[m]), hat)?);
    }
    let j_old: f64 = game
        .initial_dist()
        .iter()
        .zip(oracle.values())
        .map(|(m, v)| m * v)
        .sum();
    let j_new = joint_return(game, new)?;
    let rhs = j_old
        + surrogate_terms
            .iter()
            .zip(&max_kls)
            .map(|(l, kl)| l - penalty_constant * kl)
            .sum::<f64>();
    Ok(ImprovementBoundReport {
        j_old,
        j_new,
        surrogate_terms,
        penalty_constant,
        max_kls,
        rhs,
        holds: j_new >= rhs - 1e-9,
    })
}

/// `|KL(p(.|s) || q(.|s)) - sum_i KL(p^i(.|s) || q^i(.|s))|`, with the joint
/// KL summed over every joint action.
pub fn joint_kl_decomposition_check(
    p: &TabularJointPolicy,
    q: &TabularJointPolicy,
    state: usize,
) -> Result<f64> {
    let counts = p.action_counts();
    if counts != q.action_counts() || p.n_states() != q.n_states() {
        return Err(Error::InvalidPolicy("policies have different shapes".into()));
    }
    if state >= p.n_states() {
        return Err(Error::InvalidArgument(format!("state {state} out of range")));
    }
    let space = JointActionSpace::new(&counts);
    let joint_p = p.joint_row(&space, state);
    let joint_q = q.joint_row(&space, state);
    let joint = kl_rows(&joint_p, &joint_q)?;
    let sum = (0..p.n_agents()).try_fold(0.0, |acc, i| {
        Ok::<_, Error>(acc + kl_rows(p.agent(i).row(state), q.agent(i).row(state))?)
    })?;
    Ok((joint - sum).abs())
}
