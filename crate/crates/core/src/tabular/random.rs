//! Seeded random games and policies for the oracle suite.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::Result;
use crate::tabular::game::TabularGame;
use crate::tabular::policy::{AgentTable, TabularJointPolicy};

/// Smallest probability assigned by [`random_policy`] and [`perturb_policy`].
pub const PROB_FLOOR: f64 = 1e-6;

/// Sample from a symmetric Dirichlet(1) (normalized unit exponentials).
pub fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    normalize(draws)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    // Absorb round-off into the largest entry so rows sum to 1 within 1e-15.
    let err = 1.0 - v.iter().sum::<f64>();
    if let Some(max) = v.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += err;
    }
    v
}

fn floored(v: Vec<f64>) -> Vec<f64> {
    let k = v.len() as f64;
    normalize(v.into_iter().map(|p| p * (1.0 - k * PROB_FLOOR) + PROB_FLOOR).collect())
}

/// Random game: Dirichlet(1) transitions and initial distribution, rewards
/// uniform in `[-1, 1]`.
pub fn random_game<R: Rng + ?Sized>(
    action_counts: &[usize],
    n_states: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<TabularGame> {
    let n_joint: usize = action_counts.iter().product();
    let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
    for _ in 0..n_states * n_joint {
        transition.extend(dirichlet_ones(n_states, rng));
    }
    let reward = (0..n_states * n_joint)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let initial = dirichlet_ones(n_states, rng);
    TabularGame::new(action_counts.to_vec(), n_states, transition, reward, gamma, initial)
}

/// Random strictly positive policy (every entry at least [`PROB_FLOOR`]).
pub fn random_policy<R: Rng + ?Sized>(
    action_counts: &[usize],
    n_states: usize,
    rng: &mut R,
) -> TabularJointPolicy {
    let agents = action_counts
        .iter()
        .map(|&k| random_table(n_states, k, rng))
        .collect();
    TabularJointPolicy::new(agents).expect("consistent shapes")
}

pub fn random_table<R: Rng + ?Sized>(n_states: usize, k: usize, rng: &mut R) -> AgentTable {
    let probs = (0..n_states)
        .flat_map(|_| floored(dirichlet_ones(k, rng)))
        .collect();
    AgentTable::new(n_states, k, probs).expect("rows are normalized")
}

/// Multiplies every entry by `exp(scale * z)`, `z ~ N(0, 1)`, and renormalizes.
pub fn perturb_table<R: Rng + ?Sized>(table: &AgentTable, scale: f64, rng: &mut R) -> AgentTable {
    let k = table.n_actions();
    let probs = (0..table.n_states())
        .flat_map(|s| {
            let row: Vec<f64> = table
                .row(s)
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(rng);
                    p * (scale * z).exp()
                })
                .collect();
            floored(normalize(row))
        })
        .collect();
    AgentTable::new(table.n_states(), k, probs).expect("rows are normalized")
}

pub fn perturb_policy<R: Rng + ?Sized>(
    policy: &TabularJointPolicy,
    scale: f64,
    rng: &mut R,
) -> TabularJointPolicy {
    TabularJointPolicy::new(
        policy
            .agents()
            .iter()
            .map(|t| perturb_table(t, scale, rng))
            .collect(),
    )
    .expect("consistent shapes")
}
