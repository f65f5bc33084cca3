//! The oracle property suite behind `hamdpo verify`.
//!
//! Each identity is checked on seeded random games and reported as the
//! worst absolute error against a fixed tolerance.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Stream};
use crate::tabular::random::{perturb_policy, perturb_table, random_game, random_policy};
use crate::tabular::{
    estimator_identity_check, exact_hamdpo_step, exact_occupancy, exact_state_value,
    expected_reward, improvement_bound_check, joint_kl_decomposition_check, joint_return,
    AgentTable, SubsetOracle, TabularGame,
};

pub const DECOMPOSITION_TOL: f64 = 1e-10;
pub const KL_DECOMPOSITION_TOL: f64 = 1e-12;
pub const ESTIMATOR_TOL: f64 = 1e-10;
pub const BOUND_TOL: f64 = 1e-9;
pub const CENTERING_TOL: f64 = 1e-10;
pub const OCCUPANCY_TOL: f64 = 1e-9;
pub const MONOTONICITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub games: usize,
    /// Agent counts cycled across games.
    pub agent_counts: Vec<usize>,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub kl_pairs: usize,
    pub estimator_triples: usize,
    pub bound_pairs_per_game: usize,
    pub md_steps: usize,
    pub md_stepsize: f64,
    /// Drops the last term of the decomposition sum (negative control).
    pub corrupt_decomposition: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            games: 100,
            agent_counts: vec![2, 3],
            max_states: 5,
            max_actions: 3,
            gamma: 0.9,
            kl_pairs: 1000,
            estimator_triples: 100,
            bound_pairs_per_game: 100,
            md_steps: 5,
            md_stepsize: 0.1,
            corrupt_decomposition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResult {
    pub name: String,
    pub max_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub games: usize,
    pub identities: Vec<IdentityResult>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.identities.iter().all(|r| r.pass)
    }

    pub fn get(&self, name: &str) -> Option<&IdentityResult> {
        self.identities.iter().find(|r| r.name == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Every ordered, nonempty subset of `0..n`.
pub fn ordered_subsets(n: usize) -> Vec<Vec<usize>> {
    fn extend(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in 0..n {
            if prefix.contains(&i) {
                continue;
            }
            prefix.push(i);
            out.push(prefix.clone());
            extend(n, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(n, &mut Vec::new(), &mut out);
    out
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    ordered_subsets(n).into_iter().filter(|s| s.len() == n).collect()
}

#[derive(Debug, Default, Clone, Copy)]
struct GameErrors {
    decomposition: f64,
    estimator: f64,
    bound: f64,
    centering: f64,
    occupancy: f64,
    monotonicity: f64,
}

impl GameErrors {
    fn merge(self, o: GameErrors) -> GameErrors {
        GameErrors {
            decomposition: self.decomposition.max(o.decomposition),
            estimator: self.estimator.max(o.estimator),
            bound: self.bound.max(o.bound),
            centering: self.centering.max(o.centering),
            occupancy: self.occupancy.max(o.occupancy),
            monotonicity: self.monotonicity.max(o.monotonicity),
        }
    }
}

fn game_for(opts: &VerifyOptions, index: usize, rng: &mut impl Rng) -> Result<TabularGame> {
    let n_agents = opts.agent_counts[index % opts.agent_counts.len()];
    let n_states = rng.random_range(1..=opts.max_states);
    let counts: Vec<usize> = (0..n_agents)
        .map(|_| rng.random_range(2..=opts.max_actions.max(2)))
        .collect();
    random_game(&counts, n_states, opts.gamma, rng)
}

fn check_game(opts: &VerifyOptions, index: usize, triples: usize) -> Result<GameErrors> {
    let mut rng = stream_rng(opts.seed, Stream::Oracle, index as u64);
    let game = game_for(opts, index, &mut rng)?;
    let n = game.n_agents();
    let n_states = game.n_states();
    let policy = random_policy(game.action_counts(), n_states, &mut rng);
    let mut errors = GameErrors::default();

    let oracle = SubsetOracle::new(&game, &policy)?;
    for subset in ordered_subsets(n) {
        errors.decomposition = errors
            .decomposition
            .max(oracle.decomposition_error(&subset, opts.corrupt_decomposition));
    }

    let space = game.joint_space();
    for s in 0..n_states {
        let row = policy.joint_row(space, s);
        let centered: f64 = row
            .iter()
            .enumerate()
            .map(|(j, p)| p * (oracle.q().get(s, j) - oracle.values()[s]))
            .sum();
        errors.centering = errors.centering.max(centered.abs());
    }

    let j_values = joint_return(&game, &policy)?;
    let rho = exact_occupancy(&game, &policy)?;
    let j_occupancy: f64 = rho
        .mass()
        .iter()
        .zip(expected_reward(&game, &policy))
        .map(|(m, r)| m * r)
        .sum();
    errors.occupancy = (j_values - j_occupancy).abs();

    for _ in 0..triples {
        let base = random_policy(game.action_counts(), n_states, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let m = rng.random_range(1..=n);
        let ordering = &order[..m];
        let bar: Vec<AgentTable> = ordering[..m - 1]
            .iter()
            .map(|&i| perturb_table(base.agent(i), 1.0, &mut rng))
            .collect();
        let hat = perturb_table(base.agent(ordering[m - 1]), 1.0, &mut rng);
        let err = estimator_identity_check(&game, &base, &bar, &hat, ordering)?;
        errors.estimator = errors.estimator.max(err);
    }

    for pair in 0..opts.bound_pairs_per_game {
        let old = random_policy(game.action_counts(), n_states, &mut rng);
        // Alternate far-apart pairs with local perturbations, where the
        // bound is tight enough to be informative.
        let new = if pair % 2 == 0 {
            random_policy(game.action_counts(), n_states, &mut rng)
        } else {
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            perturb_policy(&old, scale, &mut rng)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let report = improvement_bound_check(&game, &old, &new, &order)?;
        errors.bound = errors.bound.max(report.violation());
    }

    let mut current = policy.clone();
    let mut j = joint_return(&game, &current)?;
    for _ in 0..opts.md_steps {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        current = exact_hamdpo_step(&game, &current, opts.md_stepsize, &order)?;
        let j_next = joint_return(&game, &current)?;
        errors.monotonicity = errors.monotonicity.max(j - j_next);
        j = j_next;
    }
    // Guard against a silently broken evaluation path.
    exact_state_value(&game, &current)?;
    Ok(errors)
}

fn kl_pairs_error(opts: &VerifyOptions) -> Result<f64> {
    let mut rng = stream_rng(opts.seed, Stream::Oracle, u64::MAX);
    let mut worst = 0.0_f64;
    for pair in 0..opts.kl_pairs {
        let n = opts.agent_counts[pair % opts.agent_counts.len()].max(1);
        let n_states = rng.random_range(1..=opts.max_states);
        let counts: Vec<usize> = (0..n)
            .map(|_| rng.random_range(2..=opts.max_actions.max(2)))
            .collect();
        let p = random_policy(&counts, n_states, &mut rng);
        let q = random_policy(&counts, n_states, &mut rng);
        for s in 0..n_states {
            worst = worst.max(joint_kl_decomposition_check(&p, &q, s)?);
        }
    }
    Ok(worst)
}

/// Runs the full oracle suite.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerificationReport> {
    if opts.games == 0 || opts.agent_counts.is_empty() || opts.agent_counts.contains(&0) {
        return Err(Error::InvalidArgument(
            "need at least one game and positive agent counts".into(),
        ));
    }
    let per_game_triples = |i: usize| {
        let base = opts.estimator_triples / opts.games;
        base + usize::from(i < opts.estimator_triples % opts.games)
    };
    let errors = (0..opts.games)
        .into_par_iter()
        .map(|i| check_game(opts, i, per_game_triples(i)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(GameErrors::default(), GameErrors::merge);
    let kl = kl_pairs_error(opts)?;

    let entry = |name: &str, max_error: f64, tol: f64| IdentityResult {
        name: name.to_string(),
        max_error,
        pass: max_error < tol,
    };
    let identities = vec![
        entry("advantage_decomposition", errors.decomposition, DECOMPOSITION_TOL),
        entry("kl_decomposition", kl, KL_DECOMPOSITION_TOL),
        entry("estimator_identity", errors.estimator, ESTIMATOR_TOL),
        IdentityResult {
            name: "improvement_bound".into(),
            max_error: errors.bound,
            pass: errors.bound <= BOUND_TOL,
        },
        entry("advantage_centering", errors.centering, CENTERING_TOL),
        entry("occupancy_identity", errors.occupancy, OCCUPANCY_TOL),
        IdentityResult {
            name: "md_step_monotonicity".into(),
            max_error: errors.monotonicity.max(0.0),
            pass: errors.monotonicity <= MONOTONICITY_TOL,
        },
    ];
    Ok(VerificationReport {
        seed: opts.seed,
        games: opts.games,
        identities,
    })
}
