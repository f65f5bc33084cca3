//! Exact policy evaluation by dense linear solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tabular::game::TabularGame;
use crate::tabular::policy::TabularJointPolicy;

/// A real value per `(state, joint action)`, joint actions in the game's
/// [`JointActionSpace`](crate::tabular::JointActionSpace) order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    n_joint: usize,
    data: Vec<f64>,
}

impl JointTable {
    pub fn new(n_states: usize, n_joint: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_states * n_joint);
        Self { n_joint, data }
    }

    pub fn get(&self, s: usize, joint: usize) -> f64 {
        self.data[s * self.n_joint + joint]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_joint..(s + 1) * self.n_joint]
    }

    pub fn n_states(&self) -> usize {
        self.data.len() / self.n_joint
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Unnormalized discounted state visitation `rho(s) = sum_t gamma^t Pr(s_t = s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    mass: Vec<f64>,
    gamma: f64,
}

impl Occupancy {
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Total mass, `1 / (1 - gamma)` up to round-off.
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Discounted state distribution `(1 - gamma) rho`.
    pub fn normalized(&self) -> Vec<f64> {
        self.mass.iter().map(|m| m * (1.0 - self.gamma)).collect()
    }
}

/// Expected one-step reward `r_pi(s)` and state transition matrix `P_pi`.
fn induced_chain(game: &TabularGame, policy: &TabularJointPolicy) -> (Vec<f64>, DMatrix<f64>) {
    let n = game.n_states();
    let space = game.joint_space();
    let mut r_pi = vec![0.0; n];
    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..n {
        let row = policy.joint_row(space, s);
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * game.reward(s, j);
            for (s2, &p) in game.next_state_dist(s, j).iter().enumerate() {
                p_pi[(s, s2)] += w * p;
            }
        }
    }
    (r_pi, p_pi)
}

fn solve(system: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let lu = system.clone().lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("policy evaluation system is singular".into()))?;
    let residual = (&system * &x - &rhs).amax();
    if !residual.is_finite() || residual > 1e-10 * (1.0 + rhs.amax()) {
        return Err(Error::Singular(format!("residual {residual:e} too large")));
    }
    Ok(x.iter().copied().collect())
}

/// Solves `V = r_pi + gamma P_pi V`.
pub fn exact_state_value(game: &TabularGame, policy: &TabularJointPolicy) -> Result<Vec<f64>> {
    policy.check_against(game)?;
    let n = game.n_states();
    let (r_pi, p_pi) = induced_chain(game, policy);
    let system = DMatrix::identity(n, n) - p_pi * game.gamma();
    solve(system, DVector::from_vec(r_pi))
}

/// `Q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V(s')` for a given `V`.
pub fn q_from_values(game: &TabularGame, values: &[f64]) -> JointTable {
    let n_joint = game.n_joint();
    let mut data = Vec::with_capacity(game.n_states() * n_joint);
    for s in 0..game.n_states() {
        for j in 0..n_joint {
            let next: f64 = game
                .next_state_dist(s, j)
                .iter()
                .zip(values)
                .map(|(p, v)| p * v)
                .sum();
            data.push(game.reward(s, j) + game.gamma() * next);
        }
    }
    JointTable::new(game.n_states(), n_joint, data)
}

pub fn exact_q(game: &TabularGame, policy: &TabularJointPolicy) -> Result<JointTable> {
    let v = exact_state_value(game, policy)?;
    Ok(q_from_values(game, &v))
}

pub fn exact_advantage(game: &TabularGame, policy: &TabularJointPolicy) -> Result<JointTable> {
    let v = exact_state_value(game, policy)?;
    Ok(advantage_from(game, &v))
}

pub(crate) fn advantage_from(game: &TabularGame, values: &[f64]) -> JointTable {
    let q = q_from_values(game, values);
    let n_joint = game.n_joint();
    let data = (0..game.n_states())
        .flat_map(|s| q.row(s).iter().map(move |x| x - values[s]))
        .collect();
    JointTable::new(game.n_states(), n_joint, data)
}

/// Solves `rho = mu + gamma P_pi^T rho`.
pub fn exact_occupancy(game: &TabularGame, policy: &TabularJointPolicy) -> Result<Occupancy> {
    policy.check_against(game)?;
    let n = game.n_states();
    let (_, p_pi) = induced_chain(game, policy);
    let system = DMatrix::identity(n, n) - p_pi.transpose() * game.gamma();
    let mass = solve(system, DVector::from_column_slice(game.initial_dist()))?;
    Ok(Occupancy {
        mass,
        gamma: game.gamma(),
    })
}

/// `J(pi) = sum_s mu(s) V(s)`.
pub fn joint_return(game: &TabularGame, policy: &TabularJointPolicy) -> Result<f64> {
    let v = exact_state_value(game, policy)?;
    Ok(game.initial_dist().iter().zip(&v).map(|(m, v)| m * v).sum())
}

/// Expected reward per state under the policy.
pub fn expected_reward(game: &TabularGame, policy: &TabularJointPolicy) -> Vec<f64> {
    induced_chain(game, policy).0
}

/// Optimal `J` over all (joint, deterministic) policies by value iteration
/// on the joint action space.
pub fn optimal_joint_return(game: &TabularGame, tol: f64) -> f64 {
    let n = game.n_states();
    let mut v = vec![0.0; n];
    loop {
        let q = q_from_values(game, &v);
        let next: Vec<f64> = (0..n)
            .map(|s| q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        // ||V_k - V*|| <= gamma / (1 - gamma) ||V_k - V_{k-1}||
        if delta * game.gamma() / (1.0 - game.gamma()) < tol || delta == 0.0 {
            break;
        }
    }
    game.initial_dist().iter().zip(&v).map(|(m, v)| m * v).sum()
}
