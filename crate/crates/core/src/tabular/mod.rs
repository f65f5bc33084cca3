//! Exact computation on small finite Markov games.
//!
//! Everything here is evaluated by dense linear solves and exhaustive
//! summation over joint actions, so it doubles as the reference oracle for
//! the sampled learners.

mod eval;
mod game;
mod md_step;
mod policy;
pub mod random;
mod subset;
mod surrogate;
pub mod verify;

pub use eval::{
    exact_advantage, exact_occupancy, exact_q, exact_state_value, expected_reward, joint_return,
    optimal_joint_return, q_from_values, JointTable, Occupancy,
};
pub use game::{for_each_assignment, JointActionSpace, TabularGame, MAX_JOINT_ENTRIES};
pub use md_step::{exact_hamdpo_step, mirror_step_row};
pub use policy::{AgentTable, TabularJointPolicy};
pub use subset::{check_advantage_decomposition, subset_advantage, subset_q, SubsetOracle};
pub use surrogate::{
    estimator_identity_check, estimator_sides, improvement_bound_check,
    joint_kl_decomposition_check, kl_rows, max_kl, surrogate_objective, EstimatorSides,
    ImprovementBoundReport,
};
