use rand::Rng as _;

use crate::env::{check_count, ActionSpace, EnvSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;
use crate::seeding::Rng;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.95;
pub const ACTION_COST: f64 = 0.01;
/// Positions are confined to `[-ARENA, ARENA]^2`.
pub const ARENA: f64 = 2.0;

/// 2-D point agents accelerating towards a shared target.
///
/// Per step, with the action clamped to `[-1, 1]^2`:
/// `pos += vel dt`, then `vel = 0.95 vel + act * speed_scale * dt`. A
/// position leaving the arena is clamped back and that velocity component
/// zeroed. Reward `-sum_i |pos_i - target|^2 - 0.01 sum_i |act_i|^2`.
/// Agents start at rest, uniformly in the unit square.
///
/// Agent observation: `[pos - target, vel]`. Global state: every agent's
/// position then velocity.
#[derive(Debug, Clone)]
pub struct ContinuousGather {
    spec: EnvSpec,
    speed_scales: Vec<f64>,
    target: [f64; 2],
    pos: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    t: usize,
}

impl ContinuousGather {
    pub fn new(speed_scales: Vec<f64>, horizon: usize, target: [f64; 2]) -> Result<Self> {
        if speed_scales.is_empty() || speed_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(
                "speed scales must be positive and finite, one per agent".into(),
            ));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if target.iter().any(|x| !x.is_finite() || x.abs() > ARENA) {
            return Err(Error::InvalidArgument("target must lie in the arena".into()));
        }
        let n = speed_scales.len();
        // Largest squared distance inside the arena plus the largest action cost.
        let reach = target.iter().map(|x| (ARENA + x.abs()).powi(2)).sum::<f64>();
        Ok(Self {
            spec: EnvSpec {
                n_agents: n,
                obs_dims: vec![4; n],
                action_spaces: vec![
                    ActionSpace::Continuous {
                        dim: 2,
                        low: -1.0,
                        high: 1.0
                    };
                    n
                ],
                horizon,
                state_dim: 4 * n,
                reward_bound: n as f64 * (reach + 2.0 * ACTION_COST),
            },
            speed_scales,
            target,
            pos: vec![[0.0; 2]; n],
            vel: vec![[0.0; 2]; n],
            t: 0,
        })
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.pos
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.vel
    }

    /// Places agents explicitly (for scripted tests) and restarts the clock.
    pub fn set_state(&mut self, pos: Vec<[f64; 2]>, vel: Vec<[f64; 2]>) -> Result<Reset> {
        let n = self.spec.n_agents;
        if pos.len() != n || vel.len() != n {
            return Err(Error::InvalidArgument("one position and velocity per agent".into()));
        }
        self.pos = pos;
        self.vel = vel;
        self.t = 0;
        Ok(self.observe())
    }

    fn observe(&self) -> Reset {
        let observations = self
            .pos
            .iter()
            .zip(&self.vel)
            .map(|(p, v)| vec![p[0] - self.target[0], p[1] - self.target[1], v[0], v[1]])
            .collect();
        let mut state: Vec<f64> = self.pos.iter().flatten().copied().collect();
        state.extend(self.vel.iter().flatten());
        Reset { observations, state }
    }
}

impl MultiAgentEnv for ContinuousGather {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Reset {
        for p in &mut self.pos {
            *p = [rng.random::<f64>(), rng.random::<f64>()];
        }
        self.vel.iter_mut().for_each(|v| *v = [0.0; 2]);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Action], _rng: &mut Rng) -> Result<StepResult> {
        check_count(&self.spec, actions)?;
        let mut clamped = 0;
        let mut cost = 0.0;
        for (i, action) in actions.iter().enumerate() {
            let Action::Continuous(a) = action else {
                return Err(Error::InvalidAction(format!("agent {i}: expected a continuous action")));
            };
            if a.len() != 2 {
                return Err(Error::DimensionMismatch {
                    context: "gather action",
                    expected: 2,
                    got: a.len(),
                });
            }
            if a.iter().any(|x| x.is_nan()) {
                return Err(Error::InvalidAction(format!("agent {i}: NaN action")));
            }
            let scale = self.speed_scales[i];
            for d in 0..2 {
                let u = a[d].clamp(-1.0, 1.0);
                if u != a[d] {
                    clamped += 1;
                }
                cost += u * u;
                self.pos[i][d] += self.vel[i][d] * DT;
                self.vel[i][d] = DAMPING * self.vel[i][d] + u * scale * DT;
                if self.pos[i][d].abs() > ARENA {
                    self.pos[i][d] = self.pos[i][d].clamp(-ARENA, ARENA);
                    self.vel[i][d] = 0.0;
                }
            }
        }
        let distance: f64 = self
            .pos
            .iter()
            .map(|p| (p[0] - self.target[0]).powi(2) + (p[1] - self.target[1]).powi(2))
            .sum();
        self.t += 1;
        let obs = self.observe();
        Ok(StepResult {
            observations: obs.observations,
            state: obs.state,
            reward: -distance - ACTION_COST * cost,
            terminal: self.t >= self.spec.horizon,
            clamped,
        })
    }
}
