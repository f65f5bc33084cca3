use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::env::{ActionSpace, Env, EnvSpec, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_mlp, read_policy, read_u64, write_mlp, write_policy, write_u64};
use crate::nn::{MlpParams, PolicyParams};
use crate::rollout::{collect, compute_gae, critic_update, normalize_advantages, RolloutBatch};
use crate::seeding::{stream_rng, Stream};
use crate::trainer::loss::{accumulate_m, update_agent, AgentUpdateReport, Objective, UpdateOptions};
use crate::trainer::{draw_permutation, stepsize, Algorithm, TrainerConfig};

const CHECKPOINT_MAGIC: &[u8; 8] = b"HMDPCKPT";
const CHECKPOINT_VERSION: u64 = 1;

/// Everything needed to continue training. Random streams are derived from
/// the run seed and the iteration index, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub policies: Vec<PolicyParams>,
    pub critic: MlpParams,
    pub seed: u64,
    pub iterations_done: usize,
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Environment steps collected so far, this iteration included.
    pub env_steps: u64,
    pub mean_return: f64,
    /// Mean `KL(new || old)` per agent, indexed by agent.
    pub agent_kl: Vec<f64>,
    /// Mean of the agents' final losses.
    pub policy_loss: f64,
    pub critic_loss: f64,
    /// Mean policy entropy over agents and batch observations, before the update.
    pub entropy: f64,
    pub stepsize: f64,
    pub permutation: Vec<usize>,
    pub grad_clips: usize,
    pub clamped_actions: usize,
    pub reports: Vec<AgentUpdateReport>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Fresh policies (hidden gain 1, head gain 0.01) and critic, all drawn
/// from the run seed.
pub fn init_state(spec: &EnvSpec, cfg: &TrainerConfig) -> Result<TrainerState> {
    let mut policies = Vec::with_capacity(spec.n_agents);
    for (i, space) in spec.action_spaces.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, Stream::Init, i as u64);
        let sizes = layer_sizes(spec.obs_dims[i], &cfg.policy_hidden, space.width());
        let body = MlpParams::init(&sizes, 1.0, 0.01, &mut rng)?;
        policies.push(match space {
            ActionSpace::Discrete(_) => PolicyParams::categorical(body),
            ActionSpace::Continuous { .. } => PolicyParams::gaussian(body, cfg.initial_log_std),
        });
    }
    let mut rng = stream_rng(cfg.seed, Stream::Init, spec.n_agents as u64);
    let critic = MlpParams::init(&layer_sizes(spec.state_dim, &cfg.critic_hidden, 1), 1.0, 1.0, &mut rng)?;
    Ok(TrainerState {
        policies,
        critic,
        seed: cfg.seed,
        iterations_done: 0,
        env_steps: 0,
    })
}

struct Prepared {
    batch: RolloutBatch,
    critic_loss: f64,
    entropy: f64,
}

fn mean_entropy(policies: &[PolicyParams], batch: &RolloutBatch) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, p) in policies.iter().enumerate() {
        let dists = p.forward_batch(batch.observations[i].view())?;
        total += dists.iter().map(|d| d.entropy()).sum::<f64>() / dists.len() as f64;
    }
    Ok(total / policies.len() as f64)
}

/// Collects the batch, estimates advantages with the collection-time
/// critic, fits the critic to the return targets and sets `M = A`.
fn prepare(state: &mut TrainerState, env: &Env, cfg: &TrainerConfig, k: usize) -> Result<Prepared> {
    let e = cfg.episodes_for(env.spec().horizon);
    let mut batch = collect(env, &state.policies, e, cfg.seed, (k * e) as u64)?;
    let entropy = mean_entropy(&state.policies, &batch)?;
    compute_gae(&mut batch, &state.critic, &cfg.gae)?;
    let mut rng = stream_rng(cfg.seed, Stream::Critic, k as u64);
    let critic_loss = critic_update(
        &mut state.critic,
        batch.states.view(),
        &batch.returns,
        cfg.critic_epochs,
        cfg.critic_minibatch,
        cfg.critic_learning_rate,
        &mut rng,
    )?;
    if cfg.advantage_normalization {
        normalize_advantages(&mut batch);
    } else {
        batch.reset_m();
    }
    Ok(Prepared {
        batch,
        critic_loss,
        entropy,
    })
}

fn check_iteration(state: &TrainerState, env: &Env, cfg: &TrainerConfig, k: usize) -> Result<()> {
    cfg.validate()?;
    if state.policies.len() != env.spec().n_agents {
        return Err(Error::DimensionMismatch {
            context: "policies per agent",
            expected: env.spec().n_agents,
            got: state.policies.len(),
        });
    }
    if k != state.iterations_done {
        return Err(Error::InvalidArgument(format!(
            "state has completed {} iterations; cannot run iteration {k}",
            state.iterations_done
        )));
    }
    Ok(())
}

fn finish(
    state: &mut TrainerState,
    prepared: Prepared,
    k: usize,
    t_k: f64,
    permutation: Vec<usize>,
    mut reports: Vec<AgentUpdateReport>,
) -> Result<IterationMetrics> {
    state.iterations_done += 1;
    state.env_steps += prepared.batch.len() as u64;
    reports.sort_by_key(|r| r.agent);
    let policy_loss = reports.iter().map(|r| r.loss).sum::<f64>() / reports.len().max(1) as f64;
    let metrics = IterationMetrics {
        iteration: k,
        env_steps: state.env_steps,
        mean_return: prepared.batch.mean_episode_return(),
        agent_kl: reports.iter().map(|r| r.mean_kl).collect(),
        policy_loss,
        critic_loss: prepared.critic_loss,
        entropy: prepared.entropy,
        stepsize: t_k,
        permutation,
        grad_clips: reports.iter().map(|r| r.grad_clips).sum(),
        clamped_actions: prepared.batch.clamped_actions,
        reports,
    };
    for (what, x) in [
        ("mean return", metrics.mean_return),
        ("policy loss", metrics.policy_loss),
        ("critic loss", metrics.critic_loss),
        ("entropy", metrics.entropy),
    ] {
        if !x.is_finite() {
            return Err(Error::NonFinite { what });
        }
    }
    Ok(metrics)
}

/// One iteration of the sequential scheme: collect, critic, `M = A`, draw a
/// permutation, then for each agent in order run `g` SGD steps on its loss
/// and fold its ratio into `M`. `cfg.algorithm` selects the mirror descent
/// loss or the clipped baseline loss.
pub fn hamdpo_iteration(
    state: &mut TrainerState,
    env: &Env,
    cfg: &TrainerConfig,
    k: usize,
) -> Result<IterationMetrics> {
    check_iteration(state, env, cfg, k)?;
    let t_k = stepsize(k, cfg)?;
    let objective = match cfg.algorithm {
        Algorithm::HappoClip => Objective::HappoClip {
            epsilon: cfg.clip_epsilon,
        },
        _ => Objective::Hamdpo {
            inv_stepsize: 1.0 / t_k,
        },
    };
    let mut prepared = prepare(state, env, cfg, k)?;
    let permutation = draw_permutation(
        state.policies.len(),
        &mut stream_rng(cfg.seed, Stream::Permutation, k as u64),
    );
    let opts = UpdateOptions {
        sgd_steps: cfg.sgd_steps,
        learning_rate: cfg.learning_rate,
        gradient_mask: None,
    };
    let mut reports = Vec::with_capacity(permutation.len());
    for &agent in &permutation {
        let samples = prepared.batch.agent_samples(agent);
        let (new, report) = update_agent(agent, &state.policies[agent], &samples, objective, &opts)?;
        accumulate_m(&mut prepared.batch, agent, &new)?;
        state.policies[agent] = new;
        reports.push(report);
    }
    finish(state, prepared, k, t_k, permutation, reports)
}

/// Independent learners: each agent takes one vanilla policy gradient step
/// on its own ratio objective with the shared advantage; `M` is never
/// accumulated.
pub fn independent_pg_iteration(
    state: &mut TrainerState,
    env: &Env,
    cfg: &TrainerConfig,
    k: usize,
) -> Result<IterationMetrics> {
    check_iteration(state, env, cfg, k)?;
    let t_k = stepsize(k, cfg)?;
    let prepared = prepare(state, env, cfg, k)?;
    let opts = UpdateOptions {
        sgd_steps: 1,
        learning_rate: cfg.learning_rate,
        gradient_mask: None,
    };
    let objective = Objective::Hamdpo { inv_stepsize: 0.0 };
    let order: Vec<usize> = (0..state.policies.len()).collect();
    let mut reports = Vec::with_capacity(order.len());
    for &agent in &order {
        let samples = prepared.batch.agent_samples(agent);
        let (new, report) = update_agent(agent, &state.policies[agent], &samples, objective, &opts)?;
        state.policies[agent] = new;
        reports.push(report);
    }
    finish(state, prepared, k, t_k, order, reports)
}

/// Dispatches on `cfg.algorithm`.
pub fn iteration(
    state: &mut TrainerState,
    env: &Env,
    cfg: &TrainerConfig,
    k: usize,
) -> Result<IterationMetrics> {
    match cfg.algorithm {
        Algorithm::Hamdpo | Algorithm::HappoClip => hamdpo_iteration(state, env, cfg, k),
        Algorithm::IndependentPg => independent_pg_iteration(state, env, cfg, k),
    }
}

fn ck(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

impl TrainerState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC).map_err(ck)?;
        write_u64(&mut w, CHECKPOINT_VERSION)?;
        write_u64(&mut w, self.seed)?;
        write_u64(&mut w, self.iterations_done as u64)?;
        write_u64(&mut w, self.env_steps)?;
        write_u64(&mut w, self.policies.len() as u64)?;
        for p in &self.policies {
            write_policy(&mut w, p)?;
        }
        write_mlp(&mut w, &self.critic)?;
        w.flush().map_err(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        std::io::Read::read_exact(&mut r, &mut magic).map_err(ck)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a trainer checkpoint".into()));
        }
        let version = read_u64(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = read_u64(&mut r)?;
        let iterations_done = read_u64(&mut r)? as usize;
        let env_steps = read_u64(&mut r)?;
        let n = read_u64(&mut r)?;
        if n == 0 || n > 1024 {
            return Err(Error::Checkpoint(format!("implausible agent count {n}")));
        }
        let policies = (0..n).map(|_| read_policy(&mut r)).collect::<Result<Vec<_>>>()?;
        let critic = read_mlp(&mut r)?;
        Ok(Self {
            policies,
            critic,
            seed,
            iterations_done,
            env_steps,
        })
    }
}
