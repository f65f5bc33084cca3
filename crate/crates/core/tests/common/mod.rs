#![allow(dead_code)]

use hamdpo::nn::{AgentActions, Graph, MlpParams, PolicyParams, PolicyVars, Var};
use hamdpo::seeding::{stream_rng, Stream};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Step of the five-point difference stencil. Its truncation error is
/// O(h^4) and its roundoff O(eps / h), so small gradients stay resolvable.
pub const FD_STEP: f64 = 1e-3;

/// Guards the relative error against `0 / 0` for parameters with no
/// influence on the loss.
pub const REL_FLOOR: f64 = 1e-12;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

pub fn categorical(obs_dim: usize, hidden: &[usize], k: usize, seed: u64) -> PolicyParams {
    let mut rng = stream_rng(seed, Stream::Init, 0);
    PolicyParams::categorical(MlpParams::init(&sizes(obs_dim, hidden, k), 1.0, 1.0, &mut rng).unwrap())
}

pub fn gaussian(obs_dim: usize, hidden: &[usize], dim: usize, seed: u64) -> PolicyParams {
    let mut rng = stream_rng(seed, Stream::Init, 0);
    PolicyParams::gaussian(
        MlpParams::init(&sizes(obs_dim, hidden, dim), 1.0, 1.0, &mut rng).unwrap(),
        -0.3,
    )
}

/// Copy of `p` with every parameter moved by `scale * N(0, 1)`.
pub fn jitter(p: &PolicyParams, scale: f64, seed: u64) -> PolicyParams {
    let mut rng = stream_rng(seed, Stream::Oracle, 77);
    let flat: Vec<f64> = p
        .flatten()
        .into_iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + scale * z
        })
        .collect();
    let mut out = p.clone();
    out.assign(&flat).unwrap();
    out
}

pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: AgentActions,
    pub old_log_probs: Vec<f64>,
    pub m: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Observations `N(0, 1)`, actions sampled from `snapshot`, `M ~ N(0, 1)`
/// and random normalized sample weights.
pub fn batch(snapshot: &PolicyParams, n: usize, seed: u64) -> Batch {
    let mut rng = stream_rng(seed, Stream::Oracle, 5);
    let d = snapshot.obs_dim();
    let obs = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
    let dists = snapshot.forward_batch(obs.view()).unwrap();
    let sampled: Vec<_> = dists.iter().map(|dist| dist.sample(&mut rng)).collect();
    let actions = match &sampled[0] {
        hamdpo::nn::Action::Discrete(_) => AgentActions::Discrete(
            sampled
                .iter()
                .map(|a| match a {
                    hamdpo::nn::Action::Discrete(k) => *k,
                    _ => unreachable!(),
                })
                .collect(),
        ),
        hamdpo::nn::Action::Continuous(v) => {
            let w = v.len();
            AgentActions::Continuous(Array2::from_shape_fn((n, w), |(i, j)| match &sampled[i] {
                hamdpo::nn::Action::Continuous(v) => v[j],
                _ => unreachable!(),
            }))
        }
    };
    let old_log_probs = snapshot.log_probs(obs.view(), &actions).unwrap();
    let m = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / total).collect();
    Batch {
        obs,
        actions,
        old_log_probs,
        m,
        weights,
    }
}

/// Largest relative error between the tape gradient of `loss` at `params`
/// and central finite differences, over every parameter.
pub fn policy_gradcheck(
    params: &PolicyParams,
    loss: impl Fn(&mut Graph, &PolicyParams, &PolicyVars) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let root = loss(&mut g, params, &vars);
    let analytic = g.backward(root).flat();
    let eval = |flat: &[f64]| {
        let mut p = params.clone();
        p.assign(flat).unwrap();
        let mut g = Graph::new();
        let vars = p.register(&mut g);
        let root = loss(&mut g, &p, &vars);
        g.scalar(root)
    };
    let base = params.flatten();
    assert_eq!(analytic.len(), base.len());
    fd_max_error(&base, analytic.as_slice(), eval)
}

pub fn mlp_gradcheck(params: &MlpParams, loss: impl Fn(&mut Graph, &MlpParams, &hamdpo::nn::MlpVars) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let root = loss(&mut g, params, &vars);
    let analytic = g.backward(root).flat();
    let eval = |flat: &[f64]| {
        let mut p = params.clone();
        p.assign(flat).unwrap();
        let mut g = Graph::new();
        let vars = p.register(&mut g);
        let root = loss(&mut g, &p, &vars);
        g.scalar(root)
    };
    let base = params.flatten();
    assert_eq!(analytic.len(), base.len());
    fd_max_error(&base, analytic.as_slice(), eval)
}

fn fd_max_error(base: &[f64], analytic: &[f64], eval: impl Fn(&[f64]) -> f64) -> f64 {
    let mut theta = base.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..theta.len() {
        let x = theta[i];
        let mut at = |d: f64| {
            theta[i] = x + d;
            let v = eval(&theta);
            theta[i] = x;
            v
        };
        let h = FD_STEP;
        let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// First clip range whose kinks `1 +- eps` sit at least `margin` away from
/// every ratio, so the clipped loss is smooth under the stencil.
pub fn smooth_clip_epsilon(ratios: &[f64], margin: f64) -> f64 {
    [0.2, 0.15, 0.25, 0.1, 0.3, 0.35]
        .into_iter()
        .find(|eps| ratios.iter().all(|r| ((r - 1.0).abs() - eps).abs() > margin))
        .expect("no clip range clear of the ratios")
}
