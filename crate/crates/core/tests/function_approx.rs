mod common;

use common::{batch, categorical, gaussian, jitter, mlp_gradcheck, policy_gradcheck};
use hamdpo::nn::checkpoint::{read_policy, write_policy};
use hamdpo::nn::{Action, MlpParams, PolicyDist, PolicyParams};
use hamdpo::seeding::{stream_rng, Stream};
use hamdpo::trainer::{happo_clip_agent_loss, hamdpo_agent_loss, AgentSamples};
use ndarray::Array2;
use proptest::prelude::*;

const HIDDEN: [usize; 2] = [16, 16];

fn samples(b: &common::Batch, weighted: bool) -> AgentSamples<'_> {
    AgentSamples {
        observations: b.obs.view(),
        actions: &b.actions,
        old_log_probs: &b.old_log_probs,
        m_weight: &b.m,
        weights: weighted.then_some(b.weights.as_slice()),
    }
}

#[test]
fn hamdpo_loss_gradients_match_finite_differences() {
    for (policy, seed) in [(categorical(5, &HIDDEN, 4, 1), 1), (gaussian(5, &HIDDEN, 2, 2), 2)] {
        let b = batch(&policy, 24, seed);
        let current = jitter(&policy, 0.05, seed);
        for weighted in [false, true] {
            let s = samples(&b, weighted);
            let err = policy_gradcheck(&current, |g, p, v| {
                hamdpo_agent_loss(g, 0, p, v, &policy, &s, 1.3).unwrap().loss
            });
            assert!(err < 1e-5, "relative error {err:e}");
        }
    }
}

#[test]
fn clipped_loss_gradients_match_finite_differences() {
    for (policy, seed) in [(categorical(3, &HIDDEN, 3, 3), 3), (gaussian(3, &HIDDEN, 2, 4), 4)] {
        let b = batch(&policy, 24, seed);
        let current = jitter(&policy, 0.05, seed);
        let s = samples(&b, false);
        let ratios = {
            let lp = current.log_probs(b.obs.view(), &b.actions).unwrap();
            lp.iter().zip(&b.old_log_probs).map(|(a, o)| (a - o).exp()).collect::<Vec<_>>()
        };
        let eps = common::smooth_clip_epsilon(&ratios, 1e-2);
        let err = policy_gradcheck(&current, |g, p, v| {
            happo_clip_agent_loss(g, 0, p, v, &s, eps).unwrap().loss
        });
        assert!(err < 1e-5, "relative error {err:e}");
    }
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = stream_rng(6, Stream::Init, 0);
    let critic = MlpParams::init(&[4, 16, 16, 1], 1.0, 1.0, &mut rng).unwrap();
    let x = Array2::from_shape_fn((20, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let y = Array2::from_shape_fn((20, 1), |(i, _)| (i as f64 / 3.0).sin());
    let err = mlp_gradcheck(&critic, |g, p, v| {
        let xv = g.constant(x.clone());
        let out = p.forward_graph(g, v, xv).unwrap();
        let yv = g.constant(y.clone());
        let d = g.sub(out, yv);
        let sq = g.square(d);
        g.mean(sq)
    });
    assert!(err < 1e-5, "relative error {err:e}");
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut total = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        total += f(lo + i as f64 * h);
    }
    total * h
}

#[test]
fn gaussian_density_entropy_and_kl_match_quadrature() {
    let p = PolicyDist::gaussian(vec![0.3], vec![-0.4]);
    let q = PolicyDist::gaussian(vec![-0.5], vec![0.2]);
    let lp = |x: f64| p.log_prob(&Action::Continuous(vec![x])).unwrap();
    let lq = |x: f64| q.log_prob(&Action::Continuous(vec![x])).unwrap();
    let (lo, hi, n) = (-15.0, 15.0, 200_000);
    assert!((trapezoid(|x| lp(x).exp(), lo, hi, n) - 1.0).abs() < 1e-9);
    let entropy = trapezoid(|x| -lp(x).exp() * lp(x), lo, hi, n);
    assert!((entropy - p.entropy()).abs() < 1e-8);
    let kl = trapezoid(|x| lp(x).exp() * (lp(x) - lq(x)), lo, hi, n);
    assert!((kl - p.kl(&q).unwrap()).abs() < 1e-8);
}

#[test]
fn categorical_kl_matches_monte_carlo() {
    let p = PolicyDist::Categorical { logits: vec![0.5, -1.0, 0.2, 1.5] };
    let q = PolicyDist::Categorical { logits: vec![0.0, 0.3, -0.7, 0.1] };
    let mut rng = stream_rng(7, Stream::Oracle, 0);
    let n = 200_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let a = p.sample(&mut rng);
        let x = p.log_prob(&a).unwrap() - q.log_prob(&a).unwrap();
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - p.kl(&q).unwrap()).abs() < 5.0 * se);
}

#[test]
fn categorical_sampling_passes_chi_square() {
    let dist = PolicyDist::Categorical { logits: vec![0.1, 1.2, -0.5, 0.0] };
    let probs = dist.probs();
    let mut rng = stream_rng(8, Stream::Oracle, 0);
    let n = 40_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        match dist.sample(&mut rng) {
            Action::Discrete(a) => counts[a] += 1,
            _ => unreachable!(),
        }
    }
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 0.999 quantile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn gaussian_sampling_moments() {
    let dist = PolicyDist::gaussian(vec![1.0, -2.0], vec![0.0, -1.0]);
    let mut rng = stream_rng(9, Stream::Oracle, 0);
    let n = 100_000;
    let mut s = [0.0; 2];
    let mut s2 = [0.0; 2];
    for _ in 0..n {
        if let Action::Continuous(x) = dist.sample(&mut rng) {
            for d in 0..2 {
                s[d] += x[d];
                s2[d] += x[d] * x[d];
            }
        }
    }
    for (d, (mu, sd)) in [(1.0, 1.0), (-2.0, (-1.0f64).exp())].into_iter().enumerate() {
        let mean = s[d] / n as f64;
        let var = s2[d] / n as f64 - mean * mean;
        assert!((mean - mu).abs() < 5.0 * sd / (n as f64).sqrt());
        assert!((var / (sd * sd) - 1.0).abs() < 0.03);
    }
}

#[test]
fn log_std_is_clamped() {
    let d = PolicyDist::gaussian(vec![0.0], vec![10.0]);
    assert_eq!(d, PolicyDist::gaussian(vec![0.0], vec![hamdpo::nn::LOG_STD_MAX]));
    let d = PolicyDist::gaussian(vec![0.0], vec![-30.0]);
    assert!(d.entropy().is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), discrete in any::<bool>(), width in 1usize..9) {
        let policy: PolicyParams = if discrete {
            categorical(3, &[width], 4, seed)
        } else {
            gaussian(3, &[width, width], 2, seed)
        };
        let mut buf = Vec::new();
        write_policy(&mut buf, &policy).unwrap();
        let back = read_policy(&mut buf.as_slice()).unwrap();
        let a: Vec<u64> = policy.flatten().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.flatten().iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back, policy);
    }

    #[test]
    fn categorical_probabilities_normalize(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let d = PolicyDist::Categorical { logits };
        let p = d.probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.entropy() >= -1e-12);
        prop_assert!(d.kl(&d).unwrap().abs() < 1e-12);
    }
}
