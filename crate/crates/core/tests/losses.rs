mod common;

use bikd::autograd::{grad_check, Tape, Tensor};
use bikd::losses::{
    bregman_divergence, cross_entropy, divergence, feature_difference_values, joint_loss, softmax_temperature,
    DivergenceKind, FeatureLossWeights, JointLossConfig, ProbDist, Role,
};
use bikd::models::build_model;
use common::{objective_case, random_dist, random_windows, rng, toy_model_config};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn divergences_are_nonnegative_and_vanish_on_equal_inputs() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let n = r.random_range(2..6);
        let (p, q) = (random_dist(&mut r, n), random_dist(&mut r, n));
        for kind in DivergenceKind::ALL {
            assert!(bregman_divergence(&p, &q, kind).unwrap() >= 0.0, "{kind}");
            assert!(bregman_divergence(&p, &p, kind).unwrap().abs() <= 1e-9, "{kind}");
        }
    }
}

#[test]
fn mse_is_symmetric_and_the_others_are_not() {
    let mut r = rng(2);
    let mut gap = [0.0_f64; 3];
    for _ in 0..1000 {
        let (p, q) = (random_dist(&mut r, 2), random_dist(&mut r, 2));
        for (i, kind) in DivergenceKind::ALL.into_iter().enumerate() {
            let d = (bregman_divergence(&p, &q, kind).unwrap() - bregman_divergence(&q, &p, kind).unwrap()).abs();
            gap[i] = gap[i].max(d);
        }
        assert_eq!(
            bregman_divergence(&p, &q, DivergenceKind::Mse).unwrap(),
            bregman_divergence(&q, &p, DivergenceKind::Mse).unwrap()
        );
    }
    assert_eq!(gap[0], 0.0);
    assert!(gap[1] > 1e-3 && gap[2] > 1e-3, "{gap:?}");
}

#[test]
fn every_divergence_passes_grad_check() {
    let mut r = rng(3);
    for _ in 0..20 {
        let rows: Vec<f64> = (0..2).flat_map(|_| random_dist(&mut r, 3).probs().to_vec()).collect();
        let target = Tensor::new(vec![2, 3], rows).unwrap();
        let logits = Tensor::new(vec![2, 3], (0..6).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        for kind in DivergenceKind::ALL {
            let err = grad_check(
                |t, z| {
                    let q = t.softmax(z, 2.0)?;
                    let p = t.constant(target.clone());
                    divergence(t, p, q, kind)
                },
                &logits,
            );
            assert!(err < 1e-5, "{kind}: {err:e}");
        }
    }
}

#[test]
fn entropy_grows_with_temperature() {
    let mut r = rng(4);
    for _ in 0..100 {
        let n = r.random_range(2..6);
        let z: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let mut last = f64::NEG_INFINITY;
        let arg = softmax_temperature(&z, 1.0).unwrap().argmax();
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let p = softmax_temperature(&z, t).unwrap();
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(p.entropy() >= last - 1e-15);
            assert_eq!(p.argmax(), arg);
            last = p.entropy();
        }
    }
}

#[test]
fn joint_loss_is_the_sum_of_its_terms() {
    let cfg = toy_model_config();
    let own = build_model(&cfg, 1).unwrap();
    let other = build_model(&cfg, 2).unwrap();
    let mut r = rng(5);
    let (x, labels) = random_windows(&mut r, &cfg, 6);
    let taps = own.tap_names();
    for kind in DivergenceKind::ALL {
        let jl = JointLossConfig {
            temperature: 4.0,
            divergence: kind,
            feature_weights: FeatureLossWeights::uniform(&taps),
            dif_weight: 0.7,
            div_weight: 1.3,
            temperature_squared: false,
        };
        let mut t = Tape::new();
        let of = other.forward(&mut t, &x).unwrap().detach(&t);
        let mut tape = Tape::new();
        let f = own.forward(&mut tape, &x).unwrap();
        let total = joint_loss(&mut tape, Role::Cus, &f, &of, &labels, &jl).unwrap();
        let total = tape.value(total.total).item().unwrap();

        let own_logits = own.logits(&x).unwrap();
        let rows = |l: &Tensor, temp: f64| -> Vec<ProbDist> {
            l.data().chunks(2).map(|z| softmax_temperature(z, temp).unwrap()).collect()
        };
        let ce = cross_entropy(&rows(&own_logits, 1.0), &labels).unwrap();
        let own_taps: Vec<(String, Tensor)> = f.taps.iter().map(|(n, v)| (n.clone(), tape.value(*v).clone())).collect();
        let dif = feature_difference_values(&own_taps, &of.taps, &jl.feature_weights).unwrap() / 6.0;
        let (pt, qt) = (rows(&of.logits, 4.0), rows(&own_logits, 4.0));
        let div = pt.iter().zip(&qt).map(|(p, q)| bregman_divergence(p, q, kind).unwrap()).sum::<f64>() / 6.0;
        let want = ce + 0.7 * dif + 1.3 * div;
        assert!((total - want).abs() <= 1e-12, "{kind}: {total} vs {want}");
    }
}

#[test]
fn joint_objectives_pass_grad_check_on_toy_models() {
    for i in 0..6 {
        let (.., role, jl, check) = objective_case(i);
        assert!(check.max_rel_error < 1e-5, "case {i} {role} {}: {:e}", jl.divergence, check.max_rel_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one(z in prop::collection::vec(-30.0f64..30.0, 1..8), t in 0.1f64..10.0) {
        let p = softmax_temperature(&z, t).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn divergence_axioms(seed in 0u64..100_000, n in 2usize..5) {
        let mut r = rng(seed);
        let (p, q) = (random_dist(&mut r, n), random_dist(&mut r, n));
        for kind in DivergenceKind::ALL {
            prop_assert!(bregman_divergence(&p, &q, kind).unwrap() >= 0.0);
            prop_assert!(bregman_divergence(&q, &q, kind).unwrap().abs() <= 1e-9);
        }
    }
}
