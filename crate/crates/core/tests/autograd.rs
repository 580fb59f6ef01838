mod common;

use bikd::autograd::{grad_check, grad_check_detailed, Tape, Tensor};
use bikd::models::build_model;
use common::{check_all, random_tensor, rng, toy_model_config};
use proptest::prelude::*;

#[test]
fn every_primitive_passes_grad_check_on_100_seeded_shapes() {
    for seed in 0..100 {
        for (name, err) in check_all(seed) {
            assert!(err < 1e-5, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn two_layer_relu_net_matches_central_differences() {
    let mut r = rng(9);
    let w2 = random_tensor(&mut r, vec![5, 2]);
    let x = random_tensor(&mut r, vec![3, 4]);
    let w1 = random_tensor(&mut r, vec![4, 5]);
    let check = grad_check_detailed(
        |t, v| {
            let xv = t.constant(x.clone());
            let w2v = t.constant(w2.clone());
            let h = t.matmul(xv, v)?;
            let h = t.relu(h)?;
            let z = t.matmul(h, w2v)?;
            let z = t.mul(z, z)?;
            t.sum(z)
        },
        &w1,
    );
    assert!(check.relu_margin.unwrap() > 1e-4);
    assert!(check.max_rel_error < 1e-6, "{}", check.max_rel_error);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(3);
    let a = random_tensor(&mut r, vec![3, 4]);
    let b = random_tensor(&mut r, vec![4, 2]);
    let grads = |which: u8| {
        let mut t = Tape::new();
        let av = t.leaf(a.clone().with_requires_grad(true));
        let bv = t.constant(b.clone());
        let y = t.matmul(av, bv)?;
        let s = t.softmax(y, 2.0)?;
        let s = t.mul(s, s)?;
        let l1 = t.sum(s)?;
        let s = t.mul(av, av)?;
        let l2 = t.mean(s)?;
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => t.add(l1, l2)?,
        };
        Ok::<_, bikd::Error>(t.backward(loss)?.get(av).unwrap().to_vec())
    };
    let (g1, g2, g12) = (grads(0).unwrap(), grads(1).unwrap(), grads(2).unwrap());
    for i in 0..g12.len() {
        assert!((g12[i] - (g1[i] + g2[i])).abs() <= 1e-12);
    }
}

#[test]
fn forward_and_backward_are_bit_identical_on_rerun() {
    let cfg = toy_model_config();
    let run = || {
        let m = build_model(&cfg, 5).unwrap();
        let mut r = rng(6);
        let x = random_tensor(&mut r, vec![3, 2, 12]);
        let mut t = Tape::new();
        let f = m.forward(&mut t, &x).unwrap();
        let s = t.sum(f.logits).unwrap();
        let g = t.backward(s).unwrap();
        let mut bits: Vec<u64> = t.value(f.logits).data().iter().map(|v| v.to_bits()).collect();
        for p in &f.params {
            bits.extend(g.get(*p).unwrap().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_shape_invariant(shape in prop::collection::vec(1usize..5, 1..4), fill in -5.0f64..5.0) {
        let n: usize = shape.iter().product();
        let t = Tensor::new(shape.clone(), vec![fill; n]).unwrap();
        prop_assert_eq!(t.numel(), n);
        prop_assert!(Tensor::new(shape.clone(), vec![fill; n + 1]).is_err());
        let mut bad = vec![fill; n];
        bad[n - 1] = f64::NAN;
        prop_assert!(Tensor::new(shape, bad).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, vec![m, k]);
        let b = random_tensor(&mut r, vec![k, n]);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.matmul(av, bv).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
                prop_assert!((t.value(c).data()[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones(n in 1usize..20, seed in 0u64..1000) {
        let x = random_tensor(&mut rng(seed), vec![n]);
        prop_assert!(grad_check(|t, v| t.sum(v), &x) < 1e-9);
    }
}
