use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

type Build = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn eval(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

/// Central differences (h = 1e-3) against the tape's analytic gradient.
fn grad_check(inputs: &[Tensor<f64>], build: &Build, tol: f64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    let h = 1e-3;
    for (vi, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[vi].numel()]);
        for e in 0..inputs[vi].numel() {
            let mut plus = inputs.to_vec();
            plus[vi].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[vi].data_mut()[e] -= h;
            let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            let a = analytic[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            assert!(
                rel < tol,
                "input {vi} elem {e}: analytic {a} vs fd {fd} (rel {rel})"
            );
        }
    }
}

fn weighted_sum(tape: &mut Tape<'_, f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.value(x).shape(), &mut rng);
    let w = tape.constant(w);
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape: Tape<f64> = Tape::new();
    let i2 = tape.leaf(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap(), false);
    let out = tape.matmul(i2, i2).unwrap();
    assert_eq!(tape.value(out).data(), &[1., 0., 0., 1.]);

    let a = tape.leaf(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap(), false);
    let b = tape.leaf(Tensor::from_f64(&[2, 1], &[1., 1.]).unwrap(), false);
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 1]);
    assert_eq!(tape.value(out).data(), &[3., 7.]);
}

#[test]
fn matmul_shape_mismatch_is_an_error() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let b = tape.leaf(Tensor::zeros(&[2, 3]), false);
    assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&[5, 7], &mut rng), random(&[7, 3], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 2)
        },
        1e-4,
    );
    let inputs = [random(&[4, 6], &mut rng), random(&[3, 6], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let y = t.matmul_nt(v[0], v[1]).unwrap();
            weighted_sum(t, y, 3)
        },
        1e-4,
    );
}

#[test]
fn softmax_uniform_and_stable() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3]), false);
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.leaf(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap(), false);
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && d[1].abs() < 1e-9);
    assert!(matches!(tape.softmax(x, 1), Err(Error::Contract(_))));
}

#[test]
fn softmax_rows_sum_to_one_on_any_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape: Tape<f32> = Tape::new();
    let x = tape.leaf(random(&[3, 4, 5], &mut rng).cast(), false);
    for axis in 0..3 {
        let y = tape.softmax(x, axis).unwrap();
        let yv = tape.value(y);
        let (outer, len, inner) = match axis {
            0 => (1, 3, 20),
            1 => (3, 4, 5),
            _ => (12, 5, 1),
        };
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len)
                    .map(|j| yv.data()[o * len * inner + j * inner + i] as f64)
                    .sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert!(yv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn softmax_and_log_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&[3, 4], &mut rng)];
    for axis in 0..2 {
        grad_check(
            &inputs,
            &move |t, v| {
                let y = t.softmax(v[0], axis).unwrap();
                weighted_sum(t, y, 6)
            },
            1e-4,
        );
        grad_check(
            &inputs,
            &move |t, v| {
                let y = t.log_softmax(v[0], axis).unwrap();
                weighted_sum(t, y, 7)
            },
            1e-4,
        );
    }
}

#[test]
fn layer_norm_closed_forms() {
    let mut tape: Tape<f64> = Tape::new();
    let g = tape.leaf(Tensor::full(&[2], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[2]), false);
    let x = tape.leaf(Tensor::from_f64(&[1, 2], &[1.0, 3.0]).unwrap(), false);
    let y = tape.layer_norm(x, g, b).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-4 && (d[1] - 1.0).abs() < 1e-4);

    let g = tape.leaf(Tensor::full(&[4], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[4]), false);
    let x = tape.leaf(Tensor::full(&[1, 4], 7.5), false);
    let y = tape.layer_norm(x, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [
        random(&[3, 5], &mut rng),
        random(&[5], &mut rng),
        random(&[5], &mut rng),
    ];
    grad_check(
        &inputs,
        &|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y, 9)
        },
        1e-4,
    );
}

#[test]
fn gelu_values_and_gradient() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::from_f64(&[3], &[0.0, 10.0, -10.0]).unwrap(), false);
    let y = tape.gelu(x);
    let d = tape.value(y).data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 10.0).abs() < 1e-9);
    assert!(d[2].abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = [random(&[2, 6], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let y = t.gelu(v[0]);
            weighted_sum(t, y, 11)
        },
        1e-4,
    );
}

#[test]
fn cross_entropy_closed_forms() {
    let mut tape: Tape<f64> = Tape::new();
    let p = tape.leaf(Tensor::from_f64(&[1, 3], &[0.0, 1.0, 0.0]).unwrap(), false);
    let l = tape.cross_entropy(p, Target::Index(vec![Some(1)])).unwrap();
    assert!(tape.value(l).item().abs() < 1e-11);

    let p = tape.leaf(Tensor::full(&[2, 4], 0.25), false);
    let l = tape
        .cross_entropy(p, Target::Index(vec![Some(0), Some(3)]))
        .unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-9);

    assert!(matches!(
        tape.cross_entropy(p, Target::Index(vec![Some(4), None])),
        Err(Error::Index { .. })
    ));
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = [random(&[3, 5], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let p = t.softmax(v[0], 1).unwrap();
            t.cross_entropy(p, Target::Index(vec![Some(1), None, Some(4)]))
                .unwrap()
        },
        1e-4,
    );
    let dist = random(&[3, 5], &mut rng);
    let dist = Tensor::new(vec![3, 5], dist.data().iter().map(|x| x.abs()).collect()).unwrap();
    grad_check(
        &inputs,
        &move |t, v| {
            let p = t.softmax(v[0], 1).unwrap();
            t.cross_entropy(p, Target::Dist(dist.clone())).unwrap()
        },
        1e-4,
    );
    for smoothing in [0.0, 0.1] {
        grad_check(
            &inputs,
            &move |t, v| {
                t.cross_entropy_logits(v[0], &[Some(2), Some(0), None], smoothing)
                    .unwrap()
            },
            1e-4,
        );
    }
}

#[test]
fn cross_entropy_logits_matches_distribution_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[4, 6], &mut rng);
    let mut tape: Tape<f64> = Tape::new();
    let xv = tape.leaf(x, false);
    let a = tape
        .cross_entropy_logits(xv, &[Some(1), Some(2), Some(3), Some(5)], 0.0)
        .unwrap();
    let p = tape.softmax(xv, 1).unwrap();
    let b = tape
        .cross_entropy(p, Target::Index(vec![Some(1), Some(2), Some(3), Some(5)]))
        .unwrap();
    assert!((tape.value(a).item() - tape.value(b).item()).abs() < 1e-9);
}

#[test]
fn elementwise_shape_and_lookup_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inputs = [
        random(&[3, 4], &mut rng),
        random(&[3, 4], &mut rng),
        random(&[4], &mut rng),
    ];
    grad_check(
        &inputs,
        &|t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let m = t.mul(a, v[1]).unwrap();
            let s = t.scale(m, -1.7);
            let b = t.add_bias(s, v[2]).unwrap();
            let tr = t.transpose(b).unwrap();
            let r = t.reshape(tr, &[2, 6]).unwrap();
            weighted_sum(t, r, 15)
        },
        1e-4,
    );
    let inputs = [random(&[5, 3], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let e = t.gather(v[0], &[4, 0, 4, 2]).unwrap();
            weighted_sum(t, e, 16)
        },
        1e-4,
    );
}

#[test]
fn gather_out_of_range_is_index_error() {
    let mut tape: Tape<f32> = Tape::new();
    let t = tape.leaf(Tensor::zeros(&[3, 2]), false);
    assert!(matches!(
        tape.gather(t, &[3]),
        Err(Error::Index {
            index: 3,
            size: 3,
            ..
        })
    ));
}

#[test]
fn dropout_is_seeded_and_gradient_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&[4, 8], &mut rng);
    let run = |seed: u64| {
        let mut tape: Tape<f64> = Tape::new();
        let v = tape.leaf(x.clone(), false);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y = tape.dropout(v, 0.5, &mut r);
        tape.value(y).clone()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
    let mut tape: Tape<f64> = Tape::new();
    let v = tape.leaf(x.clone(), false);
    assert_eq!(tape.dropout(v, 0.0, &mut rng), v);

    grad_check(
        &[x],
        &|t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            let y = t.dropout(v[0], 0.3, &mut r);
            weighted_sum(t, y, 18)
        },
        1e-4,
    );
}

fn attn_build(spec: AttnSpec) -> impl Fn(&mut Tape<'_, f64>, &[Var]) -> Var {
    move |t, v| {
        let y = t.attention(v[0], v[1], v[2], spec.clone()).unwrap();
        weighted_sum(t, y, 19)
    }
}

#[test]
fn attention_gradients_with_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (batch, q_len, k_len, d) = (2, 3, 4, 6);
    let inputs = [
        random(&[batch * q_len, d], &mut rng),
        random(&[batch * k_len, d], &mut rng),
        random(&[batch * k_len, d], &mut rng),
    ];
    let spec = AttnSpec {
        batch,
        q_len,
        k_len,
        heads: 2,
        scale: 1.0 / (d as f64).sqrt(),
        causal: false,
        key_valid: Some(vec![true, true, true, false, true, true, false, false]),
    };
    grad_check(&inputs, &attn_build(spec.clone()), 1e-4);
    let causal = AttnSpec {
        causal: true,
        q_len: 4,
        key_valid: None,
        ..spec
    };
    let inputs = [
        random(&[batch * 4, d], &mut rng),
        random(&[batch * k_len, d], &mut rng),
        random(&[batch * k_len, d], &mut rng),
    ];
    grad_check(&inputs, &attn_build(causal), 1e-4);
}

#[test]
fn attention_rows_are_distributions_over_valid_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut tape: Tape<f32> = Tape::new();
    let q = tape.leaf(random(&[3, 4], &mut rng).cast(), false);
    let k = tape.leaf(random(&[5, 4], &mut rng).cast(), false);
    let valid = vec![true, false, true, true, false];
    let spec = AttnSpec {
        batch: 1,
        q_len: 3,
        k_len: 5,
        heads: 2,
        scale: 0.5,
        causal: false,
        key_valid: Some(valid.clone()),
    };
    let out = tape.attention(q, k, k, spec).unwrap();
    let probs = tape.attention_probs(out).unwrap();
    for row in probs.chunks(5) {
        let s: f64 = row.iter().map(|p| *p as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        for (p, ok) in row.iter().zip(&valid) {
            if !ok {
                assert_eq!(*p, 0.0);
            }
        }
    }
}

#[test]
fn backward_contracts() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap(), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));

    let s = tape.leaf(Tensor::scalar(4.0), true);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(s).unwrap(), &[1.0]);
    assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    tape.reset();
    tape.backward(s).unwrap();

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap(), true);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn shared_use_accumulates_both_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inputs = [random(&[3, 3], &mut rng)];
    grad_check(
        &inputs,
        &|t, v| {
            let a = t.matmul(v[0], v[0]).unwrap();
            let b = t.gelu(v[0]);
            let c = t.add(a, b).unwrap();
            weighted_sum(t, c, 23)
        },
        1e-4,
    );
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut tape: Tape<f32> = Tape::new();
        let a = tape.leaf(random(&[6, 8], &mut rng).cast(), false);
        let b = tape.leaf(random(&[8, 8], &mut rng).cast(), false);
        let y = tape.matmul(a, b).unwrap();
        let y = tape.gelu(y);
        let y = tape.softmax(y, 1).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.all_finite());
    assert_eq!(
        a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn joint_nll_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inputs = [random(&[3, 4], &mut rng), random(&[3, 3], &mut rng)];
    let mask: &'static Tensor<f64> = Box::leak(Box::new(
        Tensor::from_f64(
            &[4, 3],
            &[1., 0.1, 0.1, 0.1, 1., 1., 1., 0.1, 0.1, 1., 1., 1.],
        )
        .unwrap(),
    ));
    grad_check(
        &inputs,
        &move |t, v| {
            let p = t.softmax(v[0], 1).unwrap();
            let q = t.softmax(v[1], 1).unwrap();
            t.joint_nll(p, q, mask, &[Some((0, 0)), None, Some((2, 1))])
                .unwrap()
        },
        1e-4,
    );
}
