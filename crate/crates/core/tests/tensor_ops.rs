use lightformer::tensor::{grad_check, rng, Tape, Tensor, Var};
use lightformer::{Error, Result};
use proptest::prelude::*;

fn random(seed: u64, name: &str, shape: &[usize]) -> Tensor<f64> {
    rng::normal(&mut rng::stream(seed, name), shape.to_vec(), 1.0)
}

fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                c[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    c
}

#[test]
fn matmul_identity_and_annihilator() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::eye(2));
    let b = tape.constant(Tensor::from_f64([2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap());
    assert_eq!(eye.matmul(b).unwrap().value().data(), &[5.0, 6.0, 7.0, 8.0]);

    let z = tape.constant(Tensor::zeros([2, 3]));
    let any = tape.constant(random(1, "any", &[3, 4]));
    let out = z.matmul(any).unwrap().value();
    assert_eq!(out.shape(), &[2, 4]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random(3, "a", &[3, 4]);
    let b = random(3, "b", &[4, 2]);
    let tape = Tape::new();
    let c = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().value();
    let expected = triple_loop(a.data(), b.data(), 3, 4, 2);
    for (x, y) in c.data().iter().zip(&expected) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    let err = a.matmul(b).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] × [2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::from_f64([2], &[0.0, 0.0]).unwrap()).softmax(0).unwrap();
    assert_eq!(s.value().data(), &[0.5, 0.5]);

    let base = tape.constant(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap()).softmax(0).unwrap().value();
    for c in [-50.0, 0.3, 1e3] {
        let shifted = tape
            .constant(Tensor::from_f64([3], &[c + 1.0, c + 2.0, c + 3.0]).unwrap())
            .softmax(0)
            .unwrap()
            .value();
        assert!(base.max_abs_diff(&shifted).unwrap() < 1e-12, "shift {c}");
    }

    // Direct exponential oracle.
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    for (got, ei) in base.data().iter().zip(&e) {
        assert!((got - ei / z).abs() < 1e-15);
    }
}

#[test]
fn softmax_invalid_axis_is_shape_error() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([2, 2]));
    assert!(matches!(x.softmax(2), Err(Error::Shape(_))));
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::<f64>::new();
    let gamma = tape.constant(Tensor::ones([4]));
    let beta = tape.constant(Tensor::zeros([4]));

    let constant = tape.constant(Tensor::full([4], 2.5)).reshape([1, 4]).unwrap();
    let out = constant.layer_norm(gamma, beta, 1e-5).unwrap().value();
    assert!(out.data().iter().all(|&v| v == 0.0));

    let x = random(11, "ln", &[1, 4]);
    let out = tape.constant(x.clone()).layer_norm(gamma, beta, 1e-5).unwrap().value();
    let mean: f64 = out.data().iter().sum::<f64>() / 4.0;
    let var: f64 = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-9);
    assert!((var - 1.0).abs() < 1e-4, "variance {var}");

    // Scalar loop oracle.
    let mu = x.data().iter().sum::<f64>() / 4.0;
    let sigma2 = x.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0;
    for (got, xi) in out.data().iter().zip(x.data()) {
        assert!((got - (xi - mu) / (sigma2 + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_width_mismatch() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([2, 4]));
    let g = tape.constant(Tensor::ones([3]));
    let b = tape.constant(Tensor::zeros([3]));
    assert!(matches!(x.layer_norm(g, b, 1e-5), Err(Error::Shape(_))));
}

#[test]
fn backward_basic_cases() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let grads = tape.backward(x).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0]);

    let tape = Tape::<f64>::new();
    let x = tape.leaf(random(2, "x", &[2, 3, 2]));
    let grads = tape.backward(x.sum()).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));

    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros([2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn gradients_accumulate_over_reuse() {
    let x0 = random(5, "x", &[2, 3]);
    let w = random(5, "w", &[3, 3]);
    let single = |use_twice: bool| {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let wv = tape.constant(w.clone());
        let a = x.matmul(wv).unwrap().softmax(1).unwrap().sum();
        let loss = if use_twice {
            let b = x.mul(x).unwrap().sum();
            a.add(b).unwrap()
        } else {
            a
        };
        tape.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let only_b = {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = x.mul(x).unwrap().sum();
        tape.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let both = single(true);
    let only_a = single(false);
    for i in 0..both.numel() {
        let sum = only_a.data()[i] + only_b.data()[i];
        assert!((both.data()[i] - sum).abs() < 1e-12);
    }
}

#[test]
fn softmax_of_matmul_gradient_matches_finite_differences() {
    let inputs = [random(9, "x", &[3, 4]), random(9, "w", &[4, 5])];
    let report = grad_check(
        |_, v| Ok(v[0].matmul(v[1])?.softmax(1)?.scale(1.3).mul(v[0].matmul(v[1])?)?.sum()),
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn grad_check_linear_and_constant() {
    let x = random(4, "x", &[5]);
    let coeffs = random(4, "c", &[5]);
    let c = coeffs.clone();
    let linear = grad_check(
        move |tape, v| {
            let k = tape.constant(c.clone());
            Ok(v[0].mul(k)?.sum())
        },
        std::slice::from_ref(&x),
        1e-5,
    )
    .unwrap();
    assert!(linear.max_rel_error < 1e-10, "{linear:?}");

    let constant = grad_check(
        |tape, _| Ok(tape.constant(Tensor::scalar(4.0))),
        &[x],
        1e-5,
    )
    .unwrap();
    assert_eq!(constant.max_rel_error, 0.0);
    assert!(constant.passed(1e-12));
}

#[test]
fn grad_check_reports_non_finite_entries() {
    // d/dx sqrt(x) at x = 0 is infinite.
    let report = grad_check(|_, v| Ok(v[0].sqrt().sum()), &[Tensor::from_f64([2], &[4.0, 0.0]).unwrap()], 1e-5);
    let report = report.unwrap();
    assert_eq!(report.non_finite, Some((0, 1)));
    assert!(!report.passed(1e-4));
}

type Op = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>;

/// Weighted sum so that every output entry gets a distinct upstream gradient.
fn weighted<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 1.7) / 3.0).collect();
    Ok(y.mul(tape.constant(Tensor::new(shape, w)?))?.sum())
}

fn check_op(name: &str, f: Op, shapes: &[&[usize]], positive: bool) {
    for seed in 0..3u64 {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = random(seed, &format!("{name}.{i}"), s);
                if positive {
                    t.map(|v| v.abs() + 0.5)
                } else {
                    t
                }
            })
            .collect();
        let report = grad_check(f, &inputs, 1e-5).unwrap();
        assert!(report.passed(1e-4), "{name} seed {seed}: {report:?}");
    }
}

#[test]
fn every_differentiable_op_passes_grad_check() {
    check_op("add", |t, v| weighted(t, v[0].add(v[1])?), &[&[2, 3], &[2, 3]], false);
    check_op("sub", |t, v| weighted(t, v[0].sub(v[1])?), &[&[2, 3], &[2, 3]], false);
    check_op("mul", |t, v| weighted(t, v[0].mul(v[1])?), &[&[2, 3], &[2, 3]], false);
    check_op("add_row", |t, v| weighted(t, v[0].add_row(v[1])?), &[&[3, 4], &[4]], false);
    check_op("scale", |t, v| weighted(t, v[0].scale(-2.5).add_scalar(1.0)), &[&[4]], false);
    check_op("relu", |t, v| weighted(t, v[0].relu()), &[&[3, 3]], false);
    check_op("exp", |t, v| weighted(t, v[0].exp()), &[&[5]], false);
    check_op("log", |t, v| weighted(t, v[0].ln()), &[&[5]], true);
    check_op("sqrt", |t, v| weighted(t, v[0].sqrt()), &[&[5]], true);
    check_op("sigmoid", |t, v| weighted(t, v[0].sigmoid()), &[&[5]], false);
    check_op("acos", |t, v| weighted(t, v[0].scale(0.3).clamp(-0.9, 0.9).acos()), &[&[6]], false);
    check_op("cos", |t, v| weighted(t, v[0].cos()), &[&[6]], false);
    check_op("clamp", |t, v| weighted(t, v[0].clamp(-0.5, 0.5)), &[&[8]], false);
    check_op("reshape", |t, v| weighted(t, v[0].reshape([3, 2])?), &[&[2, 3]], false);
    check_op("transpose", |t, v| weighted(t, v[0].t()?), &[&[2, 3]], false);
    check_op(
        "concat",
        |t, v| weighted(t, t.concat(&[v[0], v[1], v[0]], 1)?),
        &[&[2, 3], &[2, 1]],
        false,
    );
    check_op("slice", |t, v| weighted(t, v[0].slice(1, 1, 2)?), &[&[3, 4, 2]], false);
    check_op("sum_axis", |t, v| weighted(t, v[0].sum_axis(1)?), &[&[2, 3, 2]], false);
    check_op("mean", |_, v| Ok(v[0].mul(v[0])?.mean()), &[&[2, 3]], false);
    check_op("max_axis", |t, v| weighted(t, v[0].max_axis(1)?), &[&[3, 4]], false);
    check_op("softmax", |t, v| weighted(t, v[0].softmax(0)?), &[&[3, 2]], false);
    check_op("log_softmax", |t, v| weighted(t, v[0].log_softmax(1)?), &[&[2, 5]], false);
    check_op(
        "layer_norm",
        |t, v| weighted(t, v[0].layer_norm(v[1], v[2], 1e-5)?),
        &[&[3, 4], &[4], &[4]],
        false,
    );
    check_op("l2_normalize", |t, v| weighted(t, v[0].l2_normalize(1)?), &[&[3, 4]], false);
    check_op(
        "conv2d",
        |t, v| weighted(t, v[0].conv2d(v[1], Some(v[2]), 2, 1)?),
        &[&[2, 5, 6], &[3, 2, 3, 3], &[3]],
        false,
    );
    check_op(
        "bilinear",
        |t, v| {
            let locs = v[1].sigmoid();
            weighted(t, v[0].bilinear_sample(locs)?)
        },
        &[&[2, 3, 5], &[4, 2]],
        false,
    );
}

#[test]
fn conv2d_matches_direct_convolution() {
    let x = random(21, "x", &[2, 5, 4]);
    let w = random(21, "w", &[3, 2, 3, 3]);
    let b = random(21, "b", &[3]);
    let tape = Tape::new();
    let out = tape
        .constant(x.clone())
        .conv2d(tape.constant(w.clone()), Some(tape.constant(b.clone())), 2, 1)
        .unwrap()
        .value();
    assert_eq!(out.shape(), &[3, 3, 2]);
    for co in 0..3 {
        for oy in 0..3 {
            for ox in 0..2 {
                let mut acc = b.data()[co];
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let y = (oy * 2 + ky) as isize - 1;
                            let xx = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&y) && (0..4).contains(&xx) {
                                acc += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                    * x.data()[(ci * 5 + y as usize) * 4 + xx as usize];
                            }
                        }
                    }
                }
                let got = out.data()[(co * 3 + oy) * 2 + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn max_axis_routes_gradient_to_first_maximum() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64([2, 3], &[1.0, 5.0, 5.0, 2.0, 0.0, 2.0]).unwrap());
    let m = x.max_axis(1).unwrap();
    assert_eq!(m.value().data(), &[5.0, 2.0]);
    let g = tape.backward(m.sum()).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn l2_normalize_rejects_zero_vector() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 3]));
    assert!(matches!(x.l2_normalize(1), Err(Error::Numeric(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_agrees_with_oracle(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in 0u64..1000) {
        let a = random(seed, "a", &[m, k]);
        let b = random(seed, "b", &[k, n]);
        let tape = Tape::new();
        let c = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().value();
        let expected = triple_loop(a.data(), b.data(), m, k, n);
        for (x, y) in c.data().iter().zip(&expected) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(rows in 1usize..5, cols in 1usize..7, seed in 0u64..1000, scale in 0.1f64..50.0) {
        let x = random(seed, "s", &[rows, cols]).map(|v| v * scale);
        let tape = Tape::new();
        let s = tape.constant(x).softmax(1).unwrap().value();
        for row in s.data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_and_backward_stay_finite(seed in 0u64..1000) {
        let tape = Tape::new();
        let x = tape.leaf(random(seed, "x", &[3, 4]).map(|v| v * 30.0));
        let g = tape.constant(Tensor::ones([4]));
        let b = tape.constant(Tensor::zeros([4]));
        let y = x.layer_norm(g, b, 1e-5).unwrap().softmax(1).unwrap().l2_normalize(1).unwrap().sum();
        prop_assert!(y.value().is_finite());
        let grads = tape.backward(y).unwrap();
        prop_assert!(grads.get(x).unwrap().is_finite());
    }
}
