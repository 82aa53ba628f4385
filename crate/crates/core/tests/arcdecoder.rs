use lightformer::arcdecoder::{arcface_logits, argmax, class_cosines, decode, ArcConfig, CentreBank, COSINE_LIMIT};
use lightformer::tensor::{grad_check, rng, BoundParams, ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn config(w: usize, margin: f64, scale: f64) -> ArcConfig {
    ArcConfig {
        num_classes: 2,
        centres_per_class: w,
        margin,
        scale,
    }
}

/// Logits computed by enumerating every centre with plain arithmetic.
fn enumeration_oracle(e: &[f64], centres: &[f64], cfg: &ArcConfig, target: Option<usize>) -> Vec<f64> {
    let d = e.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ne = norm(e);
    (0..cfg.num_classes)
        .map(|c| {
            let mut best = f64::NEG_INFINITY;
            for k in 0..cfg.centres_per_class {
                let centre = &centres[(c * cfg.centres_per_class + k) * d..][..d];
                let dot: f64 = e.iter().zip(centre).map(|(a, b)| a * b).sum();
                best = best.max(dot / (ne * norm(centre)));
            }
            let cos = best.clamp(-COSINE_LIMIT, COSINE_LIMIT);
            if target == Some(c) && cfg.margin > 0.0 {
                cfg.scale * (cos.acos() + cfg.margin).min(std::f64::consts::PI).cos()
            } else {
                cfg.scale * cos
            }
        })
        .collect()
}

fn run(e: &[f64], centres: &Tensor<f64>, cfg: ArcConfig, target: Option<usize>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let tape = Tape::new();
    let mut store = ParamStore::new();
    store.insert("dec.centres", centres.clone()).unwrap();
    let bound = store.bind(&tape);
    let bank = CentreBank::bind(&bound, "dec", cfg).unwrap();
    let emb = tape.constant(Tensor::new([1, e.len()], e.to_vec()).unwrap());
    let cos = class_cosines(emb, &bank).unwrap().value().into_data();
    let logits = arcface_logits(emb, &bank, target).unwrap().value().into_data();
    let probs = decode(emb, &bank).unwrap().value().into_data();
    (cos, logits, probs)
}

fn random_case(seed: u64, w: usize, d: usize) -> (Vec<f64>, Tensor<f64>) {
    let e = rng::normal::<f64>(&mut rng::stream(seed, "embedding"), [d], 1.0).into_data();
    let centres = rng::normal(&mut rng::stream(seed, "centres"), [2, w, d], 1.0);
    (e, centres)
}

#[test]
fn self_similarity_hits_the_clamp() {
    let centres = Tensor::from_f64([2, 2, 3], &[1.0, 2.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0]).unwrap();
    let (cos, _, _) = run(&[0.5, 1.0, 1.0], &centres, config(2, 0.5, 64.0), None);
    assert_eq!(cos[0], COSINE_LIMIT);
}

#[test]
fn orthogonal_and_antipodal_geometry() {
    let centres = Tensor::from_f64([2, 2, 2], &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
    let (cos, _, _) = run(&[1.0, 0.0], &centres, config(2, 0.5, 64.0), None);
    assert_eq!(cos, vec![COSINE_LIMIT, 0.0]);
}

#[test]
fn single_centre_bank_is_plain_cosine() {
    let (e, centres) = random_case(3, 1, 5);
    let (cos, _, _) = run(&e, &centres, config(1, 0.5, 64.0), None);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for c in 0..2 {
        let centre = &centres.data()[c * 5..(c + 1) * 5];
        let plain = e.iter().zip(centre).map(|(a, b)| a * b).sum::<f64>() / (norm(&e) * norm(centre));
        assert!((cos[c] - plain).abs() < 1e-14);
    }
}

#[test]
fn margin_closed_form_at_zero_angle() {
    let centres = Tensor::from_f64([2, 1, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let (_, logits, _) = run(&[3.0, 0.0], &centres, config(1, 0.5, 2.0), Some(0));
    // The angle is the clamped one, not exactly zero.
    assert!((logits[0] - 2.0 * (COSINE_LIMIT.acos() + 0.5).cos()).abs() < 1e-15);
    assert!((logits[0] - 2.0 * 0.5f64.cos()).abs() < 1e-3);
    assert!((logits[0] - 1.75517).abs() < 1e-3);
    assert_eq!(logits[1], 0.0);
}

#[test]
fn zero_margin_gives_scaled_cosines() {
    let (e, centres) = random_case(5, 3, 6);
    let (cos, logits, _) = run(&e, &centres, config(3, 0.0, 64.0), Some(1));
    for (l, c) in logits.iter().zip(&cos) {
        assert_eq!(*l, 64.0 * c);
    }
}

#[test]
fn matches_enumeration_oracle() {
    for seed in 0..50 {
        let (e, centres) = random_case(seed, 3, 8);
        let cfg = config(3, 0.5, 64.0);
        for target in [None, Some(0), Some(1)] {
            let (_, logits, probs) = run(&e, &centres, cfg, target);
            let expected = enumeration_oracle(&e, centres.data(), &cfg, target);
            for (a, b) in logits.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10);
            }
            if target.is_none() {
                let m = expected[0].max(expected[1]);
                let z: f64 = expected.iter().map(|l| (l - m).exp()).sum();
                for (p, l) in probs.iter().zip(&expected) {
                    assert!((p - (l - m).exp() / z).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn decode_symmetry_and_saturation() {
    let centres = Tensor::from_f64([2, 1, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let (_, _, probs) = run(&[1.0, 1.0], &centres, config(1, 0.5, 64.0), None);
    assert!((probs[0] - 0.5).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15);

    let centres = Tensor::from_f64([2, 2, 3], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let (_, _, probs) = run(&[0.0, 2.0, 0.0], &centres, config(2, 0.5, 64.0), None);
    assert!(probs[0] > 1.0 - 1e-9);
}

#[test]
fn rejects_bad_target_and_zero_embedding() {
    let tape = Tape::new();
    let mut store = ParamStore::new();
    store.insert("dec.centres", Tensor::<f64>::ones([2, 1, 2])).unwrap();
    let bound = store.bind(&tape);
    let bank = CentreBank::bind(&bound, "dec", config(1, 0.5, 64.0)).unwrap();
    let e = tape.constant(Tensor::from_f64([1, 2], &[1.0, 0.0]).unwrap());
    assert!(arcface_logits(e, &bank, Some(2)).is_err());
    let zero = tape.constant(Tensor::zeros([1, 2]));
    assert!(class_cosines(zero, &bank).is_err());
    assert!(CentreBank::bind(&bound, "dec", config(2, 0.5, 64.0)).is_err());
}

#[test]
fn init_draws_unit_centres() {
    let mut store = ParamStore::<f64>::new();
    config(4, 0.5, 64.0).init_params(&mut store, "dec", 6, 1).unwrap();
    let c = store.get("dec.centres").unwrap();
    assert_eq!(c.shape(), &[2, 4, 6]);
    for centre in c.data().chunks(6) {
        assert!((centre.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn logits_pass_grad_check() {
    for seed in 0..3 {
        let (e, centres) = random_case(seed, 3, 6);
        let cfg = config(3, 0.5, 4.0);
        let weights = rng::normal::<f64>(&mut rng::stream(seed, "w"), [2], 1.0);
        for target in [None, Some(0), Some(1)] {
            let report = grad_check(
                |tape, v| {
                    let bound = BoundParams::from_vars([("dec.centres".to_string(), v[1])]);
                    let bank = CentreBank::bind(&bound, "dec", cfg)?;
                    let logits = arcface_logits(v[0], &bank, target)?;
                    Ok(logits.mul(tape.constant(weights.clone()))?.sum())
                },
                &[Tensor::new([1, 6], e.clone()).unwrap(), centres.clone()],
                1e-6,
            )
            .unwrap();
            assert!(report.passed(1e-4), "seed {seed} target {target:?}: {report:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoder_invariants(seed in 0u64..100_000, w in 1usize..5, factor in 0.01f64..100.0, target in 0usize..2) {
        let (e, centres) = random_case(seed, w, 7);
        let cfg = config(w, 0.5, 64.0);
        let (cos, logits, probs) = run(&e, &centres, cfg, Some(target));
        let scaled: Vec<f64> = e.iter().map(|v| v * factor).collect();
        let (cos_s, logits_s, probs_s) = run(&scaled, &centres, cfg, Some(target));
        for (a, b) in cos.iter().chain(&logits).chain(&probs).zip(cos_s.iter().chain(&logits_s).chain(&probs_s)) {
            prop_assert!((a - b).abs() < 1e-9);
        }

        let (_, plain, _) = run(&e, &centres, config(w, 0.0, 64.0), Some(target));
        prop_assert!(logits[target] <= plain[target]);
        prop_assert_eq!(argmax(&probs), argmax(&cos));
    }
}
