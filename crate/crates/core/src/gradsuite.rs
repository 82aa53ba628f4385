//! Finite-difference checks of every differentiable building block, run in
//! double precision.

use crate::arcdecoder::{arcface_logits, ArcConfig, CentreBank};
use crate::attention::{
    bilinear_sample, deformable_attention, encoder_layer, init_deformable, init_multihead, multihead_attention,
    DeformableVars, EncoderConfig, EncoderVars, FeatureMap, HistoryBank, HistoryMode, MultiheadVars,
};
use crate::error::{Error, Result};
use crate::tensor::{grad_check, rng, BoundParams, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::trainkit::cross_entropy;

/// Operations covered, in report order.
pub const GRAD_SUITE_OPS: [&str; 10] = [
    "matmul",
    "softmax",
    "layer_norm",
    "conv2d",
    "multihead_attention",
    "bilinear_sample",
    "deformable_attention",
    "encoder_layer",
    "arcface_logits",
    "cross_entropy",
];

/// Largest relative error accepted for a row to pass.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const DIM: usize = 8;
const HEADS: usize = 2;
const POINTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub op: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.report.passed(GRAD_TOLERANCE)
    }
}

fn normal(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<f64> {
    rng::normal(&mut rng::stream(seed, &format!("gradsuite.{name}")), shape.to_vec(), std)
}

/// Weighted sum so every output entry gets its own upstream gradient.
fn weighted<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = normal(seed, "upstream", &y.shape(), 1.0);
    Ok(y.mul(tape.constant(w))?.sum())
}

/// Parameter store with every tensor redrawn, biases included, so that no
/// weight sits at a special value such as zero.
fn randomized(store: ParamStore<f64>, seed: u64) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for (name, t) in store.iter() {
        let fresh = normal(seed, name, t.shape(), 0.3).map(|v| v + if name.ends_with("gamma") { 1.0 } else { 0.0 });
        out.insert(name, fresh).expect("names are unique");
    }
    out
}

/// Checks a function of some plain inputs followed by every tensor in
/// `store`, which the closure sees bound under their original names.
fn check_with_params<F>(inputs: Vec<Tensor<f64>>, store: &ParamStore<f64>, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>], &BoundParams<'t, f64>) -> Result<Var<'t, f64>>,
{
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let split = inputs.len();
    let mut all = inputs;
    all.extend(store.iter().map(|(_, t)| t.clone()));
    grad_check(
        |tape, vars| {
            let bound = BoundParams::from_vars(names.iter().cloned().zip(vars[split..].iter().copied()));
            f(tape, &vars[..split], &bound)
        },
        &all,
        STEP,
    )
}

/// Sampling locations strictly inside grid cells, away from the kinks of
/// bilinear interpolation.
fn interior_locations(seed: u64, points: usize, height: usize, width: usize) -> Tensor<f64> {
    let mut r = rng::stream(seed, "gradsuite.locations");
    let frac = rng::uniform::<f64>(&mut r, [points, 2], 0.2, 0.8);
    let cells = rng::uniform::<f64>(&mut r, [points, 2], 0.0, 1.0);
    let data: Vec<f64> = (0..points * 2)
        .map(|i| {
            let extent = if i % 2 == 0 { width - 1 } else { height - 1 };
            let cell = (cells.data()[i] * extent as f64).floor().min(extent as f64 - 1.0);
            (cell + frac.data()[i]) / extent as f64
        })
        .collect();
    Tensor::from_f64([points, 2], &data).expect("shape matches data")
}

/// Runs the finite-difference check for one operation.
pub fn check_op(op: &str, seed: u64) -> Result<GradCheckReport> {
    match op {
        "matmul" => grad_check(
            |t, v| weighted(t, v[0].matmul(v[1])?, seed),
            &[normal(seed, "a", &[3, 4], 1.0), normal(seed, "b", &[4, 5], 1.0)],
            STEP,
        ),
        "softmax" => grad_check(
            |t, v| weighted(t, v[0].softmax(1)?, seed),
            &[normal(seed, "x", &[3, 4], 1.5)],
            STEP,
        ),
        "layer_norm" => grad_check(
            |t, v| weighted(t, v[0].layer_norm(v[1], v[2], 1e-5)?, seed),
            &[
                normal(seed, "x", &[3, 6], 1.0),
                normal(seed, "gamma", &[6], 1.0),
                normal(seed, "beta", &[6], 1.0),
            ],
            STEP,
        ),
        "conv2d" => grad_check(
            |t, v| weighted(t, v[0].conv2d(v[1], Some(v[2]), 2, 1)?, seed),
            &[
                normal(seed, "x", &[2, 5, 6], 1.0),
                normal(seed, "w", &[3, 2, 3, 3], 0.5),
                normal(seed, "b", &[3], 0.5),
            ],
            STEP,
        ),
        "multihead_attention" => {
            let mut store = ParamStore::new();
            init_multihead(&mut store, "mha", DIM, seed)?;
            let store = randomized(store, seed);
            let inputs = vec![normal(seed, "q", &[1, DIM], 1.0), normal(seed, "kv", &[3, DIM], 1.0)];
            check_with_params(inputs, &store, |t, v, p| {
                let vars = MultiheadVars::bind(p, "mha")?;
                weighted(t, multihead_attention(v[0], v[1], v[1], &vars, HEADS)?, seed)
            })
        }
        "bilinear_sample" => grad_check(
            |t, v| {
                let map = FeatureMap::new(v[0])?;
                let rows = (0..4)
                    .map(|i| bilinear_sample(&map, v[1].slice(0, i, 1)?))
                    .collect::<Result<Vec<_>>>()?;
                weighted(t, t.concat(&rows, 0)?, seed)
            },
            &[normal(seed, "map", &[3, 4, 5], 1.0), interior_locations(seed, 4, 4, 5)],
            STEP,
        ),
        "deformable_attention" => {
            let mut store = ParamStore::new();
            init_deformable(&mut store, "sca", DIM, HEADS, POINTS, seed)?;
            let store = randomized(store, seed);
            let inputs = vec![normal(seed, "q", &[1, DIM], 1.0), normal(seed, "map", &[DIM, 3, 4], 1.0)];
            check_with_params(inputs, &store, |t, v, p| {
                let vars = DeformableVars::bind(p, "sca")?;
                let map = FeatureMap::new(v[1])?;
                weighted(t, deformable_attention(v[0], &map, &vars, HEADS, POINTS)?, seed)
            })
        }
        "encoder_layer" => {
            let cfg = EncoderConfig {
                embed_dim: DIM,
                num_heads: HEADS,
                num_points: POINTS,
                ablate_tsa: false,
            };
            let mut store = ParamStore::new();
            cfg.init_params(&mut store, "enc", seed)?;
            let store = randomized(store, seed);
            let inputs = vec![
                normal(seed, "q", &[1, DIM], 1.0),
                normal(seed, "map", &[DIM, 3, 4], 1.0),
                normal(seed, "history", &[1, DIM], 1.0),
            ];
            check_with_params(inputs, &store, |t, v, p| {
                let vars = EncoderVars::bind(p, "enc")?;
                let mut history = HistoryBank::new(HistoryMode::All);
                history.push(v[2]);
                let map = FeatureMap::new(v[1])?;
                weighted(t, encoder_layer(v[0], &map, &history, &vars, &cfg)?, seed)
            })
        }
        "arcface_logits" => {
            let cfg = ArcConfig {
                num_classes: 2,
                centres_per_class: 3,
                margin: 0.5,
                scale: 16.0,
            };
            let target = (seed % 2) as usize;
            let mut store = ParamStore::new();
            store.insert("dec.centres", normal(seed, "centres", &[2, 3, DIM], 1.0))?;
            check_with_params(vec![normal(seed, "e", &[1, DIM], 1.0)], &store, |t, v, p| {
                let bank = CentreBank::bind(p, "dec", cfg)?;
                weighted(t, arcface_logits(v[0], &bank, Some(target))?, seed)
            })
        }
        "cross_entropy" => grad_check(
            |_, v| cross_entropy(v[0], (seed % 2) as usize),
            &[normal(seed, "logits", &[2], 2.0)],
            STEP,
        ),
        other => Err(Error::contract(format!("no gradient check for `{other}`"))),
    }
}

/// Every operation in [`GRAD_SUITE_OPS`] for each seed.
pub fn run_grad_suite(seeds: &[u64]) -> Result<Vec<GradRow>> {
    let mut rows = Vec::with_capacity(GRAD_SUITE_OPS.len() * seeds.len());
    for op in GRAD_SUITE_OPS {
        for &seed in seeds {
            rows.push(GradRow {
                op,
                seed,
                report: check_op(op, seed)?,
            });
        }
    }
    Ok(rows)
}
