//! Python bindings: configs, models, training, evaluation and a few of the
//! numeric building blocks.

use std::path::PathBuf;

use lightformer::arcdecoder::{arcface_logits as arc_logits, ArcConfig, CentreBank};
use lightformer::datakit::{
    label_from_lights as labels_from_lights, load_manifest, read_ppm, synth_scene as render_scene, thread_budget,
    window_count as windows, LeftShape, LightState, Scenario, SynthConfig,
};
use lightformer::gradsuite::run_grad_suite;
use lightformer::model::{load_checkpoint, save_checkpoint, ImageBuffer, MODEL_KEYS};
use lightformer::tensor::{ParamStore, Tape, Tensor};
use lightformer::trainkit::{cross_entropy as ce, evaluate as eval_model, train as train_model, TrainConfig};
use lightformer::{Error, ErrorKind};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Usage => PyValueError::new_err(e.to_string()),
        ErrorKind::Data => PyIOError::new_err(e.to_string()),
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lightformer::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Model hyper-parameters. Keyword arguments set fields by name.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: lightformer::model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyModelConfig {
            inner: Default::default(),
        };
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                let key: String = k.extract()?;
                cfg.set(&key, &v)?;
            }
        }
        Ok(cfg)
    }

    /// Sets one field; lists may be given as Python lists.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = if let Ok(list) = value.extract::<Vec<usize>>() {
            list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        } else if let Ok(b) = value.extract::<bool>() {
            b.to_string()
        } else {
            value.str()?.to_string()
        };
        self.inner.set(key, &text).py()
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown model key `{key}`")))
    }

    fn keys(&self) -> Vec<&'static str> {
        MODEL_KEYS.to_vec()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    fn __repr__(&self) -> String {
        let fields: Vec<String> = MODEL_KEYS
            .iter()
            .map(|k| format!("{k}={}", self.inner.get(k).unwrap_or_default()))
            .collect();
        format!("ModelConfig({})", fields.join(", "))
    }
}

/// A model with single-precision parameters.
#[pyclass(name = "Model")]
struct PyModel {
    inner: lightformer::model::Model,
}

fn buffer_from(frames: Vec<Vec<f32>>, cfg: &lightformer::model::ModelConfig) -> PyResult<ImageBuffer<f32>> {
    let shape = [cfg.in_channels, cfg.image_height, cfg.image_width];
    let tensors = frames
        .into_iter()
        .map(|f| Tensor::new(shape, f))
        .collect::<lightformer::Result<Vec<_>>>()
        .py()?;
    ImageBuffer::new(tensors).py()
}

fn prediction_dict<'py>(py: Python<'py>, p: lightformer::model::Prediction) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for (name, probs, class) in [
        ("straight", p.straight, p.straight_class()),
        ("left", p.left, p.left_class()),
    ] {
        let status = lightformer::datakit::Status::from_index(class).py()?;
        out.set_item(name, (status.to_string(), probs[0], probs[1]))?;
    }
    Ok(out)
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: lightformer::model::Model::new(config.inner.clone(), seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, path).py()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn num_parameters(&self) -> usize {
        self.inner.params().num_scalars()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.params().names().map(str::to_owned).collect()
    }

    /// Predicts from `N` frames, each a flat channel-major list in `[0, 1]`.
    /// Returns `{"straight": (status, p_pass, p_stop), "left": ...}`.
    fn predict<'py>(&self, py: Python<'py>, frames: Vec<Vec<f32>>) -> PyResult<Bound<'py, PyDict>> {
        let buffer = buffer_from(frames, self.inner.config())?;
        prediction_dict(py, self.inner.predict(&buffer).py()?)
    }

    /// Like `predict`, reading the frames from PPM files.
    fn predict_files<'py>(&self, py: Python<'py>, paths: Vec<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
        let tensors = paths
            .iter()
            .map(|p| Ok(read_ppm(p)?.to_tensor::<f32>()))
            .collect::<lightformer::Result<Vec<_>>>()
            .py()?;
        let buffer = ImageBuffer::new(tensors).py()?;
        prediction_dict(py, self.inner.predict(&buffer).py()?)
    }
}

/// Trains on a manifest; returns `(epoch, loss, train_accuracy)` per epoch.
#[pyfunction]
#[pyo3(signature = (model, manifest, epochs = 15, lr = 1e-4, batch_size = 4, seed = 0))]
fn train(
    model: &mut PyModel,
    manifest: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let threads = thread_budget();
    let data = load_manifest(&manifest, threads).py()?;
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size,
        seed,
        shuffle: true,
        threads,
    };
    let history = train_model(&mut model.inner, &data, &cfg).py()?;
    Ok(history.iter().map(|r| (r.epoch, r.loss, r.train_accuracy)).collect())
}

/// Evaluates on a manifest; returns the metrics as a flat `name -> value`
/// dict (`joint_accuracy`, `straight_pass.f1`, ...).
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, manifest: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let threads = thread_budget();
    let data = load_manifest(&manifest, threads).py()?;
    let report = eval_model(&model.inner, &data, threads).py()?;
    let out = PyDict::new(py);
    out.set_item("samples", report.samples)?;
    out.set_item("joint_accuracy", report.joint_accuracy)?;
    for s in &report.statuses {
        let n = s.name();
        let m = s.metrics;
        for (field, value) in [
            ("accuracy", m.accuracy),
            ("precision", m.precision),
            ("recall", m.recall),
            ("f1", m.f1),
        ] {
            out.set_item(format!("{n}.{field}"), value)?;
        }
        for (field, value) in [
            ("tp", s.counts.true_pos),
            ("fp", s.counts.false_pos),
            ("fn", s.counts.false_neg),
            ("tn", s.counts.true_neg),
        ] {
            out.set_item(format!("{n}.{field}"), value)?;
        }
    }
    Ok(out)
}

/// `−log softmax(logits)[target]`.
#[pyfunction]
fn cross_entropy(logits: Vec<f64>, target: usize) -> PyResult<f64> {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new([logits.len()], logits).py()?);
    ce(x, target).py()?.value().item().py()
}

/// Scaled class logits of one embedding against `classes × w × D` centres
/// given as a flat list. The margin is applied only when `target` is given.
#[pyfunction]
#[pyo3(signature = (embedding, centres, centres_per_class, margin = 0.5, scale = 64.0, target = None))]
fn arcface_logits(
    embedding: Vec<f64>,
    centres: Vec<f64>,
    centres_per_class: usize,
    margin: f64,
    scale: f64,
    target: Option<usize>,
) -> PyResult<Vec<f64>> {
    let d = embedding.len();
    if d == 0 || centres_per_class == 0 || !centres.len().is_multiple_of(d * centres_per_class) {
        return Err(PyValueError::new_err("centres must hold classes × w × len(embedding) values"));
    }
    let cfg = ArcConfig {
        num_classes: centres.len() / (d * centres_per_class),
        centres_per_class,
        margin,
        scale,
    };
    cfg.validate().py()?;
    let mut store = ParamStore::new();
    store
        .insert("dec.centres", Tensor::new([cfg.num_classes, centres_per_class, d], centres).py()?)
        .py()?;
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let bank = CentreBank::bind(&bound, "dec", cfg).py()?;
    let e = tape.constant(Tensor::new([1, d], embedding).py()?);
    Ok(arc_logits(e, &bank, target).py()?.value().data().to_vec())
}

/// Right-of-way statuses `(straight, left)` for two light states.
#[pyfunction]
fn label_from_lights(straight: &str, left: &str) -> PyResult<(String, String)> {
    let s: LightState = straight.parse().py()?;
    let l: LightState = left.parse().py()?;
    let label = labels_from_lights(s, l);
    Ok((label.straight.to_string(), label.left.to_string()))
}

/// Buffers of `n` frames at spacing `stride` in a drive of `length` frames.
#[pyfunction]
fn window_count(length: usize, n: usize, stride: usize) -> usize {
    windows(length, n, stride)
}

/// Renders one synthetic drive; returns its per-frame labels and the number
/// of distractor blobs drawn.
#[pyfunction]
#[pyo3(signature = (seed, frames = 30, width = 128, height = 64, scenario = "day", left_shape = "circle"))]
fn synth_scene<'py>(
    py: Python<'py>,
    seed: u64,
    frames: usize,
    width: usize,
    height: usize,
    scenario: &str,
    left_shape: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig {
        scenario: scenario.parse::<Scenario>().py()?,
        left_shape: left_shape.parse::<LeftShape>().py()?,
        num_frames: frames,
        width,
        height,
        ..SynthConfig::default()
    };
    let scene = render_scene(seed, &cfg).py()?;
    let out = PyDict::new(py);
    let labels: Vec<(String, String)> = scene
        .labels()
        .iter()
        .map(|l| (l.straight.to_string(), l.left.to_string()))
        .collect();
    out.set_item("labels", labels)?;
    out.set_item("distractors", scene.distractors)?;
    out.set_item("width", width)?;
    out.set_item("height", height)?;
    Ok(out)
}

/// Finite-difference check of every operation; `(op, seed, max_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (seeds = 3))]
fn grad_suite(seeds: u64) -> PyResult<Vec<(String, u64, f64, bool)>> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = run_grad_suite(&seeds).py()?;
    Ok(rows
        .iter()
        .map(|r| (r.op.to_owned(), r.seed, r.report.max_rel_error, r.passed()))
        .collect())
}

#[pymodule]
pub fn lightformer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(arcface_logits, m)?)?;
    m.add_function(wrap_pyfunction!(label_from_lights, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(grad_suite, m)?)?;
    Ok(())
}
