//! Python bindings: attribute network, aesthetic models, synthetic data and
//! metrics. Arrays cross the boundary as nested lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use aesthyper::attribute::{
    attr_forward, predict_attributes, train_attribute_net, AttrTrainConfig, AttrTrainData, AttributeNetParams,
    CompositionSet, StyleSet,
};
use aesthyper::data::synthetic::{generate, SyntheticConfig};
use aesthyper::data::BucketScale;
use aesthyper::hyper::{
    build_variant, train_hyper, AestheticModel, AestheticNetSpec, AestheticSet, HyperTrainConfig, VariantKind,
};
use aesthyper::nn::{AdamConfig, Tensor};
use aesthyper::{metrics, nn, Error};

/// `(epoch, loss, val_metric)`
type AttrEpoch = (usize, f64, f64);
/// `(epoch, loss, val_srocc, val_emd_r1)`
type HyperEpoch = (usize, f64, f64, f64);

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rows(x: &[Vec<f64>]) -> PyResult<Tensor> {
    if x.is_empty() {
        return Err(PyValueError::new_err("expected at least one row"));
    }
    Tensor::from_rows(x).map_err(py_err)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn scale_for(buckets: usize, values: Option<Vec<f64>>) -> PyResult<BucketScale> {
    match values {
        Some(v) => BucketScale::new(v),
        None => BucketScale::unit(buckets),
    }
    .map_err(py_err)
}

/// Stage-1 multi-task attribute network.
#[pyclass(name = "AttributeNet", module = "aesthyper")]
struct PyAttributeNet {
    inner: AttributeNetParams,
}

#[pymethods]
impl PyAttributeNet {
    #[staticmethod]
    #[pyo3(signature = (dim, width, styles, comps, seed = 0))]
    fn init(dim: usize, width: usize, styles: usize, comps: usize, seed: u64) -> Self {
        PyAttributeNet {
            inner: AttributeNetParams::init(dim, width, styles, comps, seed),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyAttributeNet {
            inner: AttributeNetParams::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn styles(&self) -> usize {
        self.inner.styles()
    }

    #[getter]
    fn comps(&self) -> usize {
        self.inner.comps()
    }

    /// Attribute embeddings `e_s`, one row per input row.
    fn embed(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = attr_forward(&rows(&x)?, &self.inner).map_err(py_err)?;
        Ok(tensor_rows(&out.embedding))
    }

    /// `(style, composition_bits)` per row.
    #[pyo3(signature = (x, threshold = 0.5))]
    fn predict(&self, x: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<(usize, Vec<bool>)>> {
        let preds = predict_attributes(&rows(&x)?, &self.inner, threshold).map_err(py_err)?;
        Ok(preds.into_iter().map(|p| (p.style, p.composition)).collect())
    }

    /// Trains on separate style and composition sets. Returns the selected
    /// network and the per-epoch `(epoch, loss, val_metric)` history.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        style_features, style_labels, comp_features, comp_labels, styles, comps,
        width = 512, epochs = 60, lr = 1e-4, dropout = 0.25, seed = 0
    ))]
    fn train(
        style_features: Vec<Vec<f64>>,
        style_labels: Vec<usize>,
        comp_features: Vec<Vec<f64>>,
        comp_labels: Vec<Vec<bool>>,
        styles: usize,
        comps: usize,
        width: usize,
        epochs: usize,
        lr: f64,
        dropout: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<AttrEpoch>)> {
        if style_features.len() != style_labels.len() || comp_features.len() != comp_labels.len() {
            return Err(PyValueError::new_err("features and labels differ in length"));
        }
        let data = AttrTrainData {
            styles,
            comps,
            style_train: StyleSet {
                features: style_features,
                labels: style_labels,
            },
            comp_train: CompositionSet {
                features: comp_features,
                labels: comp_labels,
            },
            style_val: StyleSet::default(),
            comp_val: CompositionSet::default(),
        };
        let cfg = AttrTrainConfig {
            width,
            epochs,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            dropout,
            seed,
            ..AttrTrainConfig::default()
        };
        let out = train_attribute_net(&data, &cfg).map_err(py_err)?;
        let history = out.history.iter().map(|r| (r.epoch, r.loss, r.val_metric)).collect();
        Ok((PyAttributeNet { inner: out.params }, history))
    }
}

/// An aesthetic predictor of any variant.
#[pyclass(name = "AestheticModel", module = "aesthyper")]
struct PyAestheticModel {
    inner: AestheticModel,
}

#[pymethods]
impl PyAestheticModel {
    /// `layer_dims` is `[D, hidden.., B]`. `attr` is required for every
    /// kind except `mlp_only`.
    #[staticmethod]
    #[pyo3(signature = (kind, layer_dims, attr = None, reduced_dim = 64, seed = 0))]
    fn build(
        kind: &str,
        layer_dims: Vec<usize>,
        attr: Option<PyRef<'_, PyAttributeNet>>,
        reduced_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let kind: VariantKind = kind.parse().map_err(py_err)?;
        let spec = AestheticNetSpec::new(layer_dims).map_err(py_err)?;
        let attr = attr.map(|a| a.inner.clone());
        Ok(PyAestheticModel {
            inner: build_variant(kind, &spec, attr, reduced_dim, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyAestheticModel {
            inner: AestheticModel::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.spec.layer_dims.clone()
    }

    /// Predicted score distributions, one row per embedding.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(tensor_rows(&self.inner.predict(&rows(&x)?).map_err(py_err)?))
    }

    /// Flattened generated weight matrix of layer `layer` (1-based) for a
    /// single embedding, row-major `[N_in, N_out]`.
    fn generated_weights(&self, e_b: Vec<f64>, layer: usize) -> PyResult<Vec<f64>> {
        let gp = self.inner.generated_params(&e_b).map_err(py_err)?;
        if layer == 0 || layer > gp.layers.len() {
            return Err(PyValueError::new_err(format!(
                "layer must be in 1..={}, got {layer}",
                gp.layers.len()
            )));
        }
        Ok(gp.layers[layer - 1].weight.data().to_vec())
    }

    /// Trains the head and returns `(model, history, best_epoch)`, where
    /// each history row is `(epoch, loss, val_srocc, val_emd_r1)`.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        train_x, train_q, val_x, val_q, epochs = 40, lr = 1e-5, emd_r = 2.0, seed = 0, bucket_values = None
    ))]
    fn train(
        &self,
        train_x: Vec<Vec<f64>>,
        train_q: Vec<Vec<f64>>,
        val_x: Vec<Vec<f64>>,
        val_q: Vec<Vec<f64>>,
        epochs: usize,
        lr: f64,
        emd_r: f64,
        seed: u64,
        bucket_values: Option<Vec<f64>>,
    ) -> PyResult<(Self, Vec<HyperEpoch>, usize)> {
        let set = |x: Vec<Vec<f64>>, q: Vec<Vec<f64>>, tag: &str| -> PyResult<AestheticSet> {
            if x.len() != q.len() {
                return Err(PyValueError::new_err(format!(
                    "{tag}: embeddings and targets differ in length"
                )));
            }
            let ids = (0..x.len()).map(|i| format!("{tag}{i}")).collect();
            Ok(AestheticSet {
                ids,
                embeddings: x,
                targets: q,
            })
        };
        let train = set(train_x, train_q, "train")?;
        let val = set(val_x, val_q, "val")?;
        let scale = scale_for(self.inner.spec.buckets(), bucket_values)?;
        let cfg = HyperTrainConfig {
            epochs,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            emd_r,
            seed,
            ..HyperTrainConfig::default()
        };
        let out = train_hyper(self.inner.clone(), &train, &val, &scale, &cfg).map_err(py_err)?;
        let history = out
            .history
            .iter()
            .map(|r| (r.epoch, r.loss, r.val_srocc, r.val_emd_r1))
            .collect();
        Ok((PyAestheticModel { inner: out.model }, history, out.best_epoch))
    }
}

/// Planted-attribute dataset as a dict of parallel lists.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (n, dim, styles, comps, buckets, seed = 0, stream = 0, interaction = false))]
fn generate_synthetic<'py>(
    py: Python<'py>,
    n: usize,
    dim: usize,
    styles: usize,
    comps: usize,
    buckets: usize,
    seed: u64,
    stream: u64,
    interaction: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SyntheticConfig {
        stream,
        interaction,
        ..SyntheticConfig::new(n, dim, styles, comps, buckets, seed)
    };
    let data = generate(&cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("ids", data.embeddings.iter().map(|e| e.id.clone()).collect::<Vec<_>>())?;
    d.set_item(
        "embeddings",
        data.embeddings.iter().map(|e| e.values.clone()).collect::<Vec<_>>(),
    )?;
    d.set_item("styles", data.attributes.iter().map(|a| a.style).collect::<Vec<_>>())?;
    d.set_item(
        "compositions",
        data.attributes
            .iter()
            .map(|a| a.composition.clone())
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "distributions",
        data.distributions.iter().map(|q| q.probs.clone()).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (q_hat, q, r = 2.0))]
fn emd_loss(q_hat: Vec<f64>, q: Vec<f64>, r: f64) -> PyResult<f64> {
    nn::emd_loss(&q_hat, &q, r).map_err(py_err)
}

#[pyfunction]
fn srocc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::srocc(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn plcc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::plcc(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn mae(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::mae(&pred, &truth).map_err(py_err)
}

#[pyfunction]
fn rmse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&pred, &truth).map_err(py_err)
}

/// All report metrics as a dict. Undefined correlations come back as NaN.
#[pyfunction]
#[pyo3(signature = (preds, truths, bucket_values = None, threshold = None))]
fn evaluate<'py>(
    py: Python<'py>,
    preds: Vec<Vec<f64>>,
    truths: Vec<Vec<f64>>,
    bucket_values: Option<Vec<f64>>,
    threshold: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let buckets = truths.first().map_or(0, Vec::len);
    let scale = scale_for(buckets, bucket_values)?;
    let t = threshold.unwrap_or_else(|| scale.default_threshold());
    let report = metrics::evaluate(&preds, &truths, &scale, t).map_err(py_err)?;
    let d = PyDict::new(py);
    for (name, v) in report.rows() {
        d.set_item(name, v)?;
    }
    d.set_item("n", report.n)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "aesthyper")]
fn aesthyper_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAttributeNet>()?;
    m.add_class::<PyAestheticModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(emd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(srocc, m)?)?;
    m.add_function(wrap_pyfunction!(plcc, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
