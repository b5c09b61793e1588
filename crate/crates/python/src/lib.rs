//! Python bindings: scene generation, neighbor search, uncertainty
//! decomposition, metrics and a trained-model handle.

use ndarray::{Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nsamc::dataio::{generate_scene as gen_scene, SceneSpec};
use nsamc::distribution::{predictive_mean, EmpiricalDistribution, Provenance};
use nsamc::experiment::{load_model, save_model, ModelMeta};
use nsamc::inference::{decompose, sample_distribution, Method};
use nsamc::metrics::{confusion, default_recall_grid, pr_curve as pr, ranking_iou as rank_iou, segmentation_scores as seg_scores};
use nsamc::{build_index, knn as knn_rows, voxelize, Acquisition, Backbone, BackboneConfig, DropoutConfig, ModelParams, PointCloud, UncertaintyMap};

fn py_err(e: nsamc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>], width: Option<usize>) -> PyResult<Array2<f64>> {
    let w = width.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err(format!("every row must have {w} values")));
    }
    Ok(Array2::from_shape_fn((rows.len(), w), |(i, j)| rows[i][j]))
}

fn cloud(coords: &[Vec<f64>], features: Option<&[Vec<f64>]>, num_classes: usize) -> PyResult<PointCloud> {
    let c = matrix(coords, Some(3))?;
    let f = match features {
        Some(f) => matrix(f, None)?,
        None => Array2::zeros((coords.len(), 0)),
    };
    PointCloud::new(c, f, None, num_classes).map_err(py_err)
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn map_dict<'py>(py: Python<'py>, map: &UncertaintyMap) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("total", map.total.clone())?;
    d.set_item("aleatoric", map.aleatoric.clone())?;
    d.set_item("epistemic", map.epistemic.clone())?;
    d.set_item("acquisition", map.acquisition.to_string())?;
    Ok(d)
}

/// Generates a labeled room. Returns coords, features, labels (possibly
/// flipped) and clean_labels.
#[pyfunction]
#[pyo3(signature = (seed=0, points=20000, noise=0.0, band=0.05))]
fn generate_scene(py: Python<'_>, seed: u64, points: usize, noise: f64, band: f64) -> PyResult<Bound<'_, PyDict>> {
    let spec = SceneSpec {
        seed,
        points,
        boundary_noise_rate: noise,
        boundary_band: band,
        ..SceneSpec::default()
    };
    let scene = gen_scene(&spec).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("coords", rows(&scene.cloud.coords))?;
    d.set_item("features", rows(&scene.cloud.features))?;
    d.set_item("labels", scene.cloud.labels.clone())?;
    d.set_item("clean_labels", scene.clean_labels.clone())?;
    Ok(d)
}

/// For every point, itself followed by its `t - 1` nearest other points.
#[pyfunction]
fn knn(coords: Vec<Vec<f64>>, t: usize) -> PyResult<Vec<Vec<usize>>> {
    let c = cloud(&coords, None, 1)?;
    let index = build_index(&c).map_err(py_err)?;
    let n = knn_rows(&index, &c, t).map_err(py_err)?;
    Ok(n.rows().map(<[usize]>::to_vec).collect())
}

fn distribution(samples: Vec<Vec<Vec<f64>>>) -> PyResult<EmpiricalDistribution> {
    let n = samples.len();
    let t = samples.first().map_or(0, Vec::len);
    let m = samples.first().and_then(|s| s.first()).map_or(0, Vec::len);
    if samples.iter().any(|p| p.len() != t || p.iter().any(|s| s.len() != m)) {
        return Err(PyValueError::new_err("samples must be an N x T x M nested list"));
    }
    let a = Array3::from_shape_fn((n, t, m), |(i, s, c)| samples[i][s][c]);
    EmpiricalDistribution::new(a, Provenance::Mc).map_err(py_err)
}

/// Uncertainty of an N x T x M sample array; `acquisition` is "pe" or "std".
#[pyfunction]
#[pyo3(signature = (samples, acquisition="std"))]
fn decompose_samples<'py>(py: Python<'py>, samples: Vec<Vec<Vec<f64>>>, acquisition: &str) -> PyResult<Bound<'py, PyDict>> {
    let acq: Acquisition = acquisition.parse().map_err(py_err)?;
    map_dict(py, &decompose(&distribution(samples)?, acq))
}

/// Overall accuracy, mean class accuracy, mIoU and per-class IoU, as fractions.
#[pyfunction]
fn segmentation_scores(py: Python<'_>, predictions: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> PyResult<Bound<'_, PyDict>> {
    let conf = confusion(&predictions, &labels, num_classes).map_err(py_err)?;
    let s = seg_scores(&conf).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("oacc", s.oacc)?;
    d.set_item("macc", s.macc)?;
    d.set_item("miou", s.miou)?;
    d.set_item("per_class_iou", s.per_class_iou)?;
    Ok(d)
}

/// (recall percent, precision) pairs at recall 1..100%.
#[pyfunction]
fn pr_curve(correct: Vec<bool>, uncertainty: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    pr(&correct, &uncertainty, &default_recall_grid()).map_err(py_err)
}

#[pyfunction]
fn ranking_iou(coords: Vec<Vec<f64>>, errors: Vec<f64>, uncertainty: Vec<f64>, voxel_size: f64, percent: f64) -> PyResult<f64> {
    let c = cloud(&coords, None, 1)?;
    let v = voxelize(&c, voxel_size).map_err(py_err)?;
    rank_iou(&v, &errors, &uncertainty, percent).map_err(py_err)
}

/// A segmentation network with its parameters.
#[pyclass]
struct Model {
    backbone: Backbone,
    params: ModelParams,
    meta: Option<ModelMeta>,
}

#[pymethods]
impl Model {
    /// Freshly initialized network taking 3 + `features` inputs.
    #[new]
    #[pyo3(signature = (num_classes, features, dropout_config="Con_1", dropout_rate=0.5, seed=0))]
    fn new(num_classes: usize, features: usize, dropout_config: &str, dropout_rate: f64, seed: u64) -> PyResult<Self> {
        let dc: DropoutConfig = dropout_config.parse().map_err(py_err)?;
        let config = BackboneConfig {
            dropout_config: dc,
            dropout_rate,
            ..BackboneConfig::new(num_classes)
        };
        let backbone = Backbone::new(config, 3 + features).map_err(py_err)?;
        let params = backbone.init_params(seed);
        Ok(Model {
            backbone,
            params,
            meta: None,
        })
    }

    /// Loads parameters written by `nsamc train`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (backbone, params, meta) = load_model(path).map_err(py_err)?;
        Ok(Model {
            backbone,
            params,
            meta: Some(meta),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let meta = self
            .meta
            .clone()
            .ok_or_else(|| PyValueError::new_err("only loaded models carry training metadata"))?;
        save_model(path, &self.params, &meta).map_err(py_err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.backbone.config.num_classes()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Forward passes run so far.
    #[getter]
    fn passes(&self) -> u64 {
        self.backbone.passes()
    }

    /// Class probabilities with dropout off.
    #[pyo3(signature = (coords, features=None))]
    fn predict(&self, coords: Vec<Vec<f64>>, features: Option<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let c = cloud(&coords, features.as_deref(), self.num_classes())?;
        let p = self.backbone.forward_deterministic(&self.params, &c).map_err(py_err)?;
        Ok(rows(&p.0))
    }

    /// Per-point uncertainty from `t` samples drawn by "nsa" or "mc", plus the
    /// predictive-mean class of every point.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (coords, features=None, method="nsa", t=10, acquisition="std", seed=0))]
    fn uncertainty<'py>(
        &self,
        py: Python<'py>,
        coords: Vec<Vec<f64>>,
        features: Option<Vec<Vec<f64>>>,
        method: &str,
        t: usize,
        acquisition: &str,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let method: Method = method.parse().map_err(py_err)?;
        let acq: Acquisition = acquisition.parse().map_err(py_err)?;
        let c = cloud(&coords, features.as_deref(), self.num_classes())?;
        let dist = sample_distribution(&self.backbone, &self.params, &c, method, t, seed).map_err(py_err)?;
        let d = map_dict(py, &decompose(&dist, acq))?;
        d.set_item("predictions", predictive_mean(&dist).argmax())?;
        Ok(d)
    }
}

#[pymodule]
pub fn nsamc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_samples, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_scores, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_iou, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
