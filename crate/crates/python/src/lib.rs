//! Python bindings: ground motions, the bridge oracle, SPR-Net models,
//! attribution, fragility and loss.

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use sprnet_core::explain::{shapley_attributions, SprFeatureModel, SummaryStatistic};
use sprnet_core::gm::{self, StochasticGmConfig};
use sprnet_core::oracle::{self, DatasetOptions, ParameterStatistics, ResponseChannel, PARAM_NAMES};
use sprnet_core::{io, metrics, risk, sprnet as net};
use std::collections::HashMap;
use std::fmt::Display;
use std::path::PathBuf;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_name<T: DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

fn history_dict(h: &oracle::ResponseHistory) -> HashMap<String, Vec<f64>> {
    let mut out: HashMap<String, Vec<f64>> =
        ResponseChannel::ALL.iter().map(|c| (c.name().to_string(), h.channel(*c).to_vec())).collect();
    out.insert("column_energy".into(), h.column_energy.clone());
    out.insert("bearing_energy".into(), h.bearing_energy.clone());
    out
}

/// Acceleration record in g at a uniform time step.
#[pyclass(name = "GroundMotion", from_py_object)]
#[derive(Clone)]
struct PyGroundMotion {
    inner: gm::GroundMotion,
}

#[pymethods]
impl PyGroundMotion {
    #[new]
    fn new(id: String, dt: f64, accel: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: gm::GroundMotion::new(id, dt, accel).map_err(value_err)? })
    }

    /// Kanai-Tajimi filtered white noise scaled to `target_pga`.
    #[staticmethod]
    #[pyo3(signature = (target_pga, duration, dt, seed, corner_frequency=2.5, bandwidth=0.4))]
    fn synthesize(
        target_pga: f64,
        duration: f64,
        dt: f64,
        seed: u64,
        corner_frequency: f64,
        bandwidth: f64,
    ) -> PyResult<Self> {
        let cfg = StochasticGmConfig {
            target_pga,
            duration,
            dt,
            seed,
            corner_frequency,
            damping_like_bandwidth: bandwidth,
            ..Default::default()
        };
        Ok(Self { inner: gm::synthesize_gm(&cfg).map_err(value_err)? })
    }

    /// Parses the two-column text record format.
    #[staticmethod]
    fn parse(id: &str, text: &str) -> PyResult<Self> {
        Ok(Self { inner: gm::parse_gm_record(id, text).map_err(value_err)? })
    }

    fn to_text(&self) -> String {
        gm::write_gm_record(&self.inner)
    }

    fn trim_resample(&self, duration: f64, dt: f64) -> PyResult<Self> {
        Ok(Self { inner: gm::trim_resample(&self.inner, duration, dt).map_err(value_err)? })
    }

    fn scaled(&self, factor: f64) -> PyResult<Self> {
        Ok(Self { inner: gm::scale_gm(&self.inner, factor).map_err(value_err)? })
    }

    fn pga(&self) -> PyResult<f64> {
        gm::peak_ground_acceleration(&self.inner).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn accel(&self) -> Vec<f64> {
        self.inner.accel.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("GroundMotion(id={:?}, dt={}, steps={})", self.inner.id, self.inner.dt, self.inner.len())
    }
}

/// Names of the 15 bridge parameters in vector order.
#[pyfunction]
fn parameter_names() -> Vec<&'static str> {
    PARAM_NAMES.to_vec()
}

/// Mean parameter vector of the bridge class.
#[pyfunction]
fn class_mean() -> Vec<f64> {
    oracle::BridgeParameters::class_mean().to_array().to_vec()
}

/// Latin hypercube portfolio of `n` bridges, one parameter vector each.
#[pyfunction]
fn sample_portfolio(n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let p = oracle::sample_bridge_portfolio(n, &ParameterStatistics::bridge_class(), seed).map_err(value_err)?;
    Ok(p.iter().map(|b| b.to_array().to_vec()).collect())
}

/// Nonlinear response history of one bridge under one ground motion.
#[pyfunction]
fn simulate(params: Vec<f64>, gm: &PyGroundMotion) -> PyResult<HashMap<String, Vec<f64>>> {
    let b = oracle::BridgeParameters::from_slice(&params).map_err(value_err)?;
    let model = oracle::assemble_reduced_model(&b);
    let r = oracle::simulate_response(&model, &gm.inner).map_err(value_err)?;
    Ok(history_dict(&r))
}

/// Simulated bridge-response dataset with a train/validation/test split.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: oracle::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Samples `n` bridges, pairs them with `motions` and simulates each.
    #[staticmethod]
    #[pyo3(signature = (n, motions, seed, split=(0.6, 0.2, 0.2), substeps=5))]
    fn build(n: usize, motions: Vec<PyGroundMotion>, seed: u64, split: (f64, f64, f64), substeps: usize) -> PyResult<Self> {
        let suite: Vec<gm::GroundMotion> = motions.into_iter().map(|g| g.inner).collect();
        let opts = DatasetOptions { split_fractions: [split.0, split.1, split.2], substeps };
        let ds = oracle::build_dataset(n, &suite, &ParameterStatistics::bridge_class(), seed, &opts).map_err(value_err)?;
        Ok(Self { inner: ds })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::read_dataset(&path).map_err(value_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_dataset(&self.inner, &path).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// `(train, val, test)` sample indices.
    fn split(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let s = &self.inner.split;
        (s.train_ids.clone(), s.val_ids.clone(), s.test_ids.clone())
    }

    fn parameters(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.sample(i)?.bridge.to_array().to_vec())
    }

    fn ground_motion(&self, i: usize) -> PyResult<PyGroundMotion> {
        Ok(PyGroundMotion { inner: self.sample(i)?.gm.clone() })
    }

    fn response(&self, i: usize) -> PyResult<HashMap<String, Vec<f64>>> {
        Ok(history_dict(&self.sample(i)?.response))
    }
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&oracle::Sample> {
        self.inner
            .samples
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {i} outside 0..{}", self.inner.samples.len())))
    }
}

/// Deterministic or probabilistic SPR-Net, or the LSTM baseline.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: net::Model,
}

#[pymethods]
impl PyModel {
    /// Fresh deterministic network; `config` is a JSON object overriding
    /// default network settings.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => {
                let mut base = serde_json::to_value(net::NetworkConfig::default()).map_err(value_err)?;
                let patch: serde_json::Value = serde_json::from_str(text).map_err(value_err)?;
                let (Some(b), Some(p)) = (base.as_object_mut(), patch.as_object()) else {
                    return Err(PyValueError::new_err("config must be a JSON object"));
                };
                for (k, v) in p {
                    b.insert(k.clone(), v.clone());
                }
                serde_json::from_value(base).map_err(value_err)?
            }
            None => net::NetworkConfig::default(),
        };
        Ok(Self { inner: net::build_network(&cfg).map_err(value_err)? })
    }

    /// Stacked-LSTM baseline network.
    #[staticmethod]
    fn baseline() -> PyResult<Self> {
        Ok(Self { inner: net::build_network(&net::NetworkConfig::baseline()).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_model(&path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&self.inner, &path).map_err(value_err)
    }

    /// Trains in place and returns `(train_loss, val_loss)` per epoch.
    #[pyo3(signature = (dataset, epochs, batch_size=20, lr=1e-3, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cfg = net::TrainConfig { batch_size, epochs, lr, seed, ..Default::default() };
        let model = self.inner.clone();
        let (m, h) = py.detach(|| net::train_model(model, &dataset.inner, &cfg)).map_err(value_err)?;
        self.inner = m;
        Ok((h.train_loss, h.val_loss))
    }

    /// Probabilistic model transferred from this deterministic one onto the
    /// `selected` parameter indices.
    #[pyo3(signature = (selected, dataset, epochs, batch_size=20, lr=1e-3, loss_blend=1.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn transfer(
        &self,
        py: Python<'_>,
        selected: Vec<usize>,
        dataset: &PyDataset,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        loss_blend: f64,
        seed: u64,
    ) -> PyResult<PyModel> {
        let cfg = net::TrainConfig { batch_size, epochs, lr, loss_blend, seed };
        let (m, _) = py
            .detach(|| net::transfer_probabilistic(&self.inner, &selected, &dataset.inner, &cfg))
            .map_err(value_err)?;
        Ok(PyModel { inner: m })
    }

    /// Response prediction. Deterministic models return one series per
    /// channel; probabilistic ones add `<channel>_p16` and `<channel>_p84`.
    fn predict(&self, gm: &PyGroundMotion, features: Vec<f64>) -> PyResult<HashMap<String, Vec<f64>>> {
        let pred = net::predict(&self.inner, &gm.inner, &features).map_err(value_err)?;
        let channels = &self.inner.config.channels;
        let mut out = HashMap::new();
        match pred {
            net::Prediction::Deterministic(h) => {
                for c in channels {
                    out.insert(c.name().to_string(), h.channel(*c).to_vec());
                }
            }
            net::Prediction::Probabilistic(p) => {
                let (lo, med, hi) = (p.quantile_band(-1.0), p.median(), p.quantile_band(1.0));
                for (k, c) in channels.iter().enumerate() {
                    out.insert(c.name().to_string(), med[k].clone());
                    out.insert(format!("{}_p16", c.name()), lo[k].clone());
                    out.insert(format!("{}_p84", c.name()), hi[k].clone());
                    out.insert(format!("{}_alpha", c.name()), p.alpha[k].clone());
                    out.insert(format!("{}_beta", c.name()), p.beta[k].clone());
                }
            }
        }
        Ok(out)
    }

    /// Network settings as JSON.
    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(value_err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.iter().map(|t| t.len()).sum()
    }

    #[getter]
    fn probabilistic(&self) -> bool {
        self.inner.config.mode == net::Mode::Probabilistic
    }

    /// Names of frozen parameter tensors.
    fn frozen(&self) -> Vec<String> {
        self.inner.names.iter().zip(&self.inner.frozen).filter(|(_, f)| **f).map(|(n, _)| n.clone()).collect()
    }
}

/// Exact Shapley attributions of a summary statistic over the model's
/// features. Returns `(base_value, attributions, prediction)`.
#[pyfunction]
#[pyo3(signature = (model, gm, instance, background, statistic="peak_drift"))]
fn shapley(
    py: Python<'_>,
    model: &PyModel,
    gm: &PyGroundMotion,
    instance: Vec<f64>,
    background: Vec<Vec<f64>>,
    statistic: &str,
) -> PyResult<(f64, Vec<f64>, f64)> {
    let statistic: SummaryStatistic = parse_name("statistic", statistic)?;
    let fm = SprFeatureModel { model: &model.inner, gm: &gm.inner, statistic };
    let r = py.detach(|| shapley_attributions(&fm, &instance, &background)).map_err(value_err)?;
    Ok((r.base_value, r.attributions, r.prediction))
}

/// Trace metrics of a predicted series against the truth.
#[pyfunction]
fn trace_metrics(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<HashMap<String, Option<f64>>> {
    let r = metrics::trace_metrics(&y_true, &y_pred).map_err(value_err)?;
    Ok(HashMap::from([
        ("residual_error".to_string(), r.residual_error),
        ("peak_error".to_string(), Some(r.peak_error)),
        ("amplitude_loss".to_string(), Some(r.amplitude_loss)),
        ("energy_loss".to_string(), Some(r.energy_loss)),
        ("r_squared".to_string(), Some(r.r_squared)),
    ]))
}

/// Log-log cloud regression of EDP on IM: `(a, b, beta_edp)`.
#[pyfunction]
fn cloud_regression(ims: Vec<f64>, edps: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    if ims.len() != edps.len() {
        return Err(PyValueError::new_err("ims and edps differ in length"));
    }
    let pairs: Vec<(f64, f64)> = ims.into_iter().zip(edps).collect();
    let f = risk::cloud_regression(&pairs).map_err(value_err)?;
    Ok((f.a, f.b, f.beta_edp))
}

fn fragility_model(a: f64, b: f64, beta_edp: f64, edp: &str) -> PyResult<risk::FragilityModel> {
    let kind: risk::EdpKind = parse_name("EDP", edp)?;
    risk::FragilityModel::new(risk::CloudFit { a, b, beta_edp }, &risk::DamageStateModel::preset(kind)).map_err(value_err)
}

/// Exceedance probability of every damage state at each IM of `grid`.
#[pyfunction]
#[pyo3(signature = (a, b, beta_edp, grid, edp="drift_ductility"))]
fn fragility_curves(a: f64, b: f64, beta_edp: f64, grid: Vec<f64>, edp: &str) -> PyResult<HashMap<String, Vec<f64>>> {
    let fm = fragility_model(a, b, beta_edp, edp)?;
    let mut out: HashMap<String, Vec<f64>> = fm.states.iter().map(|s| (s.name.clone(), Vec::new())).collect();
    for &im in &grid {
        let p = fm.exceedance(im).map_err(value_err)?;
        for (s, v) in fm.states.iter().zip(p) {
            out.get_mut(&s.name).expect("state key").push(v);
        }
    }
    Ok(out)
}

/// Annual exceedance rate of `pga` on the default site hazard curve.
#[pyfunction]
fn hazard_rate(pga: f64) -> PyResult<f64> {
    risk::hazard_rate(pga, &risk::HazardCurveParams::default()).map_err(value_err)
}

/// Hazard parameters `(alpha_h, beta_h, gamma_h)` fitted to `(pga, rate)` points.
#[pyfunction]
fn fit_hazard_curve(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let h = risk::fit_hazard_curve(&points).map_err(value_err)?;
    Ok((h.alpha_h, h.beta_h, h.gamma_h))
}

/// Seismic loss ratio of a cloud fit on the default hazard and IM grid.
#[pyfunction]
#[pyo3(signature = (a, b, beta_edp, edp="drift_ductility"))]
fn seismic_loss_ratio(a: f64, b: f64, beta_edp: f64, edp: &str) -> PyResult<f64> {
    let fm = fragility_model(a, b, beta_edp, edp)?;
    risk::seismic_loss_ratio(&fm, &risk::HazardCurveParams::default(), &risk::default_im_grid()).map_err(value_err)
}

#[pymodule]
fn sprnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroundMotion>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parameter_names, m)?)?;
    m.add_function(wrap_pyfunction!(class_mean, m)?)?;
    m.add_function(wrap_pyfunction!(sample_portfolio, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(shapley, m)?)?;
    m.add_function(wrap_pyfunction!(trace_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(cloud_regression, m)?)?;
    m.add_function(wrap_pyfunction!(fragility_curves, m)?)?;
    m.add_function(wrap_pyfunction!(hazard_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hazard_curve, m)?)?;
    m.add_function(wrap_pyfunction!(seismic_loss_ratio, m)?)?;
    Ok(())
}
