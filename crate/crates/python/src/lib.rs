//! Python bindings for the GRU pre-distortion engine.
//!
//! Waveforms cross the boundary as lists of Python `complex`; reports come
//! back as plain dicts.

use std::path::PathBuf;

use dpd_core::cli::ActivationKind;
use dpd_core::closed_loop::{self, OfdmContext, Predistorter};
use dpd_core::dataset::{split_ranges, DEFAULT_SPLIT};
use dpd_core::dpd::{reset_state, DpdModel, FixedDpdModel};
use dpd_core::io::{self, ModelFile};
use dpd_core::metrics::{self, MetricConfig};
use dpd_core::ofdm::{generate_ofdm, OfdmConfig};
use dpd_core::pa::{make_default_pa, PaModel};
use dpd_core::perf::{self, PeArrayConfig};
use dpd_core::quant::{quantize_model, QuantConfig};
use dpd_core::signal::Waveform;
use dpd_core::train::{self, TrainConfig};
use num_complex::Complex64;
use pyo3::exceptions::{PyValueError, PyTypeError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn err(e: dpd_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = io::to_json(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn activations(name: &str) -> PyResult<ActivationKind> {
    match name {
        "hard" => Ok(ActivationKind::Hard),
        "reference" => Ok(ActivationKind::Reference),
        "lut" => Ok(ActivationKind::Lut),
        _ => Err(PyValueError::new_err(format!(
            "activations must be 'hard', 'reference' or 'lut', got {name:?}"
        ))),
    }
}

fn wave(samples: Vec<Complex64>, fs: f64) -> Waveform {
    Waveform::new(samples, fs)
}

/// Float GRU pre-distorter.
#[pyclass(name = "GruDpd", module = "dpd_engine", from_py_object)]
#[derive(Clone)]
struct PyGruDpd {
    inner: DpdModel,
}

#[pymethods]
impl PyGruDpd {
    #[new]
    #[pyo3(signature = (seed = 0, activations = "hard"))]
    fn new(seed: u64, activations: &str) -> PyResult<Self> {
        let pair = self::activations(activations)?.pair();
        Ok(Self {
            inner: DpdModel::random(&mut ChaCha8Rng::seed_from_u64(seed), pair),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (activations = "hard"))]
    fn zeros(activations: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DpdModel::zeros(self::activations(activations)?.pair()),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match io::load_model(&path).map_err(err)? {
            ModelFile::Float(m) => Ok(Self { inner: m }),
            ModelFile::Fixed(_) => Err(PyTypeError::new_err("file holds a fixed-point model; use FixedGruDpd.load")),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&path, &ModelFile::Float(self.inner.clone())).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn parameters(&self) -> Vec<f64> {
        self.inner.params.flatten()
    }

    fn set_parameters(&mut self, values: Vec<f64>) -> PyResult<()> {
        self.inner.params.assign_flat(&values).map_err(err)
    }

    /// Run over a waveform from a zero hidden state.
    #[pyo3(signature = (samples, fake_quant = false))]
    fn forward(&self, samples: Vec<Complex64>, fake_quant: bool) -> PyResult<Vec<Complex64>> {
        let w = wave(samples, 1.0);
        let out = if fake_quant {
            self.inner.forward_fake_quant(&w, &QuantConfig::default(), &reset_state())
        } else {
            self.inner.forward(&w, &reset_state())
        };
        Ok(out.map_err(err)?.0.samples)
    }

    /// Quantize to the default Q2.10 engine.
    fn quantize(&self) -> PyResult<PyFixedGruDpd> {
        let (m, _) = quantize_model(&self.inner, &QuantConfig::default()).map_err(err)?;
        Ok(PyFixedGruDpd { inner: m })
    }

    /// Train against the default PA on the default split of `samples`.
    ///
    /// Returns the trained model and a list of per-epoch records.
    #[pyo3(signature = (samples, sample_rate_hz, epochs = 10, initial_lr = 3e-3, stride = 5, seed = 0, qat = false))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &self,
        py: Python<'py>,
        samples: Vec<Complex64>,
        sample_rate_hz: f64,
        epochs: usize,
        initial_lr: f64,
        stride: usize,
        seed: u64,
        qat: bool,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let x = wave(samples, sample_rate_hz);
        let [tr, va, _] = split_ranges(x.len(), DEFAULT_SPLIT).map_err(err)?;
        let cfg = TrainConfig {
            epochs,
            initial_lr,
            stride,
            seed,
            qat: qat.then(QuantConfig::default),
            ..TrainConfig::default()
        };
        let (m, h) = py
            .detach(|| train::train(&self.inner, &x.slice(tr), &x.slice(va), &make_default_pa(), &cfg))
            .map_err(err)?;
        Ok((Self { inner: m }, to_dict(py, &h.epochs)?))
    }

    fn __repr__(&self) -> String {
        format!("GruDpd(hidden={}, params={})", self.inner.hidden_size(), self.inner.param_count())
    }
}

/// Bit-accurate fixed-point GRU pre-distorter.
#[pyclass(name = "FixedGruDpd", module = "dpd_engine", from_py_object)]
#[derive(Clone)]
struct PyFixedGruDpd {
    inner: FixedDpdModel,
}

#[pymethods]
impl PyFixedGruDpd {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match io::load_model(&path).map_err(err)? {
            ModelFile::Fixed(m) => Ok(Self { inner: m }),
            ModelFile::Float(_) => Err(PyTypeError::new_err("file holds a float model; use GruDpd.load")),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&path, &ModelFile::Fixed(self.inner.clone())).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn forward(&self, samples: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let w = wave(samples, 1.0);
        Ok(self.inner.forward(&w, &self.inner.reset_state()).map_err(err)?.0.samples)
    }

    fn to_float(&self) -> PyGruDpd {
        PyGruDpd {
            inner: self.inner.to_float(),
        }
    }

    fn __repr__(&self) -> String {
        format!("FixedGruDpd(hidden={}, params={})", self.inner.hidden_size(), self.inner.param_count())
    }
}

/// Default power amplifier model.
#[pyclass(name = "PowerAmplifier", module = "dpd_engine")]
struct PyPa {
    inner: PaModel,
}

#[pymethods]
impl PyPa {
    #[new]
    fn new() -> Self {
        Self {
            inner: make_default_pa(),
        }
    }

    #[getter]
    fn small_signal_gain(&self) -> Complex64 {
        self.inner.small_signal_gain()
    }

    fn apply(&self, samples: Vec<Complex64>) -> Vec<Complex64> {
        self.inner.apply_samples(&samples)
    }
}

/// Generate the clipped OFDM test signal.
///
/// Returns a dict with `samples`, `reference_symbols`, `sample_rate_hz`,
/// `papr_db` and `channel_bw_hz`.
#[pyfunction]
#[pyo3(signature = (seed = None))]
fn generate<'py>(py: Python<'py>, seed: Option<u64>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let mut cfg = OfdmConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let s = generate_ofdm(&cfg).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("samples", s.waveform.samples)?;
    d.set_item("reference_symbols", s.reference_symbols)?;
    d.set_item("sample_rate_hz", cfg.sample_rate_hz())?;
    d.set_item("papr_db", s.papr_db)?;
    d.set_item("channel_bw_hz", cfg.channel_bw_hz)?;
    Ok(d)
}

/// Closed-loop metrics on the test split of the default signal.
///
/// `model` may be a `GruDpd`, a `FixedGruDpd` or `None` for no
/// pre-distortion.
#[pyfunction]
#[pyo3(signature = (model = None, seed = None))]
fn evaluate<'py>(py: Python<'py>, model: Option<&Bound<'py, PyAny>>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let pre = match model {
        None => Predistorter::Identity,
        Some(m) => {
            if let Ok(f) = m.extract::<PyGruDpd>() {
                Predistorter::Float(f.inner)
            } else if let Ok(f) = m.extract::<PyFixedGruDpd>() {
                Predistorter::Fixed(f.inner)
            } else {
                return Err(PyTypeError::new_err("model must be GruDpd, FixedGruDpd or None"));
            }
        }
    };
    let mut cfg = OfdmConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = py.detach(|| -> dpd_core::Result<_> {
        let s = generate_ofdm(&cfg)?;
        let [_, _, te] = split_ranges(s.waveform.len(), DEFAULT_SPLIT)?;
        let ctx = OfdmContext {
            config: &cfg,
            reference_symbols: &s.reference_symbols,
        };
        let e = closed_loop::evaluate(
            &s.waveform,
            &make_default_pa(),
            &pre,
            te,
            cfg.channel_bw_hz,
            &MetricConfig::default(),
            Some(ctx),
        )?;
        Ok(e.report)
    });
    to_dict(py, &report.map_err(err)?)
}

/// Worst-side ACPR in dBc.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz, channel_bw_hz, offset_hz = None))]
fn acpr(samples: Vec<Complex64>, sample_rate_hz: f64, channel_bw_hz: f64, offset_hz: Option<f64>) -> PyResult<f64> {
    let (l, r) = metrics::acpr(&wave(samples, sample_rate_hz), channel_bw_hz, offset_hz.unwrap_or(channel_bw_hz))
        .map_err(err)?;
    Ok(l.max(r))
}

#[pyfunction]
fn nmse(measured: Vec<Complex64>, reference: Vec<Complex64>) -> PyResult<f64> {
    metrics::nmse_samples(&measured, &reference).map_err(err)
}

#[pyfunction]
fn papr(samples: Vec<Complex64>) -> PyResult<f64> {
    metrics::papr(&wave(samples, 1.0)).map_err(err)
}

/// Op count, schedule and throughput for the default PE array.
#[pyfunction]
#[pyo3(signature = (activations = "hard"))]
fn perf_report<'py>(py: Python<'py>, activations: &str) -> PyResult<Bound<'py, PyAny>> {
    let m = DpdModel::zeros(self::activations(activations)?.pair());
    let s = perf::schedule_detailed(&m, &PeArrayConfig::default()).map_err(err)?;
    to_dict(py, &s.report)
}

#[pymodule]
fn dpd_engine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGruDpd>()?;
    m.add_class::<PyFixedGruDpd>()?;
    m.add_class::<PyPa>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(acpr, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(papr, m)?)?;
    m.add_function(wrap_pyfunction!(perf_report, m)?)?;
    m.add("REFERENCE_OPS_PER_SAMPLE", dpd_core::cli::REFERENCE_OPS)?;
    Ok(())
}
