//! Python bindings for the receiver simulator.
//!
//! Arrays cross the boundary as nested lists and configurations as dicts
//! with the same fields as the JSON run configuration.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use pacs_core::imaging::{self, GridSpec, ImageVolume};
use pacs_core::matrices::{self, MeasurementMatrix};
use pacs_core::metrics::{self, SweepSettings};
use pacs_core::mvm_adc::{self, AdcConfig};
use pacs_core::phantom::{self, AcousticConfig, Phantom, PointAbsorber, TransducerArray};
use pacs_core::pipeline::{Run as CoreRun, RunConfig, StageOutcome};
use pacs_core::recon::{self, FistaConfig};
use pacs_core::{io, Error, RawSignalBlock};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_config() => PyValueError::new_err(e.to_string()),
        Error::Dimension(_) | Error::Matrix(_) | Error::NonCoherent { .. } | Error::ZeroReference => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts a Python object to `T` through its JSON form.
fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn opt_from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map_or_else(|| Ok(T::default()), |o| from_py(py, o))
}

fn array2(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(Array2::from_shape_vec((n, t), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn volume(values: Vec<f64>, dims: [usize; 3]) -> PyResult<ImageVolume> {
    let grid = GridSpec { dims, origin_mm: [0.0; 3], spacing_mm: [1.0; 3] };
    let v = Array3::from_shape_vec((dims[0], dims[1], dims[2]), values).map_err(|e| PyValueError::new_err(e.to_string()))?;
    ImageVolume::new(v, grid).map_err(err)
}

/// Ternary measurement matrix with entries in {-1, 0, +1}.
#[pyclass(name = "Matrix", module = "pacs", frozen, from_py_object)]
#[derive(Clone)]
struct PyMatrix(MeasurementMatrix);

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<i8>>) -> PyResult<Self> {
        MeasurementMatrix::from_rows(&rows).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, m=16, zero_fraction=1.0/3.0, seed=0))]
    fn random(n: usize, m: usize, zero_fraction: f64, seed: u64) -> PyResult<Self> {
        matrices::random_ternary(n, m, zero_fraction, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity(m: usize) -> Self {
        Self(MeasurementMatrix::identity(m))
    }

    /// Top principal directions of calibration data, sign-quantized.
    #[staticmethod]
    #[pyo3(signature = (calibration, n, deadzone=0.25, sample_rate_mhz=20.41))]
    fn pca(calibration: Vec<Vec<f64>>, n: usize, deadzone: f64, sample_rate_mhz: f64) -> PyResult<Self> {
        let block = RawSignalBlock::new(array2(calibration)?, sample_rate_mhz);
        matrices::pca_ternary(&block, n, deadzone).map(|p| Self(p.matrix)).map_err(err)
    }

    #[staticmethod]
    fn block_diagonal(blocks: Vec<PyMatrix>) -> PyResult<Self> {
        let inner: Vec<MeasurementMatrix> = blocks.into_iter().map(|b| b.0).collect();
        matrices::block_diagonal(&inner).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_matrix(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_matrix(&path, &self.0).map_err(err)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows()
    }

    #[getter]
    fn m_cols(&self) -> usize {
        self.0.m_cols()
    }

    fn rows(&self) -> Vec<Vec<i8>> {
        self.0.rows().map(<[i8]>::to_vec).collect()
    }

    /// `Φ·X` for a channel-by-time array.
    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.0.apply(array2(x)?.view()).map(|y| rows(&y)).map_err(err)
    }

    /// Empirical restricted-isometry constants over random supports.
    #[pyo3(signature = (sparsity, trials=2000, seed=0))]
    fn rip<'py>(&self, py: Python<'py>, sparsity: usize, trials: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let s = matrices::empirical_rip(&self.0, sparsity, trials, seed).map_err(err)?;
        to_py(py, &s)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{}, {} nonzeros)", self.0.n_rows(), self.0.m_cols(), self.0.nonzeros())
    }
}

/// A validated run configuration bound to its output directory.
#[pyclass(name = "Run", module = "pacs", frozen)]
struct PyRun(CoreRun);

fn outcome<'py>(py: Python<'py>, o: StageOutcome, dir: &std::path::Path) -> PyResult<Bound<'py, PyAny>> {
    let d = PyDict::new(py);
    d.set_item("stage", o.stage)?;
    let outputs: Vec<String> =
        o.outputs.iter().map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()).collect();
    d.set_item("outputs", outputs)?;
    d.set_item("summary", to_py(py, &o.summary)?)?;
    Ok(d.into_any())
}

#[pymethods]
impl PyRun {
    /// `config` is a dict in run-configuration form; `out` overrides its
    /// output directory.
    #[new]
    #[pyo3(signature = (config, out=None))]
    fn new(py: Python<'_>, config: &Bound<'_, PyAny>, out: Option<PathBuf>) -> PyResult<Self> {
        let mut cfg: RunConfig = from_py(py, config)?;
        if let Some(out) = out {
            cfg.out_dir = out;
        }
        CoreRun::new(cfg).map(Self).map_err(err)
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.0.dir.clone()
    }

    #[getter]
    fn config_sha256(&self) -> &str {
        self.0.config_sha256()
    }

    #[getter]
    fn positions(&self) -> usize {
        self.0.positions()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.config)
    }

    fn simulate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.simulate()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn compress<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.compress()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn reconstruct<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.reconstruct()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn image<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.image()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.metrics()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn sweep_linearity<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.sweep_linearity()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn rip_check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| self.0.rip_check()).map_err(err)?;
        outcome(py, o, &self.0.dir)
    }

    fn __repr__(&self) -> String {
        format!("Run({:?}, {} positions)", self.0.dir, self.0.positions())
    }
}

/// Default run configuration (hair phantom, 6 positions, PCA with 4 rows).
#[pyfunction]
#[pyo3(signature = (name="example", seed=1))]
fn example_config<'py>(py: Python<'py>, name: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &RunConfig::example(name, seed))
}

/// Pressure traces of point absorbers at the 16 elements of one array
/// placement. `absorbers` holds `(x_mm, y_mm, z_mm, amplitude)` tuples.
#[pyfunction]
#[pyo3(signature = (absorbers, acoustic=None))]
fn simulate_points<'py>(
    py: Python<'py>,
    absorbers: Vec<(f64, f64, f64, f64)>,
    acoustic: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let acoustic: AcousticConfig = opt_from_py(py, acoustic)?;
    let absorbers = absorbers
        .into_iter()
        .map(|(x, y, z, a)| PointAbsorber::new([x, y, z], a))
        .collect::<pacs_core::Result<Vec<_>>>()
        .map_err(err)?;
    let ph = Phantom { name: "points".into(), absorbers };
    let block = py.detach(|| phantom::forward_simulate(&ph, &TransducerArray::default(), &acoustic)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("samples", rows(&block.samples))?;
    d.set_item("sample_rate_mhz", block.sample_rate_mhz)?;
    Ok(d.into_any())
}

/// Codes of the MVM converters for a channel-by-time array.
#[pyfunction]
#[pyo3(signature = (signals, matrix, adc=None, sample_rate_mhz=20.41, stream_base=0))]
fn compress<'py>(
    py: Python<'py>,
    signals: Vec<Vec<f64>>,
    matrix: &PyMatrix,
    adc: Option<&Bound<'py, PyAny>>,
    sample_rate_mhz: f64,
    stream_base: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let adc: AdcConfig = opt_from_py(py, adc)?;
    let block = RawSignalBlock::new(array2(signals)?, sample_rate_mhz);
    let y = mvm_adc::compress_block_with_stream(&block, &matrix.0, &adc, stream_base).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("codes", rows(&y.codes))?;
    d.set_item("measurements", rows(&y.measurements()))?;
    d.set_item("scale_v_per_lsb", y.scale_v_per_lsb)?;
    d.set_item("mac_scale", y.mac_scale)?;
    d.set_item("bits", y.bits)?;
    Ok(d.into_any())
}

/// Midrise code of one voltage, without comparator noise.
#[pyfunction]
#[pyo3(signature = (v, adc=None))]
fn quantize(py: Python<'_>, v: f64, adc: Option<&Bound<'_, PyAny>>) -> PyResult<i32> {
    let adc: AdcConfig = opt_from_py(py, adc)?;
    adc.validate().map_err(err)?;
    Ok(mvm_adc::quantize(v, &adc, 0.0))
}

/// FISTA recovery of the channel signals from measurements `y = Φ·X`.
/// `fista` takes the same fields as the `recon.fista` configuration block.
#[pyfunction]
#[pyo3(signature = (y, matrix, sample_rate_mhz=20.41, fista=None))]
fn reconstruct<'py>(
    py: Python<'py>,
    y: Vec<Vec<f64>>,
    matrix: &PyMatrix,
    sample_rate_mhz: f64,
    fista: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: FistaConfig = opt_from_py(py, fista)?;
    let y = array2(y)?;
    let rec = py.detach(|| recon::fista_solve(y.view(), &matrix.0, &cfg, sample_rate_mhz)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("estimates", rows(&rec.estimates))?;
    d.set_item("lambda", rec.lambda)?;
    d.set_item("iterations", rec.iterations_used)?;
    d.set_item("restarts", rec.restarts)?;
    d.set_item("objective_trace", rec.objective_trace)?;
    Ok(d.into_any())
}

/// Normalized mean squared error of `a` against `reference`.
#[pyfunction]
fn nmse(a: Vec<Vec<f64>>, reference: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::nmse(array2(a)?.view(), array2(reference)?.view()).map_err(err)
}

/// Structural similarity of two volumes given as flat row-major lists.
#[pyfunction]
#[pyo3(signature = (a, b, dims, window=7))]
fn ssim3d(a: Vec<f64>, b: Vec<f64>, dims: [usize; 3], window: usize) -> PyResult<f64> {
    imaging::ssim3d(&volume(a, dims)?, &volume(b, dims)?, window, None).map_err(err)
}

/// SNDR and ENOB of a coherent sine through one converter.
#[pyfunction]
#[pyo3(signature = (adc=None, amplitude=1.0 - 1.0/512.0, record_len=8192))]
fn adc_sine_test<'py>(
    py: Python<'py>,
    adc: Option<&Bound<'py, PyAny>>,
    amplitude: f64,
    record_len: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let adc: AdcConfig = opt_from_py(py, adc)?;
    let m = metrics::adc_sine_test(&adc, amplitude, &SweepSettings::default(), record_len).map_err(err)?;
    to_py(py, &m)
}

/// Converter configuration whose sine SNDR matches the measured chip.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn chip_level_adc<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &AdcConfig::chip_level(seed))
}

#[pymodule]
fn pacs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(example_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_points, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim3d, m)?)?;
    m.add_function(wrap_pyfunction!(adc_sine_test, m)?)?;
    m.add_function(wrap_pyfunction!(chip_level_adc, m)?)?;
    Ok(())
}
