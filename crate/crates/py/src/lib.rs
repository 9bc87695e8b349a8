//! Python bindings: configs, synthetic scenes, density tools, metrics and
//! the command-line entry point.

use std::path::PathBuf;

use clap::Parser;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bevdg::config::RunConfig;
use bevdg::dvm::{self, Bins};
use bevdg::eval::{self, ConfusionMatrix};
use bevdg::learn;
use bevdg::scene::{self, NUM_CLASSES};
use bevdg::{Error, Matrix};

fn py_err(err: Error) -> PyErr {
    match err {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(err.to_string()),
        Error::NonFinite(_) | Error::EmptyConfusion => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Run configuration; every field has a default.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => RunConfig::from_toml(text).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={})", self.inner.seed)
    }
}

/// A LiDAR scan paired with its camera image and point-to-pixel map.
#[pyclass(name = "ScenePair", from_py_object)]
#[derive(Clone)]
struct PyScenePair {
    inner: scene::ScenePair,
}

#[pymethods]
impl PyScenePair {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: bevdg::io::read_scene(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        bevdg::io::write_scene(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn domain_tag(&self) -> String {
        self.inner.domain_tag.clone()
    }

    #[getter]
    fn image_size(&self) -> (usize, usize) {
        (self.inner.image.width, self.inner.image.height)
    }

    /// `(x, y, z, intensity)` per point.
    fn points(&self) -> Vec<(f32, f32, f32, f32)> {
        self.inner
            .cloud
            .iter()
            .map(|p| (p.position[0], p.position[1], p.position[2], p.intensity))
            .collect()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.cloud.iter().map(|p| p.label as u8).collect()
    }

    fn beam_ids(&self) -> Vec<u16> {
        self.inner.cloud.iter().map(|p| p.beam_id).collect()
    }

    /// Pixel `(u, v)` of each point, `None` when it falls outside the image.
    fn pixels(&self) -> Vec<Option<(f32, f32)>> {
        self.inner
            .projection
            .entries()
            .iter()
            .map(|e| e.map(|p| (p.u, p.v)))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.cloud.len()
    }

    fn __repr__(&self) -> String {
        format!("ScenePair({:?}, {} points)", self.inner.domain_tag, self.inner.cloud.len())
    }
}

/// Synthesizes scene `index` of a domain role (`source1`, `source2`, `target`).
#[pyfunction]
fn synthesize_scene(config: &PyRunConfig, role: &str, index: usize) -> PyResult<PyScenePair> {
    let cfg = &config.inner;
    Ok(PyScenePair {
        inner: eval::synthesize_scene(cfg, cfg.seed, role, index).map_err(py_err)?,
    })
}

/// Re-samples a scene from one role's beam layout to another's.
#[pyfunction]
fn density_transfer(config: &PyRunConfig, pair: &PyScenePair, source: &str, target: &str) -> PyResult<PyScenePair> {
    let cfg = &config.inner;
    let from = eval::role_lidar(cfg, source).map_err(py_err)?;
    let to = eval::role_lidar(cfg, target).map_err(py_err)?;
    Ok(PyScenePair {
        inner: dvm::transfer_scene(&pair.inner, from, to, &cfg.camera).map_err(py_err)?,
    })
}

/// Pillar-population histogram of scenes: `(counts per bin, n_all)`.
#[pyfunction]
#[pyo3(signature = (config, scenes, bins = "1,10,50"))]
fn area_histogram(config: &PyRunConfig, scenes: Vec<PyScenePair>, bins: &str) -> PyResult<(Vec<usize>, usize)> {
    let bins: Bins = bins.parse().map_err(py_err)?;
    let domain = vec![(String::new(), scenes.into_iter().map(|s| s.inner).collect())];
    let rows = eval::histogram_report(&domain, &config.inner, &bins).map_err(py_err)?;
    Ok(match rows.first() {
        Some(r) => (r.hist.counts.clone(), r.hist.n_all),
        None => (vec![0; bins.len()], 0),
    })
}

/// Mean IoU of a 5x5 confusion matrix (rows true, columns predicted).
#[pyfunction]
fn miou(confusion: Vec<Vec<u64>>) -> PyResult<f64> {
    if confusion.len() != NUM_CLASSES || confusion.iter().any(|r| r.len() != NUM_CLASSES) {
        return Err(PyValueError::new_err(format!("confusion must be {NUM_CLASSES}x{NUM_CLASSES}")));
    }
    let mut conf = ConfusionMatrix::default();
    for (dst, src) in conf.counts.iter_mut().zip(&confusion) {
        dst.copy_from_slice(src);
    }
    Ok(eval::miou(&conf).map_err(py_err)?.mean)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    let n = rows.len();
    Ok(Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()))
}

/// Contrastive loss between unit-norm vectors and their density-transferred twins.
#[pyfunction]
#[pyo3(signature = (v, vt, tau = 0.01))]
fn contrastive_loss(v: Vec<Vec<f64>>, vt: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    learn::contrastive_loss(&matrix(v)?, &matrix(vt)?, tau).map_err(py_err)
}

/// Runs the `bevdg` command line with `args` (without the program name);
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("bevdg".to_owned()).chain(args);
    match bevdg::cli::Cli::try_parse_from(argv) {
        Ok(cli) => match bevdg::cli::run(cli) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("bevdg: {err}");
                bevdg::cli::exit_code(&err)
            }
        },
        Err(err) => {
            let _ = err.print();
            err.exit_code()
        }
    }
}

#[pymodule]
fn pybevdg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyScenePair>()?;
    m.add_function(wrap_pyfunction!(synthesize_scene, m)?)?;
    m.add_function(wrap_pyfunction!(density_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(area_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("NUM_CLASSES", NUM_CLASSES)?;
    Ok(())
}
