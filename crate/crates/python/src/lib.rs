//! Python bindings for `topoinfer`.
//!
//! Arrays cross the boundary as flat Python lists in C order. Structured
//! results (tables, simulation reports) are returned as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use topoinfer::dataset::Dataset;
use topoinfer::domain::{build_mesh, connected_components, Connectivity, IntrinsicVolumes, Lattice, SearchSpace};
use topoinfer::ecd::{corrected_threshold, ec_density as ecd_density, expected_ec, fwe_p, FieldType};
use topoinfer::glm::{fit, normalized_residuals, t_map, DesignMatrix};
use topoinfer::infer::local_maxima;
use topoinfer::lkc::{estimate_resels as lkc_estimate, NormMode, ReselVector};
use topoinfer::pipeline::{self, AnalyzeOptions, Window};
use topoinfer::preproc;
use topoinfer::report::{axis_headers, render_report};
use topoinfer::simulate::{calibrate, SimConfig, SimField};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn field_type(dof: Option<f64>) -> FieldType {
    dof.map_or(FieldType::Gaussian, FieldType::student_t)
}

fn norm_mode(name: &str) -> PyResult<NormMode> {
    match name {
        "source" => Ok(NormMode::Source),
        "exact" => Ok(NormMode::Exact),
        "mean" => Ok(NormMode::Mean),
        other => Err(value_error(format!("norm must be 'source', 'exact' or 'mean', got {other:?}"))),
    }
}

fn connectivity(name: &str) -> PyResult<Connectivity> {
    match name {
        "full" => Ok(Connectivity::Full),
        "face" => Ok(Connectivity::Face),
        other => Err(value_error(format!("connectivity must be 'full' or 'face', got {other:?}"))),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn design_or_default(design: Option<Vec<Vec<f64>>>, n_obs: usize) -> PyResult<DesignMatrix> {
    match design {
        Some(rows) => {
            let names = (0..rows.first().map_or(0, Vec::len)).map(|j| format!("x{j}")).collect();
            DesignMatrix::from_rows(&rows, names).map_err(value_error)
        }
        None => Ok(DesignMatrix::one_sample(n_obs)),
    }
}

fn contrast_or_default(contrast: Option<Vec<f64>>, design: &DesignMatrix) -> Vec<f64> {
    contrast.unwrap_or_else(|| {
        let mut c = vec![0.0; design.n_reg()];
        c[0] = 1.0;
        c
    })
}

/// A lattice or simplicial mesh with an in-mask vertex set.
#[pyclass(name = "SearchSpace", module = "pytopoinfer", frozen)]
struct PySearchSpace {
    inner: SearchSpace,
}

#[pymethods]
impl PySearchSpace {
    #[staticmethod]
    #[pyo3(signature = (dims, mask=None))]
    fn lattice(dims: Vec<usize>, mask: Option<Vec<bool>>) -> PyResult<Self> {
        let lattice = match mask {
            Some(m) => Lattice::new(&dims, m),
            None => Lattice::full(&dims),
        }
        .map_err(value_error)?;
        Ok(Self { inner: lattice.into() })
    }

    #[staticmethod]
    fn mesh(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(Self { inner: build_mesh(vertices, simplices).map_err(value_error)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask().to_vec()
    }

    #[getter]
    fn is_mesh(&self) -> bool {
        self.inner.as_mesh().is_some()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Number of in-mask vertices.
    fn volume(&self) -> usize {
        self.inner.volume()
    }

    /// `[mu_0, ..., mu_D]`.
    fn intrinsic_volumes(&self) -> Vec<f64> {
        self.inner.intrinsic_volumes().mu
    }

    fn restrict(&self, mask: Vec<bool>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.restrict(&mask).map_err(value_error)? })
    }

    #[pyo3(signature = (values, threshold=f64::NEG_INFINITY, connectivity="full"))]
    fn local_maxima(&self, values: Vec<f64>, threshold: f64, connectivity: &str) -> PyResult<Vec<usize>> {
        self.check_len(values.len())?;
        Ok(local_maxima(&values, threshold, &self.inner, self::connectivity(connectivity)?))
    }

    /// Connected components of the in-mask vertices where `member` is true.
    #[pyo3(signature = (member, connectivity="full"))]
    fn components(&self, member: Vec<bool>, connectivity: &str) -> PyResult<Vec<Vec<usize>>> {
        self.check_len(member.len())?;
        Ok(connected_components(&self.inner, &member, self::connectivity(connectivity)?))
    }

    fn __repr__(&self) -> String {
        let kind = if self.is_mesh() { "mesh" } else { "lattice" };
        format!("SearchSpace({kind}, dim={}, vertices={}, in_mask={})", self.inner.dim(), self.inner.len(), self.inner.volume())
    }
}

impl PySearchSpace {
    fn check_len(&self, got: usize) -> PyResult<()> {
        if got != self.inner.len() {
            return Err(value_error(format!("expected {} values, got {got}", self.inner.len())));
        }
        Ok(())
    }
}

/// Lipschitz-Killing curvatures and resel counts of a search space.
#[pyclass(name = "ReselVector", module = "pytopoinfer", frozen)]
struct PyReselVector {
    inner: ReselVector,
}

#[pymethods]
impl PyReselVector {
    /// Interpolates lower-dimensional resels from `resels_D` and the intrinsic volumes.
    #[staticmethod]
    fn from_resels(resels_top: f64, intrinsic_volumes: Vec<f64>) -> PyResult<Self> {
        let mu = IntrinsicVolumes { mu: intrinsic_volumes };
        Ok(Self { inner: ReselVector::from_resels(resels_top, &mu).map_err(value_error)? })
    }

    #[getter]
    fn lkc(&self) -> Vec<f64> {
        self.inner.lkc.clone()
    }

    #[getter]
    fn resels(&self) -> Vec<f64> {
        self.inner.resels.clone()
    }

    #[getter]
    fn fwhm(&self) -> Option<Vec<f64>> {
        self.inner.fwhm.clone()
    }

    /// `(total, per-dimension contributions)` of the expected EC at `t`.
    #[pyo3(signature = (t, dof=None))]
    fn expected_ec(&self, t: f64, dof: Option<f64>) -> (f64, Vec<f64>) {
        let e = expected_ec(&self.inner.resels, field_type(dof), t);
        (e.total, e.contributions)
    }

    #[pyo3(signature = (t, dof=None))]
    fn fwe_p(&self, t: f64, dof: Option<f64>) -> f64 {
        fwe_p(t, &self.inner.resels, field_type(dof))
    }

    #[pyo3(signature = (alpha=0.05, dof=None))]
    fn corrected_threshold(&self, alpha: f64, dof: Option<f64>) -> PyResult<f64> {
        Ok(corrected_threshold(alpha, &self.inner.resels, field_type(dof)).map_err(value_error)?.t)
    }

    fn __repr__(&self) -> String {
        format!("ReselVector(resels={:?})", self.inner.resels)
    }
}

/// Observations on a regular grid, as stored in a dataset directory.
#[pyclass(name = "Dataset", module = "pytopoinfer", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (observations, dims, axes=None, units=None, mask=None, origin=None, step=None))]
    fn new(
        observations: Vec<Vec<f64>>,
        dims: Vec<usize>,
        axes: Option<Vec<String>>,
        units: Option<Vec<String>>,
        mask: Option<Vec<bool>>,
        origin: Option<Vec<f64>>,
        step: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let axes = axes.unwrap_or_else(|| (0..dims.len()).map(|a| format!("axis{a}")).collect());
        let units = units.unwrap_or_else(|| vec![String::new(); dims.len()]);
        let mut ds = Dataset::new(dims, axes, units, observations, mask).map_err(value_error)?;
        if origin.is_some() || step.is_some() {
            let n = ds.dims().len();
            ds = ds.with_axis_scale(origin.unwrap_or(vec![0.0; n]), step.unwrap_or(vec![1.0; n])).map_err(value_error)?;
        }
        Ok(Self { inner: ds })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Dataset::read(path).map_err(value_error)? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(value_error)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn axes(&self) -> Vec<String> {
        self.inner.meta.axes.clone()
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.meta.units.clone()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.meta.n_obs
    }

    #[getter]
    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observations.clone()
    }

    #[getter]
    fn mask(&self) -> Option<Vec<bool>> {
        self.inner.mask.clone()
    }

    fn search_space(&self) -> PyResult<PySearchSpace> {
        Ok(PySearchSpace { inner: self.inner.lattice().map_err(value_error)? })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(dims={:?}, n_obs={})", self.inner.dims(), self.inner.meta.n_obs)
    }
}

/// Output of `analyze`: the results dict, the rendered report and the statistic map.
#[pyclass(name = "Analysis", module = "pytopoinfer", frozen)]
struct PyAnalysis {
    #[pyo3(get)]
    report: String,
    #[pyo3(get)]
    stat: Vec<f64>,
    #[pyo3(get)]
    dof: Option<f64>,
    results: Py<PyAny>,
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn results(&self, py: Python<'_>) -> Py<PyAny> {
        self.results.clone_ref(py)
    }
}

/// EC density `rho_d(t)` in resel units; Gaussian unless `dof` is given.
#[pyfunction]
#[pyo3(signature = (d, t, dof=None))]
fn ec_density(d: usize, t: f64, dof: Option<f64>) -> PyResult<f64> {
    ecd_density(field_type(dof), d, t).map_err(value_error)
}

/// Fits the linear model and returns `(t values, degrees of freedom)`.
#[pyfunction]
#[pyo3(signature = (observations, design=None, contrast=None))]
fn t_statistic(observations: Vec<Vec<f64>>, design: Option<Vec<Vec<f64>>>, contrast: Option<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    let design = design_or_default(design, observations.len())?;
    let contrast = contrast_or_default(contrast, &design);
    let glm = fit(&observations, &design).map_err(value_error)?;
    let stat = t_map(&glm, &contrast).map_err(value_error)?;
    let dof = stat.field_type.dof().unwrap_or(f64::INFINITY);
    Ok((stat.values, dof))
}

/// Resel counts estimated from the model residuals of `observations`.
#[pyfunction]
#[pyo3(signature = (observations, space, design=None, norm="source"))]
fn estimate_resels(observations: Vec<Vec<f64>>, space: &PySearchSpace, design: Option<Vec<Vec<f64>>>, norm: &str) -> PyResult<PyReselVector> {
    let design = design_or_default(design, observations.len())?;
    let glm = fit(&observations, &design).map_err(value_error)?;
    let inner = lkc_estimate(&normalized_residuals(&glm), &space.inner, norm_mode(norm)?).map_err(value_error)?;
    Ok(PyReselVector { inner })
}

/// Peak and cluster inference on a dataset, as the `analyze` command does.
#[pyfunction]
#[pyo3(signature = (
    dataset, design=None, contrast=None, height_p=0.001, alpha=0.05, two_sided=false,
    smooth=None, window=None, window_axis=None, norm="source", connectivity="full", mesh=None,
))]
#[allow(clippy::too_many_arguments)]
fn analyze(
    py: Python<'_>,
    dataset: &PyDataset,
    design: Option<Vec<Vec<f64>>>,
    contrast: Option<Vec<f64>>,
    height_p: f64,
    alpha: f64,
    two_sided: bool,
    smooth: Option<Vec<f64>>,
    window: Option<(f64, f64)>,
    window_axis: Option<usize>,
    norm: &str,
    connectivity: &str,
    mesh: Option<&PySearchSpace>,
) -> PyResult<PyAnalysis> {
    let ds = &dataset.inner;
    let design = design_or_default(design, ds.meta.n_obs)?;
    let contrast = contrast_or_default(contrast, &design);
    let mesh = match mesh {
        Some(space) => Some(space.inner.as_mesh().ok_or_else(|| value_error("mesh must be a mesh search space"))?.clone()),
        None => None,
    };
    let options = AnalyzeOptions {
        height_p,
        alpha,
        smooth,
        window: window.map(|(lo, hi)| Window { axis: window_axis.unwrap_or(ds.dims().len() - 1), lo, hi }),
        two_sided,
        norm_mode: norm_mode(norm)?,
        connectivity: self::connectivity(connectivity)?,
    };
    let analysis = py
        .detach(|| pipeline::analyze(ds, mesh, &design, &contrast, &options))
        .map_err(|e| if e.is_internal() { PyRuntimeError::new_err(e.to_string()) } else { value_error(e) })?;
    let report = render_report(&analysis.table, &axis_headers(&ds.meta, &analysis.space));
    Ok(PyAnalysis {
        report,
        dof: analysis.stat.field_type.dof(),
        stat: analysis.stat.values,
        results: to_py(py, &analysis.table)?.unbind(),
    })
}

/// Monte Carlo EC calibration and FWE rate for smooth fields.
#[pyfunction]
#[pyo3(signature = (dims, fwhm, n_realizations=2000, seed=2010, thresholds=vec![2.0, 2.5, 3.0, 3.5], alpha=0.05, n_subjects=None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    dims: Vec<usize>,
    fwhm: Vec<f64>,
    n_realizations: usize,
    seed: u64,
    thresholds: Vec<f64>,
    alpha: f64,
    n_subjects: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut config = SimConfig::new(dims, fwhm, n_realizations, seed);
    if let Some(n) = n_subjects {
        config.field = SimField::StudentT { n_subjects: n };
    }
    let report = py.detach(|| calibrate(&config, &thresholds, alpha)).map_err(value_error)?;
    to_py(py, &report)
}

/// Separable Gaussian smoothing with mask renormalization.
#[pyfunction]
#[pyo3(signature = (values, dims, fwhm, mask=None))]
fn gaussian_smooth(values: Vec<f64>, dims: Vec<usize>, fwhm: Vec<f64>, mask: Option<Vec<bool>>) -> PyResult<Vec<f64>> {
    preproc::gaussian_smooth(&values, &dims, mask.as_deref(), &fwhm).map_err(value_error)
}

/// Explicit graph-Laplacian diffusion on a search space.
#[pyfunction]
fn laplacian_smooth(space: &PySearchSpace, values: Vec<f64>, steps: usize, tau: f64) -> PyResult<Vec<f64>> {
    preproc::laplacian_smooth(&space.inner, &values, steps, tau).map_err(value_error)
}

/// Morlet wavelet power; returns a dict with `power` (one row per frequency), `freqs`, `times` and `edge`.
#[pyfunction]
#[pyo3(signature = (signal, sample_rate, freqs, cycles=preproc::DEFAULT_CYCLES))]
fn morlet_tf<'py>(py: Python<'py>, signal: Vec<f64>, sample_rate: f64, freqs: Vec<f64>, cycles: f64) -> PyResult<Bound<'py, PyAny>> {
    let tf = preproc::morlet_tf(&signal, sample_rate, &freqs, cycles).map_err(value_error)?;
    let out = PyDict::new(py);
    let rows: Vec<Vec<f64>> = (0..tf.freqs.len()).map(|f| tf.row(f).to_vec()).collect();
    out.set_item("power", rows)?;
    out.set_item("freqs", tf.freqs)?;
    out.set_item("times", tf.times)?;
    out.set_item("edge", tf.edge)?;
    Ok(out.into_any())
}

/// Linear interpolation of sensor values onto a grid; returns `(values, mask)`.
#[pyfunction]
#[pyo3(signature = (positions, values, dims, names=None))]
fn interpolate_to_grid(positions: Vec<[f64; 2]>, values: Vec<f64>, dims: [usize; 2], names: Option<Vec<String>>) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let names = names.unwrap_or_else(|| (0..positions.len()).map(|i| format!("S{i}")).collect());
    let layout = preproc::SensorLayout::new(names, positions).map_err(value_error)?;
    let grid = preproc::interpolate_to_grid(&layout, &values, dims).map_err(value_error)?;
    Ok((grid.values, grid.mask))
}

#[pymodule]
fn pytopoinfer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySearchSpace>()?;
    m.add_class::<PyReselVector>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(ec_density, m)?)?;
    m.add_function(wrap_pyfunction!(t_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_resels, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(morlet_tf, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_to_grid, m)?)?;
    Ok(())
}
