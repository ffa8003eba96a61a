//! End-to-end analysis of a dataset: optional smoothing, GLM fit, smoothness
//! estimation, and the peak/cluster table.

use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::domain::{Connectivity, DomainError, Mesh, SearchSpace};
use crate::ecd::restrict_window;
use crate::glm::{fit, normalized_residuals, t_map, DesignMatrix, GlmError, StatField};
use crate::infer::{peak_table, InferError, ResultsTable, TableSettings};
use crate::lkc::{estimate_resels, LkcError, NormMode};
use crate::preproc::{gaussian_smooth, PreprocError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Lkc(#[from] LkcError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error("{0}")]
    Invalid(String),
    /// A computed result broke an invariant the pipeline guarantees.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn is_internal(&self) -> bool {
        matches!(self, Self::Internal(_))
    }
}

/// A closed interval along one lattice axis, in that axis' units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    /// Uncorrected point p-value defining the height threshold.
    pub height_p: f64,
    pub alpha: f64,
    /// Per-axis Gaussian FWHM in bins applied to every observation first.
    pub smooth: Option<Vec<f64>>,
    pub window: Option<Window>,
    pub two_sided: bool,
    pub norm_mode: NormMode,
    pub connectivity: Connectivity,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            height_p: 0.001,
            alpha: 0.05,
            smooth: None,
            window: None,
            two_sided: false,
            norm_mode: NormMode::default(),
            connectivity: Connectivity::Full,
        }
    }
}

impl AnalyzeOptions {
    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.height_p > 0.0 && self.height_p < 1.0) {
            return Err(PipelineError::Invalid(format!("height p must lie in (0, 1), got {}", self.height_p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(w) = self.window {
            if !(w.lo.is_finite() && w.hi.is_finite() && w.lo <= w.hi) {
                return Err(PipelineError::Invalid(format!("window {}:{} is not an ordered finite interval", w.lo, w.hi)));
            }
        }
        Ok(())
    }
}

/// Index range `lo..=hi` covered by an axis-unit interval.
pub fn window_indices(dataset: &Dataset, window: &Window) -> Result<(usize, usize), PipelineError> {
    let dims = dataset.dims();
    if window.axis >= dims.len() {
        return Err(PipelineError::Invalid(format!("window axis {} out of range for {} dims", window.axis, dims.len())));
    }
    let (origin, step) = dataset.meta.axis_scale()[window.axis];
    let a = (window.lo - origin) / step;
    let b = (window.hi - origin) / step;
    let (a, b) = (a.min(b), a.max(b));
    // absorb floating error when an endpoint sits on a sample
    let first = (a - 1e-9).ceil().max(0.0);
    let last = (b + 1e-9).floor().min((dims[window.axis] - 1) as f64);
    if first > last {
        return Err(PipelineError::Invalid(format!(
            "window {}:{} contains no samples of axis {}",
            window.lo, window.hi, dataset.meta.axes[window.axis]
        )));
    }
    Ok((first as usize, last as usize))
}

/// Search space of a dataset: its lattice, or `mesh` when the data live on
/// mesh vertices. The dataset mask applies in both cases.
pub fn search_space(dataset: &Dataset, mesh: Option<Mesh>) -> Result<SearchSpace, PipelineError> {
    match mesh {
        None => Ok(dataset.lattice()?),
        Some(m) => {
            if dataset.n_values() != m.len() {
                return Err(PipelineError::Invalid(format!(
                    "mesh has {} vertices but each observation holds {} values",
                    m.len(),
                    dataset.n_values()
                )));
            }
            let space = SearchSpace::from(m);
            Ok(match &dataset.mask {
                Some(mask) => space.restrict(mask)?,
                None => space,
            })
        }
    }
}

/// Everything produced by one analysis run.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub table: ResultsTable,
    pub stat: StatField,
    pub space: SearchSpace,
}

pub fn analyze(
    dataset: &Dataset,
    mesh: Option<Mesh>,
    design: &DesignMatrix,
    contrast: &[f64],
    options: &AnalyzeOptions,
) -> Result<Analysis, PipelineError> {
    options.validate()?;
    dataset.validate()?;
    if design.n_obs() != dataset.meta.n_obs {
        return Err(PipelineError::Invalid(format!(
            "design has {} rows but the dataset has {} observations",
            design.n_obs(),
            dataset.meta.n_obs
        )));
    }
    if let Some((i, v)) = dataset.observations.iter().enumerate().find_map(|(i, o)| o.iter().position(|x| !x.is_finite()).map(|v| (i, v))) {
        return Err(PipelineError::Invalid(format!("observation {i} has a non-finite value at index {v}")));
    }
    let is_mesh = mesh.is_some();
    let mut space = search_space(dataset, mesh)?;
    let mask = space.mask().to_vec();

    let observations: Vec<Vec<f64>> = match &options.smooth {
        None => dataset.observations.clone(),
        Some(_) if is_mesh => {
            return Err(PipelineError::Invalid("Gaussian smoothing needs a lattice; smooth mesh data beforehand".into()));
        }
        Some(fwhm) => dataset
            .observations
            .iter()
            .map(|o| gaussian_smooth(o, dataset.dims(), Some(&mask), fwhm))
            .collect::<Result<_, _>>()?,
    };

    let glm = fit(&observations, design)?;
    let mut stat = t_map(&glm, contrast)?;
    for (v, &m) in mask.iter().enumerate() {
        if !m {
            stat.values[v] = 0.0;
        } else if !stat.values[v].is_finite() {
            return Err(PipelineError::Invalid(format!("zero residual variance with a non-zero effect at vertex {v}")));
        }
    }
    let residuals = normalized_residuals(&glm);

    let mut window_note = None;
    if let Some(w) = &options.window {
        if is_mesh {
            return Err(PipelineError::Invalid("a window restriction needs a lattice".into()));
        }
        let (lo, hi) = window_indices(dataset, w)?;
        let restricted = restrict_window(&space, w.axis, lo, hi)?;
        if restricted != space {
            window_note = Some(format!(
                "search volume restricted to {} from {} to {} {}",
                dataset.meta.axes[w.axis], w.lo, w.hi, dataset.meta.units[w.axis]
            ));
            space = restricted;
        }
    }
    let resels = estimate_resels(&residuals, &space, options.norm_mode)?;

    let tails = if options.two_sided { 2.0 } else { 1.0 };
    let field = stat.field_type;
    let mut settings = TableSettings::new(options.alpha / tails, field.isf(options.height_p / tails));
    settings.connectivity = options.connectivity;
    if !is_mesh {
        settings.axis_scale = Some(dataset.meta.axis_scale());
    }
    let mut table = if options.two_sided {
        let positive = peak_table(&stat, &space, &resels, &settings)?;
        let negative = peak_table(&stat.negated(), &space, &resels, &settings)?;
        ResultsTable::two_sided(positive, negative)
    } else {
        peak_table(&stat, &space, &resels, &settings)?
    };
    table.notes.extend(window_note);
    check_table(&table)?;
    Ok(Analysis { table, stat, space })
}

fn check_table(table: &ResultsTable) -> Result<(), PipelineError> {
    let prob = |p: f64| (0.0..=1.0).contains(&p);
    for p in &table.peaks {
        if !p.t.is_finite() || p.z.is_nan() {
            return Err(PipelineError::Internal(format!("peak at vertex {} has t = {}, z = {}", p.vertex, p.t, p.z)));
        }
        if ![p.p_unc, p.p_fwe, p.p_peak, p.q_fdr].into_iter().all(prob) {
            return Err(PipelineError::Internal(format!("peak at vertex {} has a p-value outside [0, 1]", p.vertex)));
        }
    }
    if table.resels.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(PipelineError::Internal(format!("resel vector {:?} is not finite and non-negative", table.resels)));
    }
    if table.p_fwe.is_some_and(|p| !prob(p)) {
        return Err(PipelineError::Internal("global FWE p-value outside [0, 1]".into()));
    }
    Ok(())
}
