//! Mass-univariate general linear model: one least-squares fit per vertex,
//! t-statistic fields for a contrast, and unit-normalized residuals.

use std::io::Read;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::ecd::FieldType;
use crate::special::t_to_z;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("design matrix is empty")]
    EmptyDesign,
    #[error("design has {rows} rows but {observations} observations were supplied")]
    RowMismatch { rows: usize, observations: usize },
    #[error("{0} regressor names for {1} columns")]
    NameMismatch(usize, usize),
    #[error("observation {index} has {got} values, expected {expected}")]
    ObservationLength { index: usize, expected: usize, got: usize },
    #[error("no residual degrees of freedom (n_obs = {n_obs}, rank = {rank})")]
    NoDegreesOfFreedom { n_obs: usize, rank: usize },
    #[error("contrast has {got} weights, design has {expected} regressors")]
    ContrastLength { expected: usize, got: usize },
    #[error("contrast is not estimable under this design")]
    NotEstimable,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self, GlmError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GlmError::EmptyDesign);
        }
        if names.len() != values.ncols() {
            return Err(GlmError::NameMismatch(names.len(), values.ncols()));
        }
        Ok(Self { values, names })
    }

    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>) -> Result<Self, GlmError> {
        let ncols = names.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(GlmError::Parse(format!("row {i} has {} values, expected {ncols}", r.len())));
        }
        let values = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        Self::new(values, names)
    }

    /// Reads a CSV with a header row of regressor names.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GlmError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(parse_row(&rec?)?);
        }
        Self::from_rows(&rows, names)
    }

    /// A single column of ones (one-sample test).
    pub fn one_sample(n: usize) -> Self {
        Self { values: DMatrix::from_element(n, 1, 1.0), names: vec!["mean".into()] }
    }

    /// Paired design for `n` subjects: rows `0..n` are responses, rows
    /// `n..2n` the matching reference images. Column 0 is the effect, then
    /// one indicator per subject. Residual dof is `n - 1`.
    pub fn paired(n: usize) -> Self {
        let mut values = DMatrix::zeros(2 * n, n + 1);
        for s in 0..n {
            values[(s, 0)] = 1.0;
            values[(s, s + 1)] = 1.0;
            values[(n + s, s + 1)] = 1.0;
        }
        let mut names = vec!["effect".to_string()];
        names.extend((0..n).map(|s| format!("subject{}", s + 1)));
        Self { values, names }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_reg(&self) -> usize {
        self.values.ncols()
    }

    pub fn rank(&self) -> usize {
        DesignSolver::new(self).rank
    }
}

fn parse_row(rec: &csv::StringRecord) -> Result<Vec<f64>, GlmError> {
    rec.iter()
        .map(|f| f.parse::<f64>().map_err(|_| GlmError::Parse(format!("not a number: `{f}`"))))
        .collect()
}

/// Reads a contrast: one CSV row of weights (an optional header row of names is skipped).
pub fn contrast_from_csv<R: Read>(reader: R) -> Result<Vec<f64>, GlmError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    for rec in rdr.records() {
        let rec = rec?;
        if let Ok(row) = parse_row(&rec) {
            return Ok(row);
        }
    }
    Err(GlmError::Parse("no numeric contrast row".into()))
}

/// Pseudo-inverse quantities of a design, computed once per fit.
#[derive(Debug, Clone)]
struct DesignSolver {
    /// `X^+`, n_reg x n_obs.
    pinv: DMatrix<f64>,
    /// `(X^T X)^+ = X^+ X^+^T`.
    cov_unscaled: DMatrix<f64>,
    /// Projector onto the row space of X, `X^+ X`.
    row_projector: DMatrix<f64>,
    rank: usize,
}

impl DesignSolver {
    fn new(design: &DesignMatrix) -> Self {
        let x = &design.values;
        let svd = x.clone().svd(true, true);
        let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = RANK_TOLERANCE * s_max;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut pinv = DMatrix::zeros(x.ncols(), x.nrows());
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff {
                pinv += v_t.row(k).transpose() * u.column(k).transpose() / s;
            }
        }
        let cov_unscaled = &pinv * pinv.transpose();
        let row_projector = &pinv * x;
        Self { pinv, cov_unscaled, row_projector, rank }
    }
}

/// Per-vertex least-squares fit. Vertex-major storage.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub n_obs: usize,
    pub n_reg: usize,
    pub n_vertices: usize,
    pub rank: usize,
    pub dof: usize,
    /// `n_reg` estimates per vertex.
    pub betas: Vec<f64>,
    /// `n_obs` residuals per vertex.
    pub residuals: Vec<f64>,
    /// Residual sum of squares over `dof`, per vertex.
    pub sigma2: Vec<f64>,
    solver: DesignSolver,
}

impl GlmFit {
    pub fn betas_at(&self, v: usize) -> &[f64] {
        &self.betas[v * self.n_reg..(v + 1) * self.n_reg]
    }

    pub fn residuals_at(&self, v: usize) -> &[f64] {
        &self.residuals[v * self.n_obs..(v + 1) * self.n_obs]
    }

    pub fn field_type(&self) -> FieldType {
        FieldType::student_t(self.dof as f64)
    }
}

/// Fits the design at every vertex. `observations[k]` is the k-th image.
pub fn fit(observations: &[Vec<f64>], design: &DesignMatrix) -> Result<GlmFit, GlmError> {
    let n_obs = design.n_obs();
    if observations.len() != n_obs {
        return Err(GlmError::RowMismatch { rows: n_obs, observations: observations.len() });
    }
    let n_vertices = observations[0].len();
    if let Some((index, o)) = observations.iter().enumerate().find(|(_, o)| o.len() != n_vertices) {
        return Err(GlmError::ObservationLength { index, expected: n_vertices, got: o.len() });
    }
    let solver = DesignSolver::new(design);
    if solver.rank >= n_obs {
        return Err(GlmError::NoDegreesOfFreedom { n_obs, rank: solver.rank });
    }
    let dof = n_obs - solver.rank;
    let n_reg = design.n_reg();
    let x = &design.values;
    let pinv = &solver.pinv;

    let mut betas = vec![0.0; n_vertices * n_reg];
    let mut residuals = vec![0.0; n_vertices * n_obs];
    let mut sigma2 = vec![0.0; n_vertices];
    betas
        .par_chunks_mut(n_reg)
        .zip(residuals.par_chunks_mut(n_obs))
        .zip(sigma2.par_iter_mut())
        .enumerate()
        .for_each(|(v, ((beta, resid), s2))| {
            for (j, b) in beta.iter_mut().enumerate() {
                *b = (0..n_obs).map(|k| pinv[(j, k)] * observations[k][v]).sum();
            }
            let mut rss = 0.0;
            for (k, r) in resid.iter_mut().enumerate() {
                let fitted: f64 = (0..n_reg).map(|j| x[(k, j)] * beta[j]).sum();
                *r = observations[k][v] - fitted;
                rss += *r * *r;
            }
            *s2 = rss / dof as f64;
        });
    Ok(GlmFit { n_obs, n_reg, n_vertices, rank: solver.rank, dof, betas, residuals, sigma2, solver })
}

/// A statistic value per vertex and its null distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StatField {
    pub values: Vec<f64>,
    pub field_type: FieldType,
}

impl StatField {
    pub fn new(values: Vec<f64>, field_type: FieldType) -> Self {
        Self { values, field_type }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sign-flipped field, for the opposite one-sided test.
    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect(), field_type: self.field_type }
    }
}

/// Checks that `contrast` lies in the row space of the design.
fn check_estimable(fit: &GlmFit, contrast: &[f64]) -> Result<(), GlmError> {
    if contrast.len() != fit.n_reg {
        return Err(GlmError::ContrastLength { expected: fit.n_reg, got: contrast.len() });
    }
    let p = &fit.solver.row_projector;
    let norm = contrast.iter().map(|c| c * c).sum::<f64>().sqrt();
    let resid: f64 = (0..fit.n_reg)
        .map(|i| {
            let pc: f64 = (0..fit.n_reg).map(|j| p[(i, j)] * contrast[j]).sum();
            (pc - contrast[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    if resid > 1e-8 * norm.max(1.0) {
        return Err(GlmError::NotEstimable);
    }
    Ok(())
}

/// t-statistic field `c'b / sqrt(s^2 c'(X'X)^+ c)`.
///
/// Vertices with zero residual variance give `+-inf` by the sign of `c'b`,
/// or 0 when `c'b = 0`.
pub fn t_map(fit: &GlmFit, contrast: &[f64]) -> Result<StatField, GlmError> {
    check_estimable(fit, contrast)?;
    let cov = &fit.solver.cov_unscaled;
    let var_c: f64 = (0..fit.n_reg)
        .map(|i| (0..fit.n_reg).map(|j| contrast[i] * cov[(i, j)] * contrast[j]).sum::<f64>())
        .sum();
    let values = (0..fit.n_vertices)
        .into_par_iter()
        .map(|v| {
            let est: f64 = fit.betas_at(v).iter().zip(contrast).map(|(b, c)| b * c).sum();
            let s2 = fit.sigma2[v];
            if est == 0.0 {
                0.0
            } else if s2 == 0.0 {
                est.signum() * f64::INFINITY
            } else {
                est / (s2 * var_c).sqrt()
            }
        })
        .collect();
    Ok(StatField { values, field_type: fit.field_type() })
}

/// `n` unit-normalized residual vectors, one per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub n: usize,
    /// `r / ||r||`, `n` values per vertex (zero where `||r|| = 0`).
    pub u: Vec<f64>,
    /// `||r||` per vertex.
    pub norms: Vec<f64>,
    /// Vertices whose residual vector is identically zero.
    pub flagged: Vec<bool>,
}

impl ResidualSet {
    /// Normalizes raw residuals given vertex-major, `n` per vertex.
    pub fn from_residuals(n: usize, residuals: &[f64]) -> Self {
        assert!(n > 0 && residuals.len().is_multiple_of(n), "residual buffer is not a multiple of n");
        let n_vertices = residuals.len() / n;
        let mut u = vec![0.0; residuals.len()];
        let mut norms = vec![0.0; n_vertices];
        let mut flagged = vec![false; n_vertices];
        for v in 0..n_vertices {
            let r = &residuals[v * n..(v + 1) * n];
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[v] = norm;
            if norm > 0.0 {
                for (out, x) in u[v * n..(v + 1) * n].iter_mut().zip(r) {
                    *out = x / norm;
                }
            } else {
                flagged[v] = true;
            }
        }
        Self { n, u, norms, flagged }
    }

    pub fn n_vertices(&self) -> usize {
        self.norms.len()
    }

    pub fn at(&self, v: usize) -> &[f64] {
        &self.u[v * self.n..(v + 1) * self.n]
    }
}

pub fn normalized_residuals(fit: &GlmFit) -> ResidualSet {
    ResidualSet::from_residuals(fit.n_obs, &fit.residuals)
}

/// Z-score equivalents of a statistic field (identity for Gaussian fields).
pub fn z_equivalent(stat: &StatField) -> Vec<f64> {
    match stat.field_type {
        FieldType::Gaussian => stat.values.clone(),
        FieldType::StudentT { dof } => stat.values.iter().map(|&t| t_to_z(t, dof)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_sample_by_hand() {
        let data = vec![vec![1.0], vec![2.0], vec![3.0]];
        let fit = fit(&data, &DesignMatrix::one_sample(3)).unwrap();
        assert_eq!(fit.dof, 2);
        assert_relative_eq!(fit.betas[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.sigma2[0], 1.0, epsilon = 1e-12);
        for (r, want) in fit.residuals.iter().zip([-1.0, 0.0, 1.0]) {
            assert_relative_eq!(*r, want, epsilon = 1e-12);
        }
        let t = t_map(&fit, &[1.0]).unwrap();
        assert_relative_eq!(t.values[0], 2.0 / (1.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert_eq!(t.field_type, FieldType::student_t(2.0));
    }

    #[test]
    fn exact_fit_has_zero_residuals_and_infinite_t() {
        let data = vec![vec![2.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]];
        let fit = fit(&data, &DesignMatrix::one_sample(3)).unwrap();
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-14));
        assert!(fit.sigma2.iter().all(|s| s.abs() < 1e-28));
        let mut exact = fit.clone();
        exact.sigma2 = vec![0.0, 0.0];
        let t = t_map(&exact, &[1.0]).unwrap();
        assert_eq!(t.values, vec![f64::INFINITY, 0.0]);
        let res = normalized_residuals(&exact);
        assert!(res.flagged[1]);
    }

    #[test]
    fn zero_contrast_gives_zero_t() {
        let data = vec![vec![1.0, 5.0], vec![2.0, -1.0], vec![4.0, 0.5]];
        let fit = fit(&data, &DesignMatrix::one_sample(3)).unwrap();
        assert_eq!(t_map(&fit, &[0.0]).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn design_errors() {
        let data = vec![vec![1.0]; 2];
        assert!(matches!(fit(&data, &DesignMatrix::one_sample(3)), Err(GlmError::RowMismatch { .. })));
        assert!(matches!(fit(&[vec![1.0]], &DesignMatrix::one_sample(1)), Err(GlmError::NoDegreesOfFreedom { .. })));
        // two identical columns: only their sum is estimable
        let x = DesignMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(x.rank(), 1);
        let f = fit(&[vec![1.0], vec![2.0], vec![4.0]], &x).unwrap();
        assert_eq!(f.dof, 2);
        assert!(matches!(t_map(&f, &[1.0, -1.0]), Err(GlmError::NotEstimable)));
        assert!(t_map(&f, &[1.0, 1.0]).is_ok());
        assert!(matches!(t_map(&f, &[1.0]), Err(GlmError::ContrastLength { .. })));
    }

    #[test]
    fn residual_normalization() {
        let r = ResidualSet::from_residuals(2, &[3.0, 4.0]);
        assert_relative_eq!(r.u[0], 0.6);
        assert_relative_eq!(r.u[1], 0.8);
        let z = ResidualSet::from_residuals(3, &[0.0, 0.0, 0.0]);
        assert_eq!(z.u, vec![0.0; 3]);
        assert!(z.flagged[0]);
    }

    #[test]
    fn csv_inputs() {
        let x = DesignMatrix::from_csv("mean,age\n1,30\n1,41\n1,27\n".as_bytes()).unwrap();
        assert_eq!(x.names(), &["mean".to_string(), "age".to_string()]);
        assert_eq!(x.values()[(1, 1)], 41.0);
        assert_eq!(contrast_from_csv("mean,age\n1,0\n".as_bytes()).unwrap(), vec![1.0, 0.0]);
        assert_eq!(contrast_from_csv("0, 1\n".as_bytes()).unwrap(), vec![0.0, 1.0]);
        assert!(DesignMatrix::from_csv("a,b\n1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn paired_design_shape() {
        let x = DesignMatrix::paired(13);
        assert_eq!((x.n_obs(), x.n_reg(), x.rank()), (26, 14, 14));
    }

    #[test]
    fn z_equivalents_from_tables() {
        let field = StatField::new(vec![8.71, 6.86, 0.0, -8.71], FieldType::student_t(12.0));
        let z = z_equivalent(&field);
        assert!((z[0] - 4.80).abs() < 0.02);
        assert!((z[1] - 4.29).abs() < 0.02);
        assert_eq!(z[2], 0.0);
        assert_eq!(z[3], -z[0]);
        let z = z_equivalent(&StatField::new(vec![9.05], FieldType::student_t(11.0)));
        assert!((z[0] - 4.75).abs() < 0.02);
    }
}
