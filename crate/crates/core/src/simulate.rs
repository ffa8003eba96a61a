//! Monte Carlo calibration with smooth stationary Gaussian random fields.
//!
//! Fields are white noise on a padded grid convolved with a truncated
//! Gaussian kernel and cropped, so every vertex sees the full kernel and the
//! marginals are exactly standard normal. Realization `i` of seed `s` is
//! drawn from ChaCha8 stream `i` keyed by `s`.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{count_cells, elementary_symmetric, MAX_DIM};
use crate::ecd::{corrected_threshold, expected_ec, CorrectedThreshold, EcdError, FieldType};
use crate::glm::{self, DesignMatrix, GlmError};
use crate::lkc::ReselVector;

/// Default limit on padded grid cells per generated field.
pub const DEFAULT_MAX_CELLS: usize = 1 << 26;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dims must have 1 to 3 positive entries, got {0:?}")]
    Dims(Vec<usize>),
    #[error("{fwhm} FWHM values for {dims} axes")]
    FwhmLength { dims: usize, fwhm: usize },
    #[error("FWHM must be finite and non-negative, got {0}")]
    BadFwhm(f64),
    #[error("n_realizations must be at least 1")]
    NoRealizations,
    #[error("student_t fields need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("padded grid needs {needed} cells, limit is {limit}")]
    FieldTooLarge { needed: usize, limit: usize },
    #[error(transparent)]
    Ecd(#[from] EcdError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Which statistic each realization produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimField {
    #[default]
    Gaussian,
    /// One-sample t-map from `n_subjects` independent smooth fields.
    StudentT { n_subjects: usize },
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dims: Vec<usize>,
    /// Kernel FWHM per axis, in voxels.
    pub fwhm: Vec<f64>,
    pub n_realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub field: SimField,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

impl SimConfig {
    pub fn new(dims: Vec<usize>, fwhm: Vec<f64>, n_realizations: usize, seed: u64) -> Self {
        Self { dims, fwhm, n_realizations, seed, field: SimField::Gaussian, max_cells: DEFAULT_MAX_CELLS }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.dims.is_empty() || self.dims.len() > MAX_DIM || self.dims.contains(&0) {
            return Err(SimError::Dims(self.dims.clone()));
        }
        if self.fwhm.len() != self.dims.len() {
            return Err(SimError::FwhmLength { dims: self.dims.len(), fwhm: self.fwhm.len() });
        }
        if let Some(&f) = self.fwhm.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
            return Err(SimError::BadFwhm(f));
        }
        if self.n_realizations == 0 {
            return Err(SimError::NoRealizations);
        }
        if let SimField::StudentT { n_subjects } = self.field {
            if n_subjects < 2 {
                return Err(SimError::TooFewSubjects(n_subjects));
            }
        }
        let needed: usize = self.kernels().iter().zip(&self.dims).map(|(k, n)| n + k.len() - 1).product();
        if needed > self.max_cells {
            return Err(SimError::FieldTooLarge { needed, limit: self.max_cells });
        }
        Ok(())
    }

    fn kernels(&self) -> Vec<Vec<f64>> {
        self.fwhm.iter().map(|&f| gaussian_kernel(f)).collect()
    }

    /// Null distribution of each realization.
    pub fn field_type(&self) -> FieldType {
        match self.field {
            SimField::Gaussian => FieldType::Gaussian,
            SimField::StudentT { n_subjects } => FieldType::student_t((n_subjects - 1) as f64),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Unnormalized Gaussian taps `exp(-j^2 / 2 sigma^2)` for `|j| <= ceil(4 sigma)`.
pub fn gaussian_kernel(fwhm: f64) -> Vec<f64> {
    if fwhm <= 0.0 {
        return vec![1.0];
    }
    let sigma = fwhm / (8.0 * LN_2).sqrt();
    let r = (4.0 * sigma).ceil() as i64;
    (-r..=r).map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp()).collect()
}

/// FWHM of a Gaussian field with the same lattice roughness as the discrete kernel.
///
/// Adjacent values of the smoothed field have correlation `rho`; the
/// variance of their difference `2(1 - rho)` plays the role of the
/// derivative variance `4 ln 2 / FWHM^2`.
pub fn effective_fwhm(fwhm: f64) -> f64 {
    let k = gaussian_kernel(fwhm);
    let energy: f64 = k.iter().map(|x| x * x).sum();
    let lag1: f64 = k.windows(2).map(|w| w[0] * w[1]).sum();
    let lambda = 2.0 * (1.0 - lag1 / energy);
    (4.0 * LN_2 / lambda).sqrt()
}

/// Resels of the generator over the full box, from the effective FWHM per axis.
pub fn true_resels(config: &SimConfig) -> ReselVector {
    let fwhm: Vec<f64> = config.fwhm.iter().map(|&f| effective_fwhm(f)).collect();
    let scaled: Vec<f64> = config.dims.iter().zip(&fwhm).map(|(&n, f)| (n as f64 - 1.0) / f).collect();
    let resels = elementary_symmetric(&scaled);
    let lkc = resels.iter().enumerate().map(|(d, r)| r * (4.0 * LN_2).powf(0.5 * d as f64)).collect();
    ReselVector { lkc, resels, fwhm: Some(fwhm) }
}

/// Convolves along `axis`, keeping only outputs whose kernel support fits.
fn convolve_valid(data: &[f64], dims: &mut [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.iter().map(|x| x * kernel[0]).collect();
    }
    let out_len = dims[axis] - (kernel.len() - 1);
    let mut out_dims = *dims;
    out_dims[axis] = out_len;
    let in_stride = [dims[1] * dims[2], dims[2], 1][axis];
    let out_total: usize = out_dims.iter().product();
    let mut out = vec![0.0; out_total];
    for (o, value) in out.iter_mut().enumerate() {
        let c = [o / (out_dims[1] * out_dims[2]), (o / out_dims[2]) % out_dims[1], o % out_dims[2]];
        let base = c[0] * dims[1] * dims[2] + c[1] * dims[2] + c[2];
        *value = kernel.iter().enumerate().map(|(j, k)| k * data[base + j * in_stride]).sum();
    }
    *dims = out_dims;
    out
}

fn smooth_noise(config: &SimConfig, kernels: &[Vec<f64>], norm: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut dims = [1usize; 3];
    for (a, (n, k)) in config.dims.iter().zip(kernels).enumerate() {
        dims[a] = n + k.len() - 1;
    }
    let total: usize = dims.iter().product();
    let mut data: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
    for (axis, k) in kernels.iter().enumerate() {
        data = convolve_valid(&data, &mut dims, axis, k);
    }
    data.iter_mut().for_each(|x| *x /= norm);
    data
}

fn stream(config: &SimConfig, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    rng
}

fn kernel_norm(kernels: &[Vec<f64>]) -> f64 {
    kernels.iter().map(|k| k.iter().map(|x| x * x).sum::<f64>().sqrt()).product()
}

/// One smooth unit-variance Gaussian field, deterministic in `(seed, index)`.
pub fn gen_field(config: &SimConfig, index: u64) -> Result<Vec<f64>, SimError> {
    config.validate()?;
    let kernels = config.kernels();
    Ok(smooth_noise(config, &kernels, kernel_norm(&kernels), &mut stream(config, index)))
}

/// `count` independent fields drawn in sequence from stream `index`.
pub fn gen_fields(config: &SimConfig, index: u64, count: usize) -> Result<Vec<Vec<f64>>, SimError> {
    config.validate()?;
    let kernels = config.kernels();
    let norm = kernel_norm(&kernels);
    let mut rng = stream(config, index);
    Ok((0..count).map(|_| smooth_noise(config, &kernels, norm, &mut rng)).collect())
}

/// The statistic map of realization `index` (a field, or a one-sample t-map).
pub fn realization(config: &SimConfig, index: u64) -> Result<Vec<f64>, SimError> {
    match config.field {
        SimField::Gaussian => gen_field(config, index),
        SimField::StudentT { n_subjects } => {
            let fields = gen_fields(config, index, n_subjects)?;
            let fit = glm::fit(&fields, &DesignMatrix::one_sample(n_subjects))?;
            Ok(glm::t_map(&fit, &[1.0])?.values)
        }
    }
}

/// Mean EC of excursion sets with standard errors and the EC-density prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcSummary {
    pub thresholds: Vec<f64>,
    pub mean_ec: Vec<f64>,
    pub se: Vec<f64>,
    pub expected_ec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FweSummary {
    pub alpha: f64,
    pub corrected_threshold: CorrectedThreshold,
    pub exceedances: usize,
    pub n_realizations: usize,
    pub empirical_fwe: f64,
    /// 95% Wilson interval.
    pub ci: [f64; 2],
}

/// Combined report: EC calibration and FWE control from one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: SimConfig,
    pub field_type: FieldType,
    pub resels: Vec<f64>,
    pub fwhm_effective: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub mean_ec: Vec<f64>,
    pub se: Vec<f64>,
    pub expected_ec: Vec<f64>,
    pub alpha: f64,
    pub corrected_threshold: f64,
    pub exceedances: usize,
    pub empirical_fwe: f64,
    pub ci: [f64; 2],
}

/// Excursion-set EC at each threshold and the maximum, per realization.
fn ensemble(config: &SimConfig, thresholds: &[f64]) -> Result<Vec<(Vec<i64>, f64)>, SimError> {
    config.validate()?;
    (0..config.n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let field = realization(config, i)?;
            let ec = thresholds
                .iter()
                .map(|&t| {
                    let mask: Vec<bool> = field.iter().map(|&x| x >= t).collect();
                    count_cells(&config.dims, &mask).euler_characteristic()
                })
                .collect();
            let max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((ec, max))
        })
        .collect()
}

fn mean_and_se(samples: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = samples.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> [f64; 2] {
    let z = 1.959963984540054;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    [(centre - half).max(0.0), (centre + half).min(1.0)]
}

fn summarize_ec(config: &SimConfig, thresholds: &[f64], runs: &[(Vec<i64>, f64)]) -> EcSummary {
    let resels = true_resels(config);
    let field = config.field_type();
    let n = runs.len();
    let (mean_ec, se) = (0..thresholds.len()).map(|j| mean_and_se(runs.iter().map(|r| r.0[j] as f64), n)).unzip();
    EcSummary {
        thresholds: thresholds.to_vec(),
        mean_ec,
        se,
        expected_ec: thresholds.iter().map(|&t| expected_ec(&resels.resels, field, t).total).collect(),
    }
}

fn summarize_fwe(config: &SimConfig, alpha: f64, runs: &[(Vec<i64>, f64)]) -> Result<FweSummary, SimError> {
    let threshold = corrected_threshold(alpha, &true_resels(config).resels, config.field_type())?;
    let exceedances = runs.iter().filter(|r| r.1 >= threshold.t).count();
    let n = runs.len();
    Ok(FweSummary {
        alpha,
        corrected_threshold: threshold,
        exceedances,
        n_realizations: n,
        empirical_fwe: exceedances as f64 / n as f64,
        ci: wilson_interval(exceedances, n),
    })
}

pub fn mc_ec(config: &SimConfig, thresholds: &[f64]) -> Result<EcSummary, SimError> {
    let runs = ensemble(config, thresholds)?;
    Ok(summarize_ec(config, thresholds, &runs))
}

pub fn mc_fwe(config: &SimConfig, alpha: f64) -> Result<FweSummary, SimError> {
    let runs = ensemble(config, &[])?;
    summarize_fwe(config, alpha, &runs)
}

/// EC calibration and FWE rate from a single ensemble.
pub fn calibrate(config: &SimConfig, thresholds: &[f64], alpha: f64) -> Result<CalibrationReport, SimError> {
    let runs = ensemble(config, thresholds)?;
    let ec = summarize_ec(config, thresholds, &runs);
    let fwe = summarize_fwe(config, alpha, &runs)?;
    let resels = true_resels(config);
    Ok(CalibrationReport {
        config: config.clone(),
        field_type: config.field_type(),
        resels: resels.resels,
        fwhm_effective: resels.fwhm.unwrap_or_default(),
        thresholds: ec.thresholds,
        mean_ec: ec.mean_ec,
        se: ec.se,
        expected_ec: ec.expected_ec,
        alpha,
        corrected_threshold: fwe.corrected_threshold.t,
        exceedances: fwe.exceedances,
        empirical_fwe: fwe.empirical_fwe,
        ci: fwe.ci,
    })
}
