//! Euler characteristic densities, expected Euler characteristic of
//! excursion sets, and the FWE-corrected p-values and thresholds they give.
//!
//! Densities are in resel convention: each `rho_d` carries its
//! `(4 ln 2)^{d/2}` factor, so the expected EC is `sum_d resels_d * rho_d(t)`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, SearchSpace};
use crate::lkc::ReselVector;
use crate::special::{ln_gamma, normal_isf, normal_sf, t_isf, t_sf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcdError {
    #[error("EC densities are available for 0 <= d <= 3, got d = {0}")]
    UnsupportedDimension(usize),
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("resel vector has no positive entry")]
    NoResels,
}

/// Null distribution of the statistic field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldType {
    Gaussian,
    StudentT { dof: f64 },
}

impl FieldType {
    pub fn student_t(dof: f64) -> Self {
        Self::StudentT { dof }
    }

    pub fn dof(&self) -> Option<f64> {
        match self {
            Self::Gaussian => None,
            Self::StudentT { dof } => Some(*dof),
        }
    }

    /// Point upper-tail probability `P(T >= t)`.
    pub fn sf(&self, t: f64) -> f64 {
        match *self {
            Self::Gaussian => normal_sf(t),
            Self::StudentT { dof } => t_sf(t, dof),
        }
    }

    /// Threshold with point upper-tail probability `p`.
    pub fn isf(&self, p: f64) -> f64 {
        match *self {
            Self::Gaussian => normal_isf(p),
            Self::StudentT { dof } => t_isf(p, dof),
        }
    }
}

/// EC density `rho_d(t)` in resel convention.
pub fn ec_density(field: FieldType, d: usize, t: f64) -> Result<f64, EcdError> {
    if d > 3 {
        return Err(EcdError::UnsupportedDimension(d));
    }
    if d == 0 {
        return Ok(field.sf(t));
    }
    let four_ln2 = 4.0 * LN_2;
    let scale = four_ln2.powf(0.5 * d as f64) / (2.0 * PI).powf(0.5 * (d as f64 + 1.0));
    let value = match field {
        FieldType::Gaussian => {
            let g = (-0.5 * t * t).exp();
            match d {
                1 => g,
                2 => t * g,
                _ => (t * t - 1.0) * g,
            }
        }
        FieldType::StudentT { dof } => {
            let g = (1.0 + t * t / dof).powf(-0.5 * (dof - 1.0));
            match d {
                1 => g,
                2 => {
                    let ratio = (ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof)).exp() / (0.5 * dof).sqrt();
                    ratio * t * g
                }
                _ => ((dof - 1.0) / dof * t * t - 1.0) * g,
            }
        }
    };
    Ok(scale * value)
}

/// Expected EC of the excursion set at `threshold`, with its per-dimension terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedEc {
    pub threshold: f64,
    pub contributions: Vec<f64>,
    pub total: f64,
}

impl ExpectedEc {
    /// The total read as a p-value, clamped to `[0, 1]`.
    pub fn p_value(&self) -> f64 {
        self.total.clamp(0.0, 1.0)
    }
}

/// `sum_d resels_d * rho_d(t)` for a resel vector of dimension `D <= 3`.
pub fn expected_ec(resels: &[f64], field: FieldType, t: f64) -> ExpectedEc {
    let contributions: Vec<f64> = resels
        .iter()
        .enumerate()
        .map(|(d, &r)| if r == 0.0 { 0.0 } else { r * ec_density(field, d, t).expect("resel vectors have D <= 3") })
        .collect();
    let total = contributions.iter().sum();
    ExpectedEc { threshold: t, contributions, total }
}

/// FWE-corrected p-value of a peak of height `t`.
pub fn fwe_p(t: f64, resels: &[f64], field: FieldType) -> f64 {
    expected_ec(resels, field, t).p_value()
}

/// A corrected height threshold and whether alpha was bracketed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedThreshold {
    pub t: f64,
    pub alpha: f64,
    pub bracketed: bool,
}

const T_LO: f64 = 2.0;
const T_FLOOR: f64 = 0.0;
const STEP_DOWN: f64 = 0.25;

/// The height `t*` at which the expected EC equals `alpha`.
///
/// The search starts at `t = 2` and only moves lower while the expected EC
/// keeps increasing as `t` falls, so the root is always taken on the
/// decreasing branch. If alpha cannot be bracketed, the lowest admissible
/// `t` is returned with `bracketed = false`.
pub fn corrected_threshold(alpha: f64, resels: &[f64], field: FieldType) -> Result<CorrectedThreshold, EcdError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EcdError::InvalidAlpha(alpha));
    }
    if !resels.iter().any(|&r| r > 0.0) {
        return Err(EcdError::NoResels);
    }
    let total = |t: f64| expected_ec(resels, field, t).total;
    let mut lo = T_LO;
    let mut f_lo = total(lo);
    while f_lo < alpha && lo > T_FLOOR {
        let next = (lo - STEP_DOWN).max(T_FLOOR);
        let f_next = total(next);
        if f_next <= f_lo {
            break;
        }
        lo = next;
        f_lo = f_next;
    }
    if f_lo < alpha {
        log::warn!("alpha = {alpha} not bracketed; reporting threshold {lo}");
        return Ok(CorrectedThreshold { t: lo, alpha, bracketed: false });
    }
    let mut hi = lo + 1.0;
    while total(hi) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(CorrectedThreshold { t: 0.5 * (lo + hi), alpha, bracketed: true })
}

/// Small-volume restriction of a search space (mask intersection).
pub fn restrict(space: &SearchSpace, sub_mask: &[bool]) -> Result<SearchSpace, DomainError> {
    space.restrict(sub_mask)
}

/// Restricts a lattice to indices `lo..=hi` along `axis` (e.g. a time window).
pub fn restrict_window(space: &SearchSpace, axis: usize, lo: usize, hi: usize) -> Result<SearchSpace, DomainError> {
    let lattice = space.as_lattice().ok_or(DomainError::UnsupportedDimension(space.dim()))?;
    if axis >= lattice.ndim() {
        return Err(DomainError::UnsupportedDimension(axis + 1));
    }
    let sub: Vec<bool> = (0..lattice.len())
        .map(|v| {
            let c = lattice.coords(v)[axis];
            c >= lo && c <= hi
        })
        .collect();
    space.restrict(&sub)
}

impl ReselVector {
    pub fn expected_ec(&self, field: FieldType, t: f64) -> ExpectedEc {
        expected_ec(&self.resels, field, t)
    }
}
