//! Lipschitz-Killing curvature and resel estimation from normalized residuals.
//!
//! The top-dimensional LKC is a sum of square-rooted Gram determinants of
//! residual differences, one per component (a unit cube on lattices, a
//! simplex on meshes). Lower LKCs follow from the intrinsic volumes by
//! interpolation. Vertex coordinates never enter the estimate.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IntrinsicVolumes, Lattice, Mesh, SearchSpace};
use crate::glm::ResidualSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LkcError {
    #[error("no component lies entirely inside the mask")]
    NoComponents,
    #[error("every component touches a vertex with zero residuals")]
    AllFlagged,
    #[error("no in-mask edge along axis {0}")]
    NoEdges(usize),
    #[error("top intrinsic volume must be positive, got {0}")]
    NonPositiveVolume(f64),
    #[error("residual set covers {got} vertices, space has {expected}")]
    VertexCount { expected: usize, got: usize },
    #[error("FWHM estimates need a lattice search space")]
    NotALattice,
}

/// How a raw residual difference is scaled to approximate `u_j - u_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Difference of the unit-normalized vectors themselves.
    Exact,
    /// `(r_j - r_i) / ||r_i||`.
    #[default]
    Source,
    /// `(r_j - r_i)` over the mean of the two norms.
    Mean,
}

fn difference(res: &ResidualSet, from: usize, to: usize, mode: NormMode, out: &mut [f64]) {
    let (ua, ub) = (res.at(from), res.at(to));
    match mode {
        NormMode::Exact => {
            for ((o, a), b) in out.iter_mut().zip(ua).zip(ub) {
                *o = b - a;
            }
        }
        NormMode::Source | NormMode::Mean => {
            let (na, nb) = (res.norms[from], res.norms[to]);
            let scale = if mode == NormMode::Source { na } else { 0.5 * (na + nb) };
            for ((o, a), b) in out.iter_mut().zip(ua).zip(ub) {
                *o = (b * nb - a * na) / scale;
            }
        }
    }
}

/// `sqrt(det(A^T A))` for `A` given as `cols` columns of length `n`.
fn gram_root(cols: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let det = match cols.len() {
        1 => dot(&cols[0], &cols[0]),
        2 => {
            let (a, b, c) = (dot(&cols[0], &cols[0]), dot(&cols[0], &cols[1]), dot(&cols[1], &cols[1]));
            a * c - b * b
        }
        3 => {
            let g = |i: usize, j: usize| dot(&cols[i], &cols[j]);
            let (a, b, c) = (g(0, 0), g(0, 1), g(0, 2));
            let (e, f, i) = (g(1, 1), g(1, 2), g(2, 2));
            a * (e * i - f * f) - b * (b * i - f * c) + c * (b * f - e * c)
        }
        _ => unreachable!("search spaces have at most three dimensions"),
    };
    det.max(0.0).sqrt()
}

/// ℓ_D with the default norm approximation.
pub fn lkc_top(res: &ResidualSet, space: &SearchSpace) -> Result<f64, LkcError> {
    lkc_top_with(res, space, NormMode::default())
}

pub fn lkc_top_with(res: &ResidualSet, space: &SearchSpace, mode: NormMode) -> Result<f64, LkcError> {
    if res.n_vertices() != space.len() {
        return Err(LkcError::VertexCount { expected: space.len(), got: res.n_vertices() });
    }
    let contributions = match space {
        SearchSpace::Lattice(l) => lattice_contributions(res, l, mode),
        SearchSpace::Mesh(m) => mesh_contributions(res, m, mode),
    };
    let (mut complete, mut usable) = (0usize, 0usize);
    let mut total = 0.0;
    for c in contributions {
        match c {
            Component::Outside => {}
            Component::Flagged => complete += 1,
            Component::Value(v) => {
                complete += 1;
                usable += 1;
                total += v;
            }
        }
    }
    if complete == 0 {
        Err(LkcError::NoComponents)
    } else if usable == 0 {
        Err(LkcError::AllFlagged)
    } else {
        Ok(total)
    }
}

enum Component {
    Outside,
    Flagged,
    Value(f64),
}

fn lattice_contributions(res: &ResidualSet, lattice: &Lattice, mode: NormMode) -> Vec<Component> {
    let dims = lattice.dims();
    let strides = lattice.strides();
    let mask = lattice.mask();
    (0..lattice.len())
        .into_par_iter()
        .map(|v| {
            if !mask[v] {
                return Component::Outside;
            }
            let coords = lattice.coords(v);
            let mut forward = Vec::with_capacity(dims.len());
            for a in 0..dims.len() {
                if coords[a] + 1 >= dims[a] || !mask[v + strides[a]] {
                    return Component::Outside;
                }
                forward.push(v + strides[a]);
            }
            if res.flagged[v] || forward.iter().any(|&w| res.flagged[w]) {
                return Component::Flagged;
            }
            let cols: Vec<Vec<f64>> = forward
                .iter()
                .map(|&w| {
                    let mut col = vec![0.0; res.n];
                    difference(res, v, w, mode, &mut col);
                    col
                })
                .collect();
            Component::Value(gram_root(&cols))
        })
        .collect()
}

fn mesh_contributions(res: &ResidualSet, mesh: &Mesh, mode: NormMode) -> Vec<Component> {
    let d = mesh.dim();
    let factorial: f64 = (1..=d).map(|k| k as f64).product();
    let mask = mesh.mask();
    mesh.simplices()
        .par_iter()
        .map(|s| {
            if !s.iter().all(|&v| mask[v]) {
                return Component::Outside;
            }
            if s.iter().any(|&v| res.flagged[v]) {
                return Component::Flagged;
            }
            let cols: Vec<Vec<f64>> = s[1..]
                .iter()
                .map(|&w| {
                    let mut col = vec![0.0; res.n];
                    difference(res, s[0], w, mode, &mut col);
                    col
                })
                .collect();
            Component::Value(gram_root(&cols) / factorial)
        })
        .collect()
}

/// LKCs and resel counts ℓ_0..ℓ_D, resels_0..resels_D, and per-axis FWHM on lattices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReselVector {
    pub lkc: Vec<f64>,
    pub resels: Vec<f64>,
    pub fwhm: Option<Vec<f64>>,
}

fn resel_scale(d: usize) -> f64 {
    (4.0 * LN_2).powf(0.5 * d as f64)
}

/// Interpolates `mu_d * (top / mu_D)^{d/D}` for every `d`.
fn interpolate(top: f64, mu: &IntrinsicVolumes) -> Result<Vec<f64>, LkcError> {
    let dim = mu.dim();
    let mu_top = mu.top();
    if !(mu_top > 0.0) {
        return Err(LkcError::NonPositiveVolume(mu_top));
    }
    let ratio = top / mu_top;
    Ok(mu.mu.iter().enumerate().map(|(d, &m)| if d == 0 { m } else { m * ratio.powf(d as f64 / dim as f64) }).collect())
}

impl ReselVector {
    /// From the top resel count and the intrinsic volumes of the search space.
    pub fn from_resels(resels_top: f64, mu: &IntrinsicVolumes) -> Result<Self, LkcError> {
        let resels = interpolate(resels_top, mu)?;
        let lkc = resels.iter().enumerate().map(|(d, r)| r * resel_scale(d)).collect();
        Ok(Self { lkc, resels, fwhm: None })
    }

    pub fn with_fwhm(mut self, fwhm: Vec<f64>) -> Self {
        self.fwhm = Some(fwhm);
        self
    }

    pub fn dim(&self) -> usize {
        self.resels.len() - 1
    }

    pub fn top(&self) -> f64 {
        self.resels[self.dim()]
    }
}

/// Full LKC vector from ℓ_D and the intrinsic volumes.
pub fn lkc_vector(lkc_top: f64, mu: &IntrinsicVolumes) -> Result<ReselVector, LkcError> {
    let lkc = interpolate(lkc_top, mu)?;
    let resels = lkc.iter().enumerate().map(|(d, l)| l / resel_scale(d)).collect();
    Ok(ReselVector { lkc, resels, fwhm: None })
}

/// Per-axis FWHM in voxels from the mean squared residual gradient.
pub fn fwhm_estimate(res: &ResidualSet, space: &SearchSpace) -> Result<Vec<f64>, LkcError> {
    fwhm_estimate_with(res, space, NormMode::default())
}

pub fn fwhm_estimate_with(res: &ResidualSet, space: &SearchSpace, mode: NormMode) -> Result<Vec<f64>, LkcError> {
    let lattice = space.as_lattice().ok_or(LkcError::NotALattice)?;
    if res.n_vertices() != lattice.len() {
        return Err(LkcError::VertexCount { expected: lattice.len(), got: res.n_vertices() });
    }
    let dims = lattice.dims();
    let strides = lattice.strides();
    let mask = lattice.mask();
    (0..dims.len())
        .map(|axis| {
            let per_vertex: Vec<Option<f64>> = (0..lattice.len())
                .into_par_iter()
                .map(|v| {
                    let w = v + strides[axis];
                    let valid = mask[v]
                        && lattice.coords(v)[axis] + 1 < dims[axis]
                        && mask[w]
                        && !res.flagged[v]
                        && !res.flagged[w];
                    valid.then(|| {
                        let mut diff = vec![0.0; res.n];
                        difference(res, v, w, mode, &mut diff);
                        diff.iter().map(|x| x * x).sum()
                    })
                })
                .collect();
            let (sum, count) = per_vertex.iter().flatten().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            if count == 0 {
                return Err(LkcError::NoEdges(axis));
            }
            let lambda = sum / count as f64;
            Ok(if lambda > 0.0 { (4.0 * LN_2 / lambda).sqrt() } else { f64::INFINITY })
        })
        .collect()
}

/// ℓ_D, the interpolated LKC/resel vector, and FWHM (lattices only) in one call.
pub fn estimate_resels(res: &ResidualSet, space: &SearchSpace, mode: NormMode) -> Result<ReselVector, LkcError> {
    let top = lkc_top_with(res, space, mode)?;
    let vector = lkc_vector(top, &space.intrinsic_volumes())?;
    Ok(match space {
        SearchSpace::Lattice(_) => vector.with_fwhm(fwhm_estimate_with(res, space, mode)?),
        SearchSpace::Mesh(_) => vector,
    })
}
