//! Peak and cluster tables from a statistic field and its resel counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{connected_components, Connectivity, SearchSpace};
use crate::ecd::{corrected_threshold, expected_ec, CorrectedThreshold, EcdError, FieldType};
use crate::glm::{z_equivalent, StatField};
use crate::lkc::ReselVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error("statistic field has {got} values, search space has {expected} vertices")]
    FieldLength { expected: usize, got: usize },
    #[error("feature threshold must be finite, got {0}")]
    NonFiniteThreshold(f64),
    #[error("resel vector has dimension {got}, search space has {expected}")]
    ReselDimension { expected: usize, got: usize },
    #[error(transparent)]
    Ecd(#[from] EcdError),
}

/// Vertices with `value >= t`.
pub fn excursion_set(stat: &StatField, t: f64) -> Vec<bool> {
    stat.values.iter().map(|&v| v >= t).collect()
}

/// In-mask vertices at or above `t` that exceed every neighbour.
///
/// A plateau of equal values that is not adjacent to anything higher yields a
/// single maximum at its smallest vertex index. Output is in index order.
pub fn local_maxima(values: &[f64], t: f64, space: &SearchSpace, connectivity: Connectivity) -> Vec<usize> {
    let mask = space.mask();
    let mut out = Vec::new();
    let mut plateau_seen = vec![false; values.len()];
    for v in 0..values.len() {
        let x = values[v];
        if !mask[v] || !(x >= t) || plateau_seen[v] {
            continue;
        }
        let mut higher = false;
        let mut tied = false;
        space.for_each_neighbour(v, connectivity, |w| {
            if values[w] > x {
                higher = true;
            } else if values[w] == x {
                tied = true;
            }
        });
        if higher {
            continue;
        }
        if !tied {
            out.push(v);
            continue;
        }
        // v is the smallest index of its plateau because larger-index members are skipped via plateau_seen.
        let mut stack = vec![v];
        plateau_seen[v] = true;
        let mut is_max = true;
        while let Some(p) = stack.pop() {
            space.for_each_neighbour(p, connectivity, |w| {
                if values[w] > x {
                    is_max = false;
                } else if values[w] == x && !plateau_seen[w] {
                    plateau_seen[w] = true;
                    stack.push(w);
                }
            });
        }
        if is_max {
            out.push(v);
        }
    }
    out
}

/// Benjamini-Hochberg step-up q-values, returned in input order.
pub fn topological_fdr(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p[i] / (rank + 1) as f64);
        q[i] = running.clamp(0.0, 1.0);
    }
    q
}

/// Conditional peak p-value `E[EC](t) / E[EC](t_feature)`, clamped to `[0, 1]`.
pub fn conditional_peak_p(t: f64, t_feature: f64, resels: &[f64], field: FieldType) -> f64 {
    let denom = expected_ec(resels, field, t_feature).total;
    if denom <= 0.0 {
        return 1.0;
    }
    (expected_ec(resels, field, t).total / denom).clamp(0.0, 1.0)
}

/// Sign of the effect a peak belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub vertex: usize,
    /// Lattice index per axis (empty on meshes).
    pub coords: Vec<usize>,
    /// Location in axis units on lattices, vertex coordinates on meshes.
    pub position: Vec<f64>,
    pub t: f64,
    pub z: f64,
    pub p_unc: f64,
    pub p_fwe: f64,
    /// Conditional peak p-value above the feature threshold.
    pub p_peak: f64,
    pub q_fdr: f64,
    pub cluster_id: usize,
    pub tail: Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: usize,
    pub size_vertices: usize,
    /// Highest vertex of the cluster.
    pub peak_vertex: usize,
    pub peak_t: f64,
    pub expected_size: f64,
    pub tail: Tail,
}

/// Cluster partition of the excursion set with its isotropic-model expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub clusters: Vec<ClusterRecord>,
    /// Member vertices of each cluster, sorted.
    pub members: Vec<Vec<usize>>,
    pub expected_clusters: f64,
    pub expected_bins: f64,
    pub expected_bins_per_cluster: f64,
}

fn check_inputs(stat: &StatField, space: &SearchSpace, resels: &ReselVector, t: f64) -> Result<(), InferError> {
    if stat.len() != space.len() {
        return Err(InferError::FieldLength { expected: space.len(), got: stat.len() });
    }
    if resels.dim() != space.dim() {
        return Err(InferError::ReselDimension { expected: space.dim(), got: resels.dim() });
    }
    if !t.is_finite() {
        return Err(InferError::NonFiniteThreshold(t));
    }
    Ok(())
}

/// Connected components of the excursion set above `t_feature`.
///
/// `⟨c⟩` is the expected EC at the threshold, `⟨N⟩ = μ_D ρ_0(t)` and
/// `⟨k⟩ = ⟨N⟩/⟨c⟩`, which assumes stationary, isotropic smoothness.
pub fn clusters(
    stat: &StatField,
    t_feature: f64,
    space: &SearchSpace,
    resels: &ReselVector,
    connectivity: Connectivity,
) -> Result<ClusterSummary, InferError> {
    check_inputs(stat, space, resels, t_feature)?;
    let expected_clusters = expected_ec(&resels.resels, stat.field_type, t_feature).total;
    let expected_bins = space.intrinsic_volumes().top() * stat.field_type.sf(t_feature);
    let expected_bins_per_cluster = if expected_clusters > 0.0 { expected_bins / expected_clusters } else { f64::INFINITY };
    let members = connected_components(space, &excursion_set(stat, t_feature), connectivity);
    let clusters = members
        .iter()
        .enumerate()
        .map(|(id, comp)| {
            let peak_vertex = comp.iter().copied().fold(comp[0], |best, v| if stat.values[v] > stat.values[best] { v } else { best });
            ClusterRecord {
                id,
                size_vertices: comp.len(),
                peak_vertex,
                peak_t: stat.values[peak_vertex],
                expected_size: expected_bins_per_cluster,
                tail: Tail::Positive,
            }
        })
        .collect();
    Ok(ClusterSummary { clusters, members, expected_clusters, expected_bins, expected_bins_per_cluster })
}

/// Settings for assembling a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSettings {
    pub alpha: f64,
    pub t_feature: f64,
    pub connectivity: Connectivity,
    /// `(origin, step)` per lattice axis for reporting positions.
    pub axis_scale: Option<Vec<(f64, f64)>>,
}

impl TableSettings {
    pub fn new(alpha: f64, t_feature: f64) -> Self {
        Self { alpha, t_feature, connectivity: Connectivity::Full, axis_scale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footnote {
    pub height_threshold: f64,
    /// Uncorrected point p-value of the height threshold.
    pub height_p: f64,
    pub dof: Option<f64>,
    pub fwhm: Vec<f64>,
    pub search_volume_bins: usize,
    pub resels: f64,
    pub expected_clusters: f64,
    pub expected_bins_per_cluster: f64,
    /// Largest q-value among the reported peaks.
    pub expected_fdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub peaks: Vec<PeakRecord>,
    pub clusters: Vec<ClusterRecord>,
    pub footnote: Footnote,
    pub lkc: Vec<f64>,
    pub resels: Vec<f64>,
    pub fwhm: Vec<f64>,
    /// FWE p-value of the global maximum (`null` when the field is empty).
    pub p_fwe: Option<f64>,
    /// Per-dimension terms of the expected EC at the height threshold.
    pub expected_ec_breakdown: Vec<f64>,
    pub corrected_threshold: CorrectedThreshold,
    pub notes: Vec<String>,
}

pub const FDR_NOTE: &str =
    "q_fdr: Benjamini-Hochberg over peaks using p_peak = E[EC](t) / E[EC](height_threshold)";
pub const CLUSTER_NOTE: &str =
    "expected_bins_per_cluster = mu_D * P(T >= height_threshold) / expected_clusters, assuming isotropic smoothness";

fn position(space: &SearchSpace, v: usize, scale: Option<&[(f64, f64)]>) -> (Vec<usize>, Vec<f64>) {
    match space {
        SearchSpace::Lattice(l) => {
            let c = l.coords(v);
            let pos = c
                .iter()
                .enumerate()
                .map(|(a, &i)| scale.and_then(|s| s.get(a)).map_or(i as f64, |&(o, st)| o + st * i as f64))
                .collect();
            (c, pos)
        }
        SearchSpace::Mesh(m) => (Vec::new(), m.vertices()[v].clone()),
    }
}

/// Peaks above the feature threshold with FWE and topological FDR p-values,
/// clusters, and the footnote block.
pub fn peak_table(
    stat: &StatField,
    space: &SearchSpace,
    resels: &ReselVector,
    settings: &TableSettings,
) -> Result<ResultsTable, InferError> {
    let t_feature = settings.t_feature;
    let summary = clusters(stat, t_feature, space, resels, settings.connectivity)?;
    let field = stat.field_type;
    let r = &resels.resels;
    let threshold = corrected_threshold(settings.alpha, r, field)?;

    let mut cluster_of = vec![usize::MAX; space.len()];
    for (id, comp) in summary.members.iter().enumerate() {
        for &v in comp {
            cluster_of[v] = id;
        }
    }
    let maxima = local_maxima(&stat.values, t_feature, space, settings.connectivity);
    let t_values: Vec<f64> = maxima.iter().map(|&v| stat.values[v]).collect();
    let z = z_equivalent(&StatField::new(t_values.clone(), field));
    let p_peak: Vec<f64> = t_values.iter().map(|&t| conditional_peak_p(t, t_feature, r, field)).collect();
    let q = topological_fdr(&p_peak);
    let mut peaks: Vec<PeakRecord> = maxima
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = t_values[i];
            let p_unc = field.sf(t);
            let (coords, position) = position(space, v, settings.axis_scale.as_deref());
            PeakRecord {
                vertex: v,
                coords,
                position,
                t,
                z: z[i],
                p_unc,
                p_fwe: expected_ec(r, field, t).p_value().max(p_unc),
                p_peak: p_peak[i],
                q_fdr: q[i],
                cluster_id: cluster_of[v],
                tail: Tail::Positive,
            }
        })
        .collect();
    peaks.sort_by(|a, b| b.t.total_cmp(&a.t).then(a.vertex.cmp(&b.vertex)));

    let mask = space.mask();
    let global_max = (0..space.len()).filter(|&v| mask[v]).map(|v| stat.values[v]).max_by(f64::total_cmp);
    let fwhm = resels.fwhm.clone().unwrap_or_default();
    let footnote = Footnote {
        height_threshold: t_feature,
        height_p: field.sf(t_feature),
        dof: field.dof(),
        fwhm: fwhm.clone(),
        search_volume_bins: space.volume(),
        resels: resels.top(),
        expected_clusters: summary.expected_clusters,
        expected_bins_per_cluster: summary.expected_bins_per_cluster,
        expected_fdr: peaks.iter().map(|p| p.q_fdr).max_by(f64::total_cmp),
    };
    Ok(ResultsTable {
        peaks,
        clusters: summary.clusters,
        footnote,
        lkc: resels.lkc.clone(),
        resels: resels.resels.clone(),
        fwhm,
        p_fwe: global_max.map(|t| expected_ec(r, field, t).p_value().max(field.sf(t))),
        expected_ec_breakdown: expected_ec(r, field, t_feature).contributions,
        corrected_threshold: threshold,
        notes: vec![FDR_NOTE.to_string(), CLUSTER_NOTE.to_string()],
    })
}

impl ResultsTable {
    /// Combines the tables of a field and its negation into a two-sided result.
    ///
    /// Both inputs should be built at `alpha / 2`. Per-tail p-values are
    /// doubled (capped at 1) and FDR is recomputed over the pooled peaks.
    pub fn two_sided(positive: Self, negative: Self) -> Self {
        let double = |p: f64| (2.0 * p).min(1.0);
        let offset = positive.clusters.len();
        let mut peaks = positive.peaks;
        peaks.extend(negative.peaks.into_iter().map(|mut p| {
            p.t = -p.t;
            p.z = -p.z;
            p.cluster_id += offset;
            p.tail = Tail::Negative;
            p
        }));
        for p in &mut peaks {
            p.p_unc = double(p.p_unc);
            p.p_fwe = double(p.p_fwe);
            p.p_peak = double(p.p_peak);
        }
        let q = topological_fdr(&peaks.iter().map(|p| p.p_peak).collect::<Vec<_>>());
        for (p, q) in peaks.iter_mut().zip(q) {
            p.q_fdr = q;
        }
        peaks.sort_by(|a, b| b.t.abs().total_cmp(&a.t.abs()).then(a.vertex.cmp(&b.vertex)).then(a.tail.cmp(&b.tail)));

        let mut clusters = positive.clusters;
        clusters.extend(negative.clusters.into_iter().map(|mut c| {
            c.id += offset;
            c.peak_t = -c.peak_t;
            c.tail = Tail::Negative;
            c
        }));
        let mut footnote = positive.footnote;
        footnote.height_p = double(footnote.height_p);
        footnote.expected_clusters += negative.footnote.expected_clusters;
        footnote.expected_fdr = peaks.iter().map(|p| p.q_fdr).max_by(f64::total_cmp);
        let p_fwe = match (positive.p_fwe, negative.p_fwe) {
            (Some(a), Some(b)) => Some(double(a.min(b))),
            (a, b) => a.or(b).map(double),
        };
        let mut corrected = positive.corrected_threshold;
        corrected.alpha = (2.0 * corrected.alpha).min(1.0);
        let expected_ec_breakdown = positive
            .expected_ec_breakdown
            .iter()
            .zip(&negative.expected_ec_breakdown)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            peaks,
            clusters,
            footnote,
            lkc: positive.lkc,
            resels: positive.resels,
            fwhm: positive.fwhm,
            p_fwe,
            expected_ec_breakdown,
            corrected_threshold: corrected,
            notes: positive.notes,
        }
    }
}
