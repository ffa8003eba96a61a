//! Search spaces: masked regular lattices and simplicial meshes.
//!
//! Lattice vertices are addressed by C-order linear index (last axis
//! fastest) and voxel spacing is 1 on every axis. Meshes carry arbitrary
//! embedding coordinates, which only enter the intrinsic volumes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("dimension {0} is not supported (expected 1..=3)")]
    UnsupportedDimension(usize),
    #[error("axis {0} has zero length")]
    ZeroLengthAxis(usize),
    #[error("mask has {got} entries, expected {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("search space is empty")]
    EmptyMask,
    #[error("expected {expected} axis labels, got {got}")]
    AxisMetadata { expected: usize, got: usize },
    #[error("mesh has no simplices")]
    NoSimplices,
    #[error("simplex {index} has {got} vertices, expected {expected}")]
    SimplexOrder { index: usize, expected: usize, got: usize },
    #[error("simplex {simplex} references vertex {vertex}, but the mesh has {count} vertices")]
    IndexOutOfRange { simplex: usize, vertex: usize, count: usize },
    #[error("simplex {0} repeats a vertex")]
    DegenerateSimplex(usize),
    #[error("vertex {index} has {got} coordinates, expected {expected}")]
    CoordinateLength { index: usize, expected: usize, got: usize },
    #[error("embedding dimension {embed} is smaller than the simplex dimension {dim}")]
    EmbeddingTooSmall { embed: usize, dim: usize },
    #[error("mesh file: {0}")]
    Parse(String),
}

/// Neighbourhood used for clusters and local maxima on lattices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Axis-aligned neighbours only (4 in 2D, 6 in 3D).
    Face,
    /// All neighbours sharing a corner (8 in 2D, 26 in 3D).
    #[default]
    Full,
}

/// Numbers of lattice cells whose corners all lie in the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellCounts {
    pub points: usize,
    /// Edges along axes 0, 1, 2.
    pub edges: [usize; 3],
    /// Faces in planes (0,1), (0,2), (1,2).
    pub faces: [usize; 3],
    pub cubes: usize,
}

impl CellCounts {
    pub fn edge_total(&self) -> usize {
        self.edges.iter().sum()
    }

    pub fn face_total(&self) -> usize {
        self.faces.iter().sum()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.points as i64 - self.edge_total() as i64 + self.face_total() as i64 - self.cubes as i64
    }

    /// μ_0..μ_3 of the cubical complex with unit spacing.
    pub fn intrinsic_volumes(&self) -> [f64; 4] {
        let p = self.points as f64;
        let e = self.edge_total() as f64;
        let f = self.face_total() as f64;
        let c = self.cubes as f64;
        [p - e + f - c, e - 2.0 * f + 3.0 * c, f - 3.0 * c, c]
    }
}

/// Pads `dims` with trailing unit axes; C-order indices are unchanged by this.
fn padded_dims(dims: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    out[..dims.len()].copy_from_slice(dims);
    out
}

fn strides_of(dims: [usize; 3]) -> [usize; 3] {
    [dims[1] * dims[2], dims[2], 1]
}

/// Counts in-mask cells of an arbitrary mask on a lattice of `dims`.
///
/// Works for empty masks, which is what excursion-set Euler characteristics need.
pub fn count_cells(dims: &[usize], mask: &[bool]) -> CellCounts {
    let d = padded_dims(dims);
    let s = strides_of(d);
    let mut counts = CellCounts::default();
    const PLANES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                let v = x * s[0] + y * s[1] + z * s[2];
                if !mask[v] {
                    continue;
                }
                counts.points += 1;
                let c = [x, y, z];
                let fwd = [
                    c[0] + 1 < d[0] && mask[v + s[0]],
                    c[1] + 1 < d[1] && mask[v + s[1]],
                    c[2] + 1 < d[2] && mask[v + s[2]],
                ];
                for a in 0..3 {
                    if fwd[a] {
                        counts.edges[a] += 1;
                    }
                }
                for (k, &(a, b)) in PLANES.iter().enumerate() {
                    if fwd[a] && fwd[b] && mask[v + s[a] + s[b]] {
                        counts.faces[k] += 1;
                    }
                }
                if fwd.iter().all(|&f| f)
                    && mask[v + s[0] + s[1]]
                    && mask[v + s[0] + s[2]]
                    && mask[v + s[1] + s[2]]
                    && mask[v + s[0] + s[1] + s[2]]
                {
                    counts.cubes += 1;
                }
            }
        }
    }
    counts
}

/// Euler characteristic `P - E + F - C` of a lattice mask.
pub fn lattice_euler(dims: &[usize], mask: &[bool]) -> i64 {
    count_cells(dims, mask).euler_characteristic()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dims: Vec<usize>,
    mask: Vec<bool>,
    axis_labels: Vec<String>,
    axis_units: Vec<String>,
}

impl Lattice {
    pub fn new(dims: &[usize], mask: Vec<bool>) -> Result<Self, DomainError> {
        if dims.is_empty() || dims.len() > MAX_DIM {
            return Err(DomainError::UnsupportedDimension(dims.len()));
        }
        if let Some(axis) = dims.iter().position(|&n| n == 0) {
            return Err(DomainError::ZeroLengthAxis(axis));
        }
        let expected: usize = dims.iter().product();
        if mask.len() != expected {
            return Err(DomainError::MaskLength { expected, got: mask.len() });
        }
        if !mask.iter().any(|&m| m) {
            return Err(DomainError::EmptyMask);
        }
        let axis_labels = ["x", "y", "z"][..dims.len()].iter().map(|s| s.to_string()).collect();
        let axis_units = vec!["bins".to_string(); dims.len()];
        Ok(Self { dims: dims.to_vec(), mask, axis_labels, axis_units })
    }

    pub fn full(dims: &[usize]) -> Result<Self, DomainError> {
        Self::new(dims, vec![true; dims.iter().product()])
    }

    pub fn with_axes(mut self, labels: Vec<String>, units: Vec<String>) -> Result<Self, DomainError> {
        for v in [&labels, &units] {
            if v.len() != self.dims.len() {
                return Err(DomainError::AxisMetadata { expected: self.dims.len(), got: v.len() });
            }
        }
        self.axis_labels = labels;
        self.axis_units = units;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn axis_labels(&self) -> &[String] {
        &self.axis_labels
    }

    pub fn axis_units(&self) -> &[String] {
        &self.axis_units
    }

    pub fn strides(&self) -> Vec<usize> {
        let s = strides_of(padded_dims(&self.dims));
        s[..self.ndim()].to_vec()
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut rem = index;
        let mut out = vec![0; self.ndim()];
        for a in (0..self.ndim()).rev() {
            out[a] = rem % self.dims[a];
            rem /= self.dims[a];
        }
        out
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.dims).fold(0, |acc, (&c, &n)| acc * n + c)
    }

    pub fn counts(&self) -> CellCounts {
        count_cells(&self.dims, &self.mask)
    }

    pub fn in_mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Offsets (per axis, in {-1, 0, 1}) of the neighbourhood.
    fn neighbour_offsets(&self, connectivity: Connectivity) -> Vec<[isize; 3]> {
        let d = self.ndim();
        let range = |a: usize| if a < d { -1..=1 } else { 0..=0 };
        let mut out = Vec::new();
        for dx in range(0) {
            for dy in range(1) {
                for dz in range(2) {
                    let nonzero = [dx, dy, dz].iter().filter(|&&o| o != 0).count();
                    let keep = match connectivity {
                        Connectivity::Face => nonzero == 1,
                        Connectivity::Full => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    fn for_each_neighbour(&self, v: usize, offsets: &[[isize; 3]], mut f: impl FnMut(usize)) {
        let d = padded_dims(&self.dims);
        let s = strides_of(d);
        let c = [v / s[0], (v / s[1]) % d[1], v % d[2]];
        'next: for off in offsets {
            let mut w = 0usize;
            for a in 0..3 {
                let p = c[a] as isize + off[a];
                if p < 0 || p >= d[a] as isize {
                    continue 'next;
                }
                w += p as usize * s[a];
            }
            if self.mask[w] {
                f(w);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Vec<usize>>,
    dim: usize,
    edges: Vec<[usize; 2]>,
    adjacency: Vec<Vec<usize>>,
    mask: Vec<bool>,
}

impl Mesh {
    /// Builds a mesh from vertex coordinates and simplices of order `D + 1`.
    ///
    /// `D` is inferred from the simplex order; edges (`D = 1`) and
    /// triangles (`D = 2`) are supported.
    pub fn new(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> Result<Self, DomainError> {
        let first = simplices.first().ok_or(DomainError::NoSimplices)?;
        let order = first.len();
        let dim = order.saturating_sub(1);
        if !(1..=2).contains(&dim) {
            return Err(DomainError::UnsupportedDimension(dim));
        }
        let embed = vertices.first().map_or(0, Vec::len);
        if embed < dim {
            return Err(DomainError::EmbeddingTooSmall { embed, dim });
        }
        if let Some((index, v)) = vertices.iter().enumerate().find(|(_, v)| v.len() != embed) {
            return Err(DomainError::CoordinateLength { index, expected: embed, got: v.len() });
        }
        let n = vertices.len();
        let mut edge_set = BTreeSet::new();
        for (i, s) in simplices.iter().enumerate() {
            if s.len() != order {
                return Err(DomainError::SimplexOrder { index: i, expected: order, got: s.len() });
            }
            if let Some(&vertex) = s.iter().find(|&&v| v >= n) {
                return Err(DomainError::IndexOutOfRange { simplex: i, vertex, count: n });
            }
            for a in 0..order {
                for b in a + 1..order {
                    if s[a] == s[b] {
                        return Err(DomainError::DegenerateSimplex(i));
                    }
                    edge_set.insert([s[a].min(s[b]), s[a].max(s[b])]);
                }
            }
        }
        let edges: Vec<[usize; 2]> = edge_set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &[a, b] in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { vertices, simplices, dim, edges, adjacency, mask: vec![true; n] })
    }

    /// Parses the plain-text format: `D nV nS`, then `nV` coordinate lines,
    /// then `nS` lines of `D + 1` zero-based vertex indices.
    pub fn from_off_str(text: &str) -> Result<Self, DomainError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| DomainError::Parse("missing header".into()))?;
        let head: Vec<usize> = parse_fields(header)?;
        let [dim, n_vertices, n_simplices] = head[..] else {
            return Err(DomainError::Parse(format!("header must be `D nV nS`, got `{header}`")));
        };
        let mut vertices = Vec::with_capacity(n_vertices);
        for i in 0..n_vertices {
            let line = lines.next().ok_or_else(|| DomainError::Parse(format!("missing vertex line {i}")))?;
            vertices.push(parse_fields::<f64>(line)?);
        }
        let mut simplices = Vec::with_capacity(n_simplices);
        for i in 0..n_simplices {
            let line = lines.next().ok_or_else(|| DomainError::Parse(format!("missing simplex line {i}")))?;
            simplices.push(parse_fields::<usize>(line)?);
        }
        if lines.next().is_some() {
            return Err(DomainError::Parse("trailing content after simplices".into()));
        }
        let mesh = Self::new(vertices, simplices)?;
        if mesh.dim != dim {
            return Err(DomainError::Parse(format!("header says D = {dim}, simplices have D = {}", mesh.dim)));
        }
        Ok(mesh)
    }

    pub fn to_off_string(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dim, self.vertices.len(), self.simplices.len());
        for v in &self.vertices {
            let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        for s in &self.simplices {
            let line: Vec<String> = s.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same connectivity with new coordinates (e.g. an inflated or warped surface).
    pub fn with_vertices(&self, vertices: Vec<Vec<f64>>) -> Result<Self, DomainError> {
        let mut mesh = Self::new(vertices, self.simplices.clone())?;
        mesh.mask = self.mask.clone();
        Ok(mesh)
    }

    /// Simplices whose vertices all lie in the mask.
    pub fn active_simplices(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.simplices.iter().map(Vec::as_slice).filter(|s| s.iter().all(|&v| self.mask[v]))
    }

    fn active_edges(&self) -> impl Iterator<Item = &[usize; 2]> + '_ {
        self.edges.iter().filter(|e| self.mask[e[0]] && self.mask[e[1]])
    }

    fn edge_length(&self, a: usize, b: usize) -> f64 {
        self.vertices[a].iter().zip(&self.vertices[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    fn triangle_area(&self, s: &[usize]) -> f64 {
        let p0 = &self.vertices[s[0]];
        let e1: Vec<f64> = self.vertices[s[1]].iter().zip(p0).map(|(a, b)| a - b).collect();
        let e2: Vec<f64> = self.vertices[s[2]].iter().zip(p0).map(|(a, b)| a - b).collect();
        let dot = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let gram = dot(&e1, &e1) * dot(&e2, &e2) - dot(&e1, &e2).powi(2);
        0.5 * gram.max(0.0).sqrt()
    }

    fn intrinsic_volumes(&self) -> Vec<f64> {
        let n_vertices = self.mask.iter().filter(|&&m| m).count() as f64;
        let n_edges = self.active_edges().count() as f64;
        match self.dim {
            1 => {
                let length: f64 = self.active_edges().map(|e| self.edge_length(e[0], e[1])).sum();
                vec![n_vertices - n_edges, length]
            }
            _ => {
                let mut area = 0.0;
                let mut n_faces = 0usize;
                let mut faces_per_edge: BTreeMap<[usize; 2], usize> = BTreeMap::new();
                for s in self.active_simplices() {
                    area += self.triangle_area(s);
                    n_faces += 1;
                    for (a, b) in [(s[0], s[1]), (s[1], s[2]), (s[0], s[2])] {
                        *faces_per_edge.entry([a.min(b), a.max(b)]).or_default() += 1;
                    }
                }
                // Boundary edges count half; edges in no active triangle are bare segments.
                let mut mu1 = 0.0;
                for e in self.active_edges() {
                    let len = self.edge_length(e[0], e[1]);
                    match faces_per_edge.get(e).copied().unwrap_or(0) {
                        0 => mu1 += len,
                        1 => mu1 += 0.5 * len,
                        _ => {}
                    }
                }
                vec![n_vertices - n_edges + n_faces as f64, mu1, area]
            }
        }
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str) -> Result<Vec<T>, DomainError> {
    line.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| DomainError::Parse(format!("bad token `{tok}` in `{line}`"))))
        .collect()
}

/// μ_0..μ_D of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicVolumes {
    pub mu: Vec<f64>,
}

impl IntrinsicVolumes {
    pub fn dim(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn top(&self) -> f64 {
        self.mu[self.dim()]
    }

    /// Closed form for a full box of `points` vertices per axis.
    pub fn of_box(points: &[f64]) -> Self {
        let sides: Vec<f64> = points.iter().map(|p| p - 1.0).collect();
        Self { mu: elementary_symmetric(&sides) }
    }
}

/// `e_0..e_n` of the given values; e.g. the intrinsic volumes of a box with these side lengths.
pub fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (k, &x) in values.iter().enumerate() {
        for j in (1..=k + 1).rev() {
            e[j] += e[j - 1] * x;
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchSpace {
    Lattice(Lattice),
    Mesh(Mesh),
}

impl From<Lattice> for SearchSpace {
    fn from(l: Lattice) -> Self {
        Self::Lattice(l)
    }
}

impl From<Mesh> for SearchSpace {
    fn from(m: Mesh) -> Self {
        Self::Mesh(m)
    }
}

pub fn build_lattice(dims: &[usize], mask: Vec<bool>) -> Result<SearchSpace, DomainError> {
    Lattice::new(dims, mask).map(SearchSpace::Lattice)
}

pub fn build_mesh(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> Result<SearchSpace, DomainError> {
    Mesh::new(vertices, simplices).map(SearchSpace::Mesh)
}

pub fn intrinsic_volumes(space: &SearchSpace) -> IntrinsicVolumes {
    space.intrinsic_volumes()
}

impl SearchSpace {
    pub fn dim(&self) -> usize {
        match self {
            Self::Lattice(l) => l.ndim(),
            Self::Mesh(m) => m.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Lattice(l) => l.len(),
            Self::Mesh(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> &[bool] {
        match self {
            Self::Lattice(l) => l.mask(),
            Self::Mesh(m) => m.mask(),
        }
    }

    /// Number of in-mask vertices ("search volume" in bins).
    pub fn volume(&self) -> usize {
        self.mask().iter().filter(|&&m| m).count()
    }

    pub fn as_lattice(&self) -> Option<&Lattice> {
        match self {
            Self::Lattice(l) => Some(l),
            Self::Mesh(_) => None,
        }
    }

    pub fn as_mesh(&self) -> Option<&Mesh> {
        match self {
            Self::Mesh(m) => Some(m),
            Self::Lattice(_) => None,
        }
    }

    pub fn intrinsic_volumes(&self) -> IntrinsicVolumes {
        let mu = match self {
            Self::Lattice(l) => l.counts().intrinsic_volumes()[..=l.ndim()].to_vec(),
            Self::Mesh(m) => m.intrinsic_volumes(),
        };
        IntrinsicVolumes { mu }
    }

    /// Calls `f` for every in-mask neighbour of `v`. Meshes ignore `connectivity`.
    pub fn for_each_neighbour(&self, v: usize, connectivity: Connectivity, mut f: impl FnMut(usize)) {
        match self {
            Self::Lattice(l) => {
                let offsets = l.neighbour_offsets(connectivity);
                l.for_each_neighbour(v, &offsets, f);
            }
            Self::Mesh(m) => m.neighbours(v).iter().filter(|&&w| m.mask[w]).for_each(|&w| f(w)),
        }
    }

    /// In-mask neighbour lists for every vertex (empty for out-of-mask vertices).
    pub fn neighbour_lists(&self, connectivity: Connectivity) -> Vec<Vec<usize>> {
        let mask = self.mask();
        match self {
            Self::Lattice(l) => {
                let offsets = l.neighbour_offsets(connectivity);
                (0..l.len())
                    .map(|v| {
                        let mut out = Vec::new();
                        if mask[v] {
                            l.for_each_neighbour(v, &offsets, |w| out.push(w));
                        }
                        out
                    })
                    .collect()
            }
            Self::Mesh(m) => (0..m.len())
                .map(|v| if mask[v] { m.neighbours(v).iter().copied().filter(|&w| mask[w]).collect() } else { Vec::new() })
                .collect(),
        }
    }

    /// The same space with its mask intersected with `sub_mask`.
    pub fn restrict(&self, sub_mask: &[bool]) -> Result<SearchSpace, DomainError> {
        if sub_mask.len() != self.len() {
            return Err(DomainError::MaskLength { expected: self.len(), got: sub_mask.len() });
        }
        let mask: Vec<bool> = self.mask().iter().zip(sub_mask).map(|(&a, &b)| a && b).collect();
        if !mask.iter().any(|&m| m) {
            return Err(DomainError::EmptyMask);
        }
        Ok(match self {
            Self::Lattice(l) => Self::Lattice(Lattice { mask, ..l.clone() }),
            Self::Mesh(m) => Self::Mesh(Mesh { mask, ..m.clone() }),
        })
    }
}

/// Maximal connected sets of vertices that are both in `member` and in the space's mask.
///
/// Components are ordered by their smallest vertex index and each is sorted.
pub fn connected_components(space: &SearchSpace, member: &[bool], connectivity: Connectivity) -> Vec<Vec<usize>> {
    let mask = space.mask();
    let inside = |v: usize| member[v] && mask[v];
    let mut label = vec![usize::MAX; space.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..space.len() {
        if !inside(start) || label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut comp = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(v) = stack.pop() {
            comp.push(v);
            space.for_each_neighbour(v, connectivity, |w| {
                if member[w] && label[w] == usize::MAX {
                    label[w] = id;
                    stack.push(w);
                }
            });
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}
