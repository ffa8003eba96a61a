use std::io::Read;

use spade::{DelaunayTriangulation, FloatTriangulation, Point2, Triangulation};

use super::PreprocError;

/// Named sensor positions on the flattened scalp plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLayout {
    pub names: Vec<String>,
    pub positions: Vec<[f64; 2]>,
}

impl SensorLayout {
    pub fn new(names: Vec<String>, positions: Vec<[f64; 2]>) -> Result<Self, PreprocError> {
        if names.len() != positions.len() {
            return Err(PreprocError::Length { expected: names.len(), got: positions.len() });
        }
        Ok(Self { names, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Reads `name,x,y` rows; a leading header row is skipped if its coordinates are not numeric.
pub fn read_layout<R: Read>(reader: R) -> Result<SensorLayout, PreprocError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let (mut names, mut positions) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(PreprocError::Layout(format!("row {} has {} fields, expected name,x,y", i + 1, rec.len())));
        }
        match (rec[1].parse::<f64>(), rec[2].parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                names.push(rec[0].to_string());
                positions.push([x, y]);
            }
            _ if i == 0 => continue,
            _ => return Err(PreprocError::Layout(format!("row {}: coordinates are not numbers", i + 1))),
        }
    }
    SensorLayout::new(names, positions)
}

/// Interpolated 2D map with its in-hull mask (values outside the hull are 0).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSlice {
    pub dims: [usize; 2],
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Barycentric weights of every grid point on the Delaunay triangulation of a layout.
///
/// The grid spans the bounding box of the sensors, axis 0 along x. Building
/// it once lets many sensor vectors be mapped cheaply.
#[derive(Debug, Clone)]
pub struct GridInterpolator {
    dims: [usize; 2],
    n_sensors: usize,
    weights: Vec<Vec<(usize, f64)>>,
}

impl GridInterpolator {
    pub fn new(layout: &SensorLayout, dims: [usize; 2]) -> Result<Self, PreprocError> {
        if layout.len() < 3 {
            return Err(PreprocError::TooFewSensors(layout.len()));
        }
        let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
        let mut sensor_of_vertex = Vec::with_capacity(layout.len());
        for (name, p) in layout.names.iter().zip(&layout.positions) {
            let handle = tri.insert(Point2::new(p[0], p[1])).map_err(|_| PreprocError::BadSensor(name.clone()))?;
            if handle.index() != sensor_of_vertex.len() {
                return Err(PreprocError::BadSensor(name.clone()));
            }
            sensor_of_vertex.push(sensor_of_vertex.len());
        }
        if tri.num_inner_faces() == 0 {
            return Err(PreprocError::Collinear);
        }
        let (lo, hi) = bounding_box(&layout.positions);
        let coord = |a: usize, i: usize| {
            if dims[a] == 1 {
                0.5 * (lo[a] + hi[a])
            } else {
                lo[a] + (hi[a] - lo[a]) * i as f64 / (dims[a] - 1) as f64
            }
        };
        let barycentric = tri.barycentric();
        let mut buffer = Vec::new();
        let mut weights = Vec::with_capacity(dims[0] * dims[1]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                barycentric.get_weights(Point2::new(coord(0, i), coord(1, j)), &mut buffer);
                weights.push(buffer.iter().map(|(h, w)| (sensor_of_vertex[h.index()], *w)).collect());
            }
        }
        Ok(Self { dims, n_sensors: layout.len(), weights })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn mask(&self) -> Vec<bool> {
        self.weights.iter().map(|w| !w.is_empty()).collect()
    }

    pub fn apply(&self, values: &[f64]) -> Result<GridSlice, PreprocError> {
        if values.len() != self.n_sensors {
            return Err(PreprocError::Length { expected: self.n_sensors, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PreprocError::NonFinite(i));
        }
        let grid = self.weights.iter().map(|w| w.iter().map(|&(s, wt)| wt * values[s]).sum()).collect();
        Ok(GridSlice { dims: self.dims, values: grid, mask: self.mask() })
    }
}

fn bounding_box(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Linear interpolation of one sensor vector onto a `dims` grid over the layout's bounding box.
pub fn interpolate_to_grid(layout: &SensorLayout, values: &[f64], dims: [usize; 2]) -> Result<GridSlice, PreprocError> {
    GridInterpolator::new(layout, dims)?.apply(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn layout(points: &[[f64; 2]]) -> SensorLayout {
        SensorLayout::new((0..points.len()).map(|i| format!("S{i}")).collect(), points.to_vec()).unwrap()
    }

    fn scattered() -> SensorLayout {
        let mut pts = Vec::new();
        for k in 0..24 {
            let a = k as f64 * 0.7;
            let r = 0.3 + 0.7 * ((k * 7) % 11) as f64 / 10.0;
            pts.push([r * a.cos(), r * a.sin()]);
        }
        layout(&pts)
    }

    #[test]
    fn constants_and_planes_are_reproduced() {
        let l = scattered();
        let interp = GridInterpolator::new(&l, [64, 64]).unwrap();
        let c = interp.apply(&vec![2.5; l.len()]).unwrap();
        assert!(c.mask.iter().filter(|&&m| m).count() > 1000);
        for (v, m) in c.values.iter().zip(&c.mask) {
            if *m {
                assert_relative_eq!(*v, 2.5, epsilon = 1e-12);
            }
        }
        let plane: Vec<f64> = l.positions.iter().map(|p| 3.0 * p[0] - 2.0 * p[1] + 0.5).collect();
        let g = interp.apply(&plane).unwrap();
        let (lo, hi) = bounding_box(&l.positions);
        for i in 0..64 {
            for j in 0..64 {
                let v = i * 64 + j;
                if g.mask[v] {
                    let x = lo[0] + (hi[0] - lo[0]) * i as f64 / 63.0;
                    let y = lo[1] + (hi[1] - lo[1]) * j as f64 / 63.0;
                    assert!((g.values[v] - (3.0 * x - 2.0 * y + 0.5)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn triangle_centroid_is_one_third() {
        let l = layout(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]);
        // a 4x4 grid over [0,3]^2 puts grid point (1,1) on the centroid
        let g = interpolate_to_grid(&l, &[1.0, 0.0, 0.0], [4, 4]).unwrap();
        assert_relative_eq!(g.values[4 + 1], 1.0 / 3.0, epsilon = 1e-12);
        assert!(!g.mask[15]);
        assert!(g.mask[0]);
        assert_eq!(g.values[0], 1.0);
    }

    #[test]
    fn layout_errors() {
        let two = layout(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(GridInterpolator::new(&two, [8, 8]), Err(PreprocError::TooFewSensors(2))));
        let line = layout(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert!(matches!(GridInterpolator::new(&line, [8, 8]), Err(PreprocError::Collinear)));
        let dup = layout(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert!(matches!(GridInterpolator::new(&dup, [8, 8]), Err(PreprocError::BadSensor(_))));
        let ok = layout(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let interp = GridInterpolator::new(&ok, [8, 8]).unwrap();
        assert!(matches!(interp.apply(&[1.0, f64::NAN, 0.0]), Err(PreprocError::NonFinite(1))));
        assert!(matches!(interp.apply(&[1.0]), Err(PreprocError::Length { .. })));
    }

    #[test]
    fn layout_csv() {
        let l = read_layout("name,x,y\nFz, 0.0, 0.5\nCz,0,0\nPz,0.1,-0.5\n".as_bytes()).unwrap();
        assert_eq!(l.names, vec!["Fz", "Cz", "Pz"]);
        assert_eq!(l.positions[2], [0.1, -0.5]);
        assert!(read_layout("a,1,2\nb,x,3\n".as_bytes()).is_err());
        assert!(read_layout("a,1\n".as_bytes()).is_err());
    }
}
