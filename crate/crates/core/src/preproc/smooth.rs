
use crate::domain::{Connectivity, SearchSpace};
use crate::simulate::gaussian_kernel as kernel;

use super::{GridSlice, PreprocError};

/// A C-order array with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Volume {
    pub fn new(dims: Vec<usize>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self, PreprocError> {
        let n: usize = dims.iter().product();
        for len in [values.len(), mask.len()] {
            if len != n {
                return Err(PreprocError::Length { expected: n, got: len });
            }
        }
        Ok(Self { dims, values, mask })
    }
}

/// Stacks equally shaped 2D maps along a new trailing time axis.
pub fn stack_time(slices: &[GridSlice]) -> Result<Volume, PreprocError> {
    let first = slices.first().ok_or(PreprocError::NoSlices)?;
    if let Some(i) = slices.iter().position(|s| s.dims != first.dims || s.mask != first.mask) {
        return Err(PreprocError::SliceMismatch(i));
    }
    let nt = slices.len();
    let n_pix = first.values.len();
    let mut values = vec![0.0; n_pix * nt];
    let mut mask = vec![false; n_pix * nt];
    for (t, s) in slices.iter().enumerate() {
        for p in 0..n_pix {
            values[p * nt + t] = s.values[p];
            mask[p * nt + t] = s.mask[p];
        }
    }
    Ok(Volume { dims: vec![first.dims[0], first.dims[1], nt], values, mask })
}

/// Mean over `axis` at every other location, replicated along that axis.
///
/// With a time axis this is the per-sensor mean amplitude used as the
/// reference image of a paired test.
pub fn reference_volume(volume: &Volume, axis: usize) -> Result<Volume, PreprocError> {
    let nd = volume.dims.len();
    if axis >= nd {
        return Err(PreprocError::Axis { axis, ndim: nd });
    }
    let n = volume.dims[axis];
    let stride: usize = volume.dims[axis + 1..].iter().product();
    let mut values = vec![0.0; volume.values.len()];
    for (v, out) in values.iter_mut().enumerate() {
        let pos = (v / stride) % n;
        let base = v - pos * stride;
        *out = (0..n).map(|k| volume.values[base + k * stride]).sum::<f64>() / n as f64;
    }
    Ok(Volume { dims: volume.dims.clone(), values, mask: volume.mask.clone() })
}

/// Zero-padded "same" convolution along one axis.
fn convolve_axis(data: &mut [f64], dims: &[usize], axis: usize, k: &[f64]) {
    let n = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let r = (k.len() / 2) as i64;
    let mut line = vec![0.0; n];
    let outer = data.len() / (n * stride);
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * n * stride + inner;
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + i * stride];
            }
            for i in 0..n as i64 {
                let lo = (i - r).max(0);
                let hi = (i + r).min(n as i64 - 1);
                data[base + i as usize * stride] = (lo..=hi).map(|j| k[(j - i + r) as usize] * line[j as usize]).sum();
            }
        }
    }
}

/// Separable Gaussian smoothing renormalized by the smoothed mask, so
/// constants are preserved up to the mask and grid boundaries.
/// Out-of-mask vertices are returned as 0.
pub fn gaussian_smooth(values: &[f64], dims: &[usize], mask: Option<&[bool]>, fwhm: &[f64]) -> Result<Vec<f64>, PreprocError> {
    let n: usize = dims.iter().product();
    if values.len() != n {
        return Err(PreprocError::Length { expected: n, got: values.len() });
    }
    if fwhm.len() != dims.len() {
        return Err(PreprocError::FwhmLength { dims: dims.len(), fwhm: fwhm.len() });
    }
    if let Some(&f) = fwhm.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(PreprocError::BadFwhm(f));
    }
    let inside = |v: usize| mask.is_none_or(|m| m[v]);
    let mut num: Vec<f64> = (0..n).map(|v| if inside(v) { values[v] } else { 0.0 }).collect();
    let mut den: Vec<f64> = (0..n).map(|v| if inside(v) { 1.0 } else { 0.0 }).collect();
    for (axis, &f) in fwhm.iter().enumerate() {
        if f > 0.0 {
            let k = kernel(f);
            convolve_axis(&mut num, dims, axis, &k);
            convolve_axis(&mut den, dims, axis, &k);
        }
    }
    Ok((0..n).map(|v| if inside(v) && den[v] > 0.0 { num[v] / den[v] } else { 0.0 }).collect())
}

/// `steps` iterations of `x <- x - tau L x` with the unweighted graph
/// Laplacian of the in-mask edge graph (face neighbours on lattices).
pub fn laplacian_smooth(space: &SearchSpace, data: &[f64], steps: usize, tau: f64) -> Result<Vec<f64>, PreprocError> {
    if data.len() != space.len() {
        return Err(PreprocError::Length { expected: space.len(), got: data.len() });
    }
    let neighbours = space.neighbour_lists(Connectivity::Face);
    let degree = neighbours.iter().map(Vec::len).max().unwrap_or(0);
    let limit = if degree == 0 { f64::INFINITY } else { 1.0 / degree as f64 };
    if !(tau > 0.0 && tau <= limit) {
        return Err(PreprocError::UnstableRate { tau, limit, degree });
    }
    let mut x = data.to_vec();
    let mut next = x.clone();
    for _ in 0..steps {
        for (v, nb) in neighbours.iter().enumerate() {
            let lx: f64 = nb.iter().map(|&w| x[v] - x[w]).sum();
            next[v] = x[v] - tau * lx;
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Lattice;
    use approx::assert_relative_eq;

    #[test]
    fn stacking() {
        let slice = |k: f64| GridSlice { dims: [2, 3], values: vec![k; 6], mask: vec![true; 6] };
        let one = stack_time(&[slice(1.0)]).unwrap();
        assert_eq!(one.dims, vec![2, 3, 1]);
        let v = stack_time(&[slice(0.0), slice(1.0), slice(2.0)]).unwrap();
        assert_eq!(v.dims, vec![2, 3, 3]);
        for p in 0..6 {
            assert_eq!(&v.values[p * 3..p * 3 + 3], &[0.0, 1.0, 2.0]);
        }
        let mut odd = slice(0.0);
        odd.mask[0] = false;
        assert!(matches!(stack_time(&[slice(0.0), odd]), Err(PreprocError::SliceMismatch(1))));
        assert!(matches!(stack_time(&[]), Err(PreprocError::NoSlices)));
    }

    #[test]
    fn reference_is_time_mean() {
        let v = Volume::new(vec![2, 3], vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0], vec![true; 6]).unwrap();
        let r = reference_volume(&v, 1).unwrap();
        assert_eq!(r.values, vec![2.0, 2.0, 2.0, 20.0, 20.0, 20.0]);
        let r0 = reference_volume(&v, 0).unwrap();
        assert_eq!(r0.values, vec![5.5, 11.0, 16.5, 5.5, 11.0, 16.5]);
    }

    #[test]
    fn constants_survive_masked_smoothing() {
        let dims = [20, 16, 6];
        let n = 20 * 16 * 6;
        let mask: Vec<bool> = (0..n).map(|v| (v * 7919) % 5 != 0).collect();
        let out = gaussian_smooth(&vec![3.25; n], &dims, Some(&mask), &[6.0, 4.0, 2.0]).unwrap();
        for (o, m) in out.iter().zip(&mask) {
            if *m {
                assert_relative_eq!(*o, 3.25, epsilon = 1e-12);
            } else {
                assert_eq!(*o, 0.0);
            }
        }
    }

    #[test]
    fn impulse_half_maximum_width() {
        let n = 41;
        let dims = [n, n, n];
        let mut data = vec![0.0; n * n * n];
        let c = 20 * n * n + 20 * n + 20;
        data[c] = 1.0;
        let out = gaussian_smooth(&data, &dims, None, &[8.0; 3]).unwrap();
        let k = kernel(8.0);
        let sum: f64 = k.iter().sum();
        assert_relative_eq!(out[c], (1.0 / sum).powi(3), max_relative = 1e-12);
        // half-maximum crossing along axis 0, linearly interpolated
        let profile: Vec<f64> = (0..n).map(|i| out[i * n * n + 20 * n + 20] / out[c]).collect();
        let i = (20..n).find(|&i| profile[i] < 0.5).unwrap();
        let cross = (i - 1) as f64 + (profile[i - 1] - 0.5) / (profile[i - 1] - profile[i]);
        assert!((2.0 * (cross - 20.0) - 8.0).abs() < 0.5);
    }

    #[test]
    fn zero_fwhm_is_identity_and_errors() {
        let data = vec![1.0, 5.0, -2.0];
        assert_eq!(gaussian_smooth(&data, &[3], None, &[0.0]).unwrap(), data);
        assert!(matches!(gaussian_smooth(&data, &[3], None, &[-1.0]), Err(PreprocError::BadFwhm(_))));
        assert!(matches!(gaussian_smooth(&data, &[3], None, &[1.0, 1.0]), Err(PreprocError::FwhmLength { .. })));
    }

    #[test]
    fn laplacian_basics() {
        let space = SearchSpace::from(Lattice::full(&[6, 6]).unwrap());
        let constant = vec![4.0; 36];
        assert_eq!(laplacian_smooth(&space, &constant, 10, 0.25).unwrap(), constant);
        let data: Vec<f64> = (0..36).map(|v| (v * 13 % 7) as f64).collect();
        assert_eq!(laplacian_smooth(&space, &data, 0, 0.1).unwrap(), data);
        assert!(matches!(laplacian_smooth(&space, &data, 1, 0.3), Err(PreprocError::UnstableRate { .. })));
        assert!(matches!(laplacian_smooth(&space, &data, 1, 0.0), Err(PreprocError::UnstableRate { .. })));
    }

    #[test]
    fn diffusion_matches_gaussian() {
        let n = 64;
        let space = SearchSpace::from(Lattice::full(&[n, n]).unwrap());
        let mut data = vec![0.0; n * n];
        let c = 32 * n + 32;
        data[c] = 1.0;
        let sigma: f64 = 3.0;
        let tau = 0.1;
        let steps = (sigma * sigma / (2.0 * tau)).round() as usize;
        let diffused = laplacian_smooth(&space, &data, steps, tau).unwrap();
        let fwhm = sigma * (8.0 * std::f64::consts::LN_2).sqrt();
        let gauss = gaussian_smooth(&data, &[n, n], None, &[fwhm, fwhm]).unwrap();
        for i in 26..=38 {
            let v = i * n + 32;
            assert_relative_eq!(diffused[v], gauss[v], max_relative = 0.05);
        }
    }
}
