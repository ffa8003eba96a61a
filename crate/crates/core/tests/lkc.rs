use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoinfer::domain::{build_lattice, IntrinsicVolumes, Lattice, SearchSpace};
use topoinfer::glm::{fit, normalized_residuals, DesignMatrix, ResidualSet};
use topoinfer::lkc::{estimate_resels, fwhm_estimate_with, lkc_top, lkc_top_with, NormMode, ReselVector};
use topoinfer::simulate::{effective_fwhm, gen_fields, true_resels, SimConfig};

fn residuals(config: &SimConfig, index: u64, n: usize) -> ResidualSet {
    let fields = gen_fields(config, index, n).unwrap();
    normalized_residuals(&fit(&fields, &DesignMatrix::one_sample(n)).unwrap())
}

/// Mean estimated resels_D over replications divided by the generator value.
fn recovery(dims: &[usize], fwhm: f64, mode: NormMode, replications: u64, n: usize) -> f64 {
    let config = SimConfig::new(dims.to_vec(), vec![fwhm; dims.len()], 1, 48);
    let truth = true_resels(&config).top();
    let space = build_lattice(dims, vec![true; config.n_vertices()]).unwrap();
    let total: f64 = (0..replications).map(|r| estimate_resels(&residuals(&config, r, n), &space, mode).unwrap().top()).sum();
    total / replications as f64 / truth
}

#[test]
fn cube_resels_are_recovered() {
    // 50 replications of n = 20 residual fields on 48^3 at FWHM 6
    let exact = recovery(&[48, 48, 48], 6.0, NormMode::Exact, 50, 20);
    assert!((exact - 1.0).abs() <= 0.10, "unit-vector differences: ratio {exact}");
    // the source-norm approximation keeps the radial part of each difference and is biased upward
    let source = recovery(&[48, 48, 48], 6.0, NormMode::Source, 10, 20);
    let predicted = (20.0f64 / 19.0).powf(1.5);
    assert!(source > exact && (source / exact - predicted).abs() < 0.05, "source/exact {} vs {predicted}", source / exact);
}

#[test]
fn fwhm_of_smooth_fields() {
    let config = SimConfig::new(vec![96, 96], vec![8.0, 8.0], 1, 9);
    let space = build_lattice(&config.dims, vec![true; config.n_vertices()]).unwrap();
    for mode in [NormMode::Exact, NormMode::Source, NormMode::Mean] {
        let est = fwhm_estimate_with(&residuals(&config, 0, 20), &space, mode).unwrap();
        for f in est {
            assert!((f - 8.0).abs() <= 0.15 * 8.0, "{mode:?}: {f}");
        }
    }
}

#[test]
fn white_noise_fwhm_floor() {
    let config = SimConfig::new(vec![40, 40], vec![0.0, 0.0], 1, 2);
    let space = build_lattice(&config.dims, vec![true; config.n_vertices()]).unwrap();
    let floor = (2.0f64.ln() * 2.0).sqrt();
    let mut mean = [0.0; 2];
    let reps = 100;
    for r in 0..reps {
        let est = fwhm_estimate_with(&residuals(&config, r, 30), &space, NormMode::Exact).unwrap();
        for a in 0..2 {
            mean[a] += est[a] / reps as f64;
        }
    }
    for m in mean {
        assert!((m - floor).abs() <= 0.1 * floor, "{m} vs {floor}");
    }
}

#[test]
fn isotropic_estimators_agree() {
    let config = SimConfig::new(vec![40, 40, 40], vec![5.0, 5.0, 5.0], 1, 3);
    let space = build_lattice(&config.dims, vec![true; config.n_vertices()]).unwrap();
    let res = residuals(&config, 0, 20);
    let r = estimate_resels(&res, &space, NormMode::Exact).unwrap();
    let fwhm = r.fwhm.clone().unwrap();
    let from_fwhm = space.intrinsic_volumes().top() / fwhm.iter().product::<f64>();
    assert!((r.top() / from_fwhm - 1.0).abs() <= 0.10, "{} vs {from_fwhm}", r.top());
    assert!((fwhm[0] - effective_fwhm(5.0)).abs() < 0.15 * 5.0);
}

#[test]
fn box_resel_interpolation() {
    let mu = IntrinsicVolumes::of_box(&[64.0, 64.0, 442.0]);
    let r = ReselVector::from_resels(230.3, &mu).unwrap();
    assert_eq!(r.resels[0], 1.0);
    assert!((r.resels[1] - 28.6).abs() < 0.01 * 28.6, "{}", r.resels[1]);
    assert!((r.resels[2] - 153.0).abs() < 0.01 * 153.0, "{}", r.resels[2]);
    assert_eq!(r.resels[3], 230.3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_a_cube_increases_lkc(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [6usize, 5, 4];
        let n = 5;
        let len = 120;
        let raw: Vec<f64> = (0..len * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let res = ResidualSet::from_residuals(n, &raw);
        // start from a slab and grow by one voxel that completes a new cube
        let mut mask = vec![false; len];
        let lattice = Lattice::full(&dims).unwrap();
        for v in 0..len {
            let c = lattice.coords(v);
            mask[v] = c[0] <= 2;
        }
        let before = lkc_top(&res, &SearchSpace::from(Lattice::new(&dims, mask.clone()).unwrap())).unwrap();
        for v in 0..len {
            let c = lattice.coords(v);
            if c[0] == 3 && c[1] <= 1 && c[2] <= 1 {
                mask[v] = true;
            }
        }
        let after = lkc_top(&res, &SearchSpace::from(Lattice::new(&dims, mask).unwrap())).unwrap();
        prop_assert!(after > before, "{} -> {}", before, after);
    }

    #[test]
    fn lkc_is_scale_free_in_residuals(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let raw: Vec<f64> = (0..64 * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let scaled: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let space = SearchSpace::from(Lattice::full(&[8, 8]).unwrap());
        for mode in [NormMode::Exact, NormMode::Source, NormMode::Mean] {
            let a = lkc_top_with(&ResidualSet::from_residuals(n, &raw), &space, mode).unwrap();
            let b = lkc_top_with(&ResidualSet::from_residuals(n, &scaled), &space, mode).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }
    }
}
