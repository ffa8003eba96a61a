use proptest::prelude::*;
use topoinfer::domain::{IntrinsicVolumes, Lattice, SearchSpace};
use topoinfer::ecd::{corrected_threshold, ec_density, expected_ec, fwe_p, restrict, FieldType};
use topoinfer::lkc::ReselVector;

// Evaluated independently in double precision with scipy's t survival function and lgamma.
const FROZEN: [(f64, f64, [f64; 4]); 3] = [
    (12.0, 3.93, [0.0009993377056291921, 0.0028004035611630803, 0.007160255976125779, 0.016259616991647918]),
    (5.0, 2.5, [0.027245049671188102, 0.05234772612728827, 0.08272074057377525, 0.0923981757657671]),
    (30.0, 4.2, [0.00010989421710800977, 0.00032428781872594764, 0.0008972516518515305, 0.002297023141718107]),
];

#[test]
fn student_densities_match_frozen_values() {
    for (dof, t, expected) in FROZEN {
        for (d, e) in expected.iter().enumerate() {
            let got = ec_density(FieldType::student_t(dof), d, t).unwrap();
            assert!((got - e).abs() <= 1e-9 * e, "dof {dof} d {d}: {got} vs {e}");
        }
    }
    let dominant = 230.3 * ec_density(FieldType::student_t(12.0), 3, 3.93).unwrap();
    assert!((dominant - 3.75).abs() < 0.01, "{dominant}");
}

/// Gaussian densities are iterated derivatives of the tail probability:
/// `rho_d = (4 ln 2 / 2 pi)^{d/2} (-d/dt)^d P(Z >= t)`.
#[test]
fn gaussian_densities_are_derivatives_of_the_tail() {
    let h = 1e-3;
    let q = |t: f64| FieldType::Gaussian.sf(t);
    let scale = |d: i32| (4.0 * std::f64::consts::LN_2 / (2.0 * std::f64::consts::PI)).powf(0.5 * d as f64);
    for k in 0..40 {
        let t = -1.0 + 0.15 * k as f64;
        let d1 = -(q(t + h) - q(t - h)) / (2.0 * h);
        let d2 = (q(t + h) - 2.0 * q(t) + q(t - h)) / (h * h);
        let d3 = -(q(t + 2.0 * h) - 2.0 * q(t + h) + 2.0 * q(t - h) - q(t - 2.0 * h)) / (2.0 * h * h * h);
        for (d, oracle) in [(1usize, d1), (2, d2), (3, d3)] {
            let got = ec_density(FieldType::Gaussian, d, t).unwrap();
            assert!((got - scale(d as i32) * oracle).abs() < 1e-5, "d {d} t {t}: {got} vs {}", scale(d as i32) * oracle);
        }
    }
}

#[test]
fn sensor_time_box_expected_clusters() {
    let mu = IntrinsicVolumes::of_box(&[64.0, 64.0, 1_808_083.0 / 4096.0]);
    let r = ReselVector::from_resels(230.3, &mu).unwrap();
    let e = expected_ec(&r.resels, FieldType::student_t(12.0), 3.93);
    assert!((e.total - 4.96).abs() <= 0.05 * 4.96, "{}", e.total);
    assert_eq!(e.contributions.iter().sum::<f64>(), e.total);
}

#[test]
fn doubling_resels_raises_the_threshold() {
    let field = FieldType::student_t(20.0);
    let mut r = vec![1.0, 20.0, 150.0, 400.0];
    let mut last = corrected_threshold(0.05, &r, field).unwrap().t;
    for _ in 0..6 {
        r.iter_mut().skip(1).for_each(|x| *x *= 2.0);
        let next = corrected_threshold(0.05, &r, field).unwrap();
        assert!(next.bracketed && next.t > last);
        assert!((expected_ec(&r, field, next.t).total - 0.05).abs() < 1e-9);
        last = next.t;
    }
}

#[test]
fn single_voxel_is_a_single_test() {
    let space = SearchSpace::from(Lattice::full(&[9, 9, 9]).unwrap());
    let mut sub = vec![false; 729];
    sub[300] = true;
    let point = restrict(&space, &sub).unwrap();
    let mu = point.intrinsic_volumes();
    assert_eq!(mu.mu, vec![1.0, 0.0, 0.0, 0.0]);
    for field in [FieldType::Gaussian, FieldType::student_t(7.0)] {
        for t in [0.5, 1.7, 3.0, 4.4] {
            assert_eq!(fwe_p(t, &mu.mu, field), field.sf(t));
        }
        let th = corrected_threshold(0.05, &mu.mu, field).unwrap();
        assert!((th.t - field.isf(0.05)).abs() < 1e-9);
    }
}

fn field_strategy() -> impl Strategy<Value = FieldType> {
    prop_oneof![Just(FieldType::Gaussian), (3.0f64..200.0).prop_map(FieldType::student_t)]
}

proptest! {
    #[test]
    fn fwe_p_decreases_with_height(field in field_strategy(), r1 in 0.0f64..100.0, r2 in 0.0f64..1000.0, r3 in 0.0f64..5000.0, t in 2.0f64..8.0, dt in 0.0f64..2.0) {
        let r = [1.0, r1, r2, r3];
        prop_assert!(fwe_p(t + dt, &r, field) <= fwe_p(t, &r, field));
    }

    #[test]
    fn fwe_p_grows_with_each_resel_count(field in field_strategy(), d in 0usize..4, extra in 0.0f64..500.0, t in 2.0f64..8.0) {
        let r = [1.0, 12.0, 60.0, 90.0];
        let mut bigger = r;
        bigger[d] += extra;
        prop_assert!(fwe_p(t, &bigger, field) >= fwe_p(t, &r, field));
    }

    #[test]
    fn threshold_inverts_expected_ec(field in field_strategy(), r3 in 1.0f64..5000.0, alpha in 0.001f64..0.2) {
        let mu = IntrinsicVolumes::of_box(&[40.0, 40.0, 40.0]);
        let r = ReselVector::from_resels(r3, &mu).unwrap();
        let th = corrected_threshold(alpha, &r.resels, field).unwrap();
        prop_assert!(th.bracketed);
        prop_assert!((fwe_p(th.t, &r.resels, field) - alpha).abs() < 1e-8);
    }
}
