use topoinfer::domain::{count_cells, Connectivity, Lattice, SearchSpace};
use topoinfer::infer::local_maxima;
use topoinfer::simulate::{calibrate, effective_fwhm, gen_field, mc_fwe, realization, SimConfig, SimField};

#[test]
fn generator_correlation_at_one_fwhm() {
    let n = 64;
    let lag = 8;
    let config = SimConfig::new(vec![n, n], vec![8.0, 8.0], 1, 5);
    let (mut cross, mut a2, mut b2) = (0.0, 0.0, 0.0);
    for r in 0..60 {
        let x = gen_field(&config, r).unwrap();
        for i in 0..n - lag {
            for j in 0..n {
                let (a, b) = (x[i * n + j], x[(i + lag) * n + j]);
                cross += a * b;
                a2 += a * a;
                b2 += b * b;
            }
        }
    }
    let rho = cross / (a2 * b2).sqrt();
    let f = effective_fwhm(8.0);
    let predicted = (-4.0 * std::f64::consts::LN_2 * (lag * lag) as f64 / (2.0 * f * f)).exp();
    assert!((predicted - 0.25).abs() < 0.01);
    assert!((rho - predicted).abs() <= 0.1 * predicted, "{rho} vs {predicted}");
}

#[test]
fn high_excursions_are_counted_by_their_maxima() {
    let config = SimConfig::new(vec![64, 64], vec![6.0, 6.0], 500, 77);
    let space = SearchSpace::from(Lattice::full(&[64, 64]).unwrap());
    let t = 3.5;
    let agree = (0..config.n_realizations as u64)
        .filter(|&r| {
            let x = realization(&config, r).unwrap();
            let mask: Vec<bool> = x.iter().map(|&v| v >= t).collect();
            let ec = count_cells(&config.dims, &mask).euler_characteristic();
            ec == local_maxima(&x, t, &space, Connectivity::Full).len() as i64
        })
        .count();
    assert!(agree as f64 >= 0.99 * config.n_realizations as f64, "{agree} of {}", config.n_realizations);
}

#[test]
fn exceedance_probability_is_bounded_by_mean_ec() {
    let config = SimConfig::new(vec![64, 64], vec![6.0, 6.0], 1000, 9);
    let thresholds = [2.5, 3.0, 3.5, 4.0];
    let report = calibrate(&config, &thresholds, 0.05).unwrap();
    let maxima: Vec<f64> = (0..config.n_realizations as u64)
        .map(|r| realization(&config, r).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for (j, &t) in thresholds.iter().enumerate() {
        let frac = maxima.iter().filter(|&&m| m >= t).count() as f64 / maxima.len() as f64;
        assert!(frac <= report.mean_ec[j] + 2.0 * report.se[j], "t {t}: P(max >= t) {frac}, mean EC {}", report.mean_ec[j]);
        assert!((report.mean_ec[j] - report.expected_ec[j]).abs() <= 4.0 * report.se[j] + 0.05 * report.expected_ec[j]);
    }
}

#[test]
fn student_fields_control_fwe() {
    let mut config = SimConfig::new(vec![64, 64], vec![6.0, 6.0], 2000, 2010);
    config.field = SimField::StudentT { n_subjects: 13 };
    let fwe = mc_fwe(&config, 0.05).unwrap();
    assert!((0.03..=0.07).contains(&fwe.empirical_fwe), "{}", fwe.empirical_fwe);
    assert!(fwe.ci[0] <= fwe.empirical_fwe && fwe.empirical_fwe <= fwe.ci[1]);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let config = SimConfig::new(vec![32, 40], vec![4.0, 5.0], 64, 123);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| calibrate(&config, &[2.0, 3.0], 0.05).unwrap())
    };
    assert_eq!(run(1), run(4));
}
