use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::PreprocError;

pub const DEFAULT_CYCLES: f64 = 7.0;

/// Power per (frequency, time) bin, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyMap {
    pub power: Vec<f64>,
    pub freqs: Vec<f64>,
    /// Sample times in milliseconds.
    pub times: Vec<f64>,
    /// True where the wavelet at that frequency extends past the signal.
    pub edge: Vec<bool>,
}

impl TimeFrequencyMap {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn row(&self, f: usize) -> &[f64] {
        let n = self.n_times();
        &self.power[f * n..(f + 1) * n]
    }
}

/// Samples on each side of the centre of the Morlet wavelet (support is 3 temporal SDs).
pub fn wavelet_half_width(freq: f64, sample_rate: f64, cycles: f64) -> usize {
    let sigma_t = cycles / (2.0 * PI * freq);
    (3.0 * sigma_t * sample_rate).ceil() as usize
}

fn morlet(freq: f64, sample_rate: f64, cycles: f64) -> Vec<Complex64> {
    let sigma_t = cycles / (2.0 * PI * freq);
    let half = wavelet_half_width(freq, sample_rate, cycles) as i64;
    let mut w: Vec<Complex64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / sample_rate;
            Complex64::from_polar((-t * t / (2.0 * sigma_t * sigma_t)).exp(), 2.0 * PI * freq * t)
        })
        .collect();
    let energy: f64 = w.iter().map(|c| c.norm_sqr()).sum();
    let scale = 1.0 / energy.sqrt();
    w.iter_mut().for_each(|c| *c *= scale);
    w
}

/// Squared magnitude of the convolution with unit-energy complex Morlet
/// wavelets of `cycles` cycles at each frequency.
pub fn morlet_tf(signal: &[f64], sample_rate: f64, freqs: &[f64], cycles: f64) -> Result<TimeFrequencyMap, PreprocError> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(PreprocError::BadFrequency(sample_rate));
    }
    if !(cycles > 0.0 && cycles.is_finite()) {
        return Err(PreprocError::BadFrequency(cycles));
    }
    if let Some(&f) = freqs.iter().find(|&&f| !(f > 0.0 && f < 0.5 * sample_rate)) {
        return Err(PreprocError::BadFrequency(f));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(PreprocError::NonFinite(i));
    }
    let n = signal.len();
    if let Some(&lowest) = freqs.iter().min_by(|a, b| a.total_cmp(b)) {
        let support = 2 * wavelet_half_width(lowest, sample_rate, cycles) + 1;
        if n < support {
            return Err(PreprocError::SignalTooShort { len: n, freq: lowest, support });
        }
    }
    let rows: Vec<(Vec<f64>, Vec<bool>)> = freqs
        .par_iter()
        .map(|&f| {
            let w = morlet(f, sample_rate, cycles);
            let half = (w.len() / 2) as i64;
            let power = (0..n as i64)
                .map(|t| {
                    let lo = (t - half).max(0);
                    let hi = (t + half).min(n as i64 - 1);
                    // correlation with the conjugate wavelet equals convolution with the wavelet
                    let acc: Complex64 = (lo..=hi).map(|s| w[(t - s + half) as usize] * signal[s as usize]).sum();
                    acc.norm_sqr()
                })
                .collect();
            let edge = (0..n as i64).map(|t| t - half < 0 || t + half >= n as i64).collect();
            (power, edge)
        })
        .collect();
    let (mut power, mut edge) = (Vec::with_capacity(n * freqs.len()), Vec::with_capacity(n * freqs.len()));
    for (p, e) in rows {
        power.extend(p);
        edge.extend(e);
    }
    Ok(TimeFrequencyMap {
        power,
        freqs: freqs.to_vec(),
        times: (0..n).map(|t| 1000.0 * t as f64 / sample_rate).collect(),
        edge,
    })
}

/// Unweighted mean power over frequency bins in `[lo, hi]` Hz, per time point.
pub fn band_average(tf: &TimeFrequencyMap, lo: f64, hi: f64) -> Result<Vec<f64>, PreprocError> {
    let rows: Vec<usize> = (0..tf.freqs.len()).filter(|&f| tf.freqs[f] >= lo && tf.freqs[f] <= hi).collect();
    if rows.is_empty() {
        return Err(PreprocError::EmptyBand { lo, hi });
    }
    let n = tf.n_times();
    Ok((0..n).map(|t| rows.iter().map(|&f| tf.power[f * n + t]).sum::<f64>() / rows.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FS: f64 = 250.0;

    fn freqs() -> Vec<f64> {
        (1..=45).map(f64::from).collect()
    }

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 / FS).sin()).collect()
    }

    fn ridge(tf: &TimeFrequencyMap, t: usize) -> f64 {
        let n = tf.n_times();
        let best = (0..tf.freqs.len()).max_by(|&a, &b| tf.power[a * n + t].total_cmp(&tf.power[b * n + t])).unwrap();
        tf.freqs[best]
    }

    #[test]
    fn pure_tone_peaks_at_its_frequency() {
        let n = 2000;
        let tf = morlet_tf(&sine(20.0, n), FS, &freqs(), DEFAULT_CYCLES).unwrap();
        for t in (900..1100).step_by(25) {
            assert!((ridge(&tf, t) - 20.0).abs() <= 1.0);
        }
    }

    #[test]
    fn two_tones_give_two_ridges() {
        let n = 2000;
        let s: Vec<f64> = sine(10.0, n).iter().zip(sine(30.0, n)).map(|(a, b)| a + b).collect();
        let tf = morlet_tf(&s, FS, &freqs(), DEFAULT_CYCLES).unwrap();
        let t = 1000;
        let col: Vec<f64> = (0..45).map(|f| tf.power[f * n + t]).collect();
        let floor = 0.01 * col.iter().cloned().fold(0.0, f64::max);
        let local_max: Vec<f64> = (1..44)
            .filter(|&f| col[f] > floor && col[f] > col[f - 1] && col[f] > col[f + 1])
            .map(|f| tf.freqs[f])
            .collect();
        assert_eq!(local_max.len(), 2, "{local_max:?}");
        assert!((local_max[0] - 10.0).abs() <= 1.0 && (local_max[1] - 30.0).abs() <= 1.0);
    }

    #[test]
    fn zero_signal_and_homogeneity() {
        let n = 1800;
        let zero = morlet_tf(&vec![0.0; n], FS, &freqs(), DEFAULT_CYCLES).unwrap();
        assert!(zero.power.iter().all(|&p| p == 0.0));
        let s: Vec<f64> = (0..n).map(|k| ((k * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let scaled: Vec<f64> = s.iter().map(|x| 3.0 * x).collect();
        let a = morlet_tf(&s, FS, &[5.0, 22.0], DEFAULT_CYCLES).unwrap();
        let b = morlet_tf(&scaled, FS, &[5.0, 22.0], DEFAULT_CYCLES).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert_relative_eq!(*y, 9.0 * x, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn short_signal_and_bad_frequencies() {
        let support = 2 * wavelet_half_width(1.0, FS, DEFAULT_CYCLES) + 1;
        assert!(matches!(
            morlet_tf(&vec![0.0; support - 1], FS, &freqs(), DEFAULT_CYCLES),
            Err(PreprocError::SignalTooShort { .. })
        ));
        assert!(morlet_tf(&vec![0.0; support], FS, &freqs(), DEFAULT_CYCLES).is_ok());
        assert!(matches!(morlet_tf(&[0.0; 100], FS, &[200.0], DEFAULT_CYCLES), Err(PreprocError::BadFrequency(_))));
    }

    #[test]
    fn edges_are_flagged() {
        let tf = morlet_tf(&vec![1.0; 400], FS, &[10.0], DEFAULT_CYCLES).unwrap();
        let half = wavelet_half_width(10.0, FS, DEFAULT_CYCLES);
        assert!(tf.edge[0] && tf.edge[half - 1] && !tf.edge[half] && tf.edge[399]);
        assert_relative_eq!(tf.times[1], 4.0);
    }

    #[test]
    fn band_means() {
        let tf = TimeFrequencyMap {
            power: (0..45).flat_map(|f| vec![f as f64; 3]).collect(),
            freqs: freqs(),
            times: vec![0.0, 1.0, 2.0],
            edge: vec![false; 135],
        };
        // bins 15..=30 Hz are indices 14..=29
        assert_eq!(band_average(&tf, 15.0, 30.0).unwrap(), vec![21.5; 3]);
        assert_eq!(band_average(&tf, 20.0, 20.0).unwrap(), vec![19.0; 3]);
        assert!(matches!(band_average(&tf, 50.0, 60.0), Err(PreprocError::EmptyBand { .. })));
        let flat = TimeFrequencyMap { power: vec![2.0; 135], ..tf };
        assert_eq!(band_average(&flat, 15.0, 30.0).unwrap(), vec![2.0; 3]);
    }
}
