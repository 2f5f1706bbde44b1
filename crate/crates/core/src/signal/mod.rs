//! Channel preprocessing: zero-phase filtering, decimation, epoching,
//! extrema/period extraction and dominant-frequency estimation.

pub(crate) mod extrema;
mod filter;

pub use extrema::{
    extrema_periods, extrema_periods_with_bin_width, find_extrema, Extremum, ExtremumKind,
    PeriodHistogram, DEFAULT_HISTOGRAM_BIN_HZ,
};
pub use filter::{butterworth_lowpass_dualpass, Biquad, FilterKind, Sos};

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default prominence for extrema detection, as a fraction of the channel's
/// peak-to-peak range.
pub const DEFAULT_PROMINENCE_FRACTION: f64 = 0.05;

/// One uniformly sampled, finite-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    samples: Vec<f64>,
    fs: f64,
    label: String,
}

impl Channel {
    pub fn new(samples: Vec<f64>, fs: f64, label: impl Into<String>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite sample at index {i}")));
        }
        Ok(Channel {
            samples,
            fs,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Same rate and label, new samples. Used by the transforms below, whose
    /// outputs are finite whenever their inputs are.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Channel {
        Channel {
            samples,
            fs: self.fs,
            label: self.label.clone(),
        }
    }

    pub fn peak_to_peak(&self) -> f64 {
        let (lo, hi) = self
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    /// Prominence threshold used when none is configured.
    pub fn default_prominence(&self) -> f64 {
        DEFAULT_PROMINENCE_FRACTION * self.peak_to_peak()
    }
}

/// A contiguous window cut out of a trial channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub parent_trial: String,
    pub window_index: usize,
}

/// Keeps every `fs / target_fs`-th sample. The input must already be
/// band-limited below `target_fs / 2`.
pub fn decimate(x: &Channel, target_fs: f64) -> Result<Channel> {
    let ratio = x.fs / target_fs;
    let step = ratio.round();
    if !(target_fs > 0.0) || step < 1.0 || (ratio - step).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidRatio {
            fs: x.fs,
            target: target_fs,
        });
    }
    let step = step as usize;
    let samples = x.samples.iter().step_by(step).copied().collect();
    Ok(Channel {
        samples,
        fs: target_fs,
        label: x.label.clone(),
    })
}

/// Cuts the channel into `k` consecutive windows of equal length. Remainder
/// samples at the tail are dropped so every window keeps its alignment with
/// the trial onset.
pub fn epoch_split(x: &Channel, k: usize, parent_trial: &str) -> Result<Vec<Epoch>> {
    if k == 0 || k > x.len() {
        return Err(Error::InvalidSplit {
            len: x.len(),
            parts: k,
        });
    }
    let width = x.len() / k;
    Ok(x.samples
        .chunks_exact(width)
        .take(k)
        .enumerate()
        .map(|(i, w)| Epoch {
            samples: w.to_vec(),
            fs: x.fs,
            parent_trial: parent_trial.to_string(),
            window_index: i,
        })
        .collect())
}

/// Frequency of the largest bin of the one-sided amplitude spectrum, DC
/// excluded. The mean is removed first.
pub fn dominant_frequency(x: &Channel) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = x.samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x
        .samples
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let scale = x.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (best, amp) = buf[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm()))
        .fold((0, 0.0), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });
    if best == 0 || amp <= 64.0 * f64::EPSILON * n as f64 * scale {
        return Err(Error::NoPeak);
    }
    Ok(best as f64 * x.fs / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Channel::new(vec![0.0, f64::NAN], 10.0, "x").is_err());
        assert!(Channel::new(vec![0.0], 0.0, "x").is_err());
    }

    #[test]
    fn decimate_500_to_25() {
        let x = Channel::new((0..1000).map(|i| i as f64).collect(), 500.0, "s").unwrap();
        let y = decimate(&x, 25.0).unwrap();
        assert_eq!(y.len(), 50);
        assert_eq!(y.fs(), 25.0);
        for (k, v) in y.samples().iter().enumerate() {
            assert_eq!(*v, (k * 20) as f64);
        }
    }

    #[test]
    fn decimate_constant_and_bad_ratio() {
        let x = Channel::new(vec![3.5; 100], 500.0, "s").unwrap();
        assert!(decimate(&x, 25.0).unwrap().samples().iter().all(|&v| v == 3.5));
        assert!(matches!(decimate(&x, 30.0), Err(Error::InvalidRatio { .. })));
        assert!(matches!(decimate(&x, 1000.0), Err(Error::InvalidRatio { .. })));
    }

    #[test]
    fn decimate_preserves_tone_peak() {
        let x = Channel::new(sine(1.0, 1.0, 500.0, 10_000), 500.0, "s").unwrap();
        let y = decimate(&x, 25.0).unwrap();
        let fx = dominant_frequency(&x).unwrap();
        let fy = dominant_frequency(&y).unwrap();
        assert!((fx - 1.0).abs() < 1e-9);
        assert!((fy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn epoch_split_lengths() {
        let x = Channel::new((0..300).map(|i| i as f64).collect(), 25.0, "s").unwrap();
        let e = epoch_split(&x, 3, "t0").unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.iter().all(|w| w.samples.len() == 100));

        let x = Channel::new((0..301).map(|i| i as f64).collect(), 25.0, "s").unwrap();
        let e = epoch_split(&x, 3, "t0").unwrap();
        assert!(e.iter().all(|w| w.samples.len() == 100));
        let joined: Vec<f64> = e.iter().flat_map(|w| w.samples.clone()).collect();
        assert_eq!(joined, x.samples()[..300].to_vec());
        assert_eq!(e[2].window_index, 2);
    }

    #[test]
    fn epoch_split_rejects_oversplit() {
        let x = Channel::new(vec![1.0; 2], 25.0, "s").unwrap();
        assert!(matches!(epoch_split(&x, 3, "t"), Err(Error::InvalidSplit { .. })));
        assert!(matches!(epoch_split(&x, 0, "t"), Err(Error::InvalidSplit { .. })));
    }

    #[test]
    fn dominant_frequency_cases() {
        let fs = 500.0;
        let n = 20 * 500;
        let x = Channel::new(sine(0.5, 1.0, fs, n), fs, "p").unwrap();
        let bin = fs / n as f64;
        assert!((dominant_frequency(&x).unwrap() - 0.5).abs() <= bin);

        let two: Vec<f64> = sine(0.5, 2.0, fs, n)
            .iter()
            .zip(sine(3.0, 1.0, fs, n))
            .map(|(a, b)| a + b)
            .collect();
        let x = Channel::new(two, fs, "p").unwrap();
        assert!((dominant_frequency(&x).unwrap() - 0.5).abs() <= bin);

        let z = Channel::new(vec![0.0; 64], fs, "p").unwrap();
        assert_eq!(dominant_frequency(&z), Err(Error::NoPeak));
        let c = Channel::new(vec![4.2; 64], fs, "p").unwrap();
        assert_eq!(dominant_frequency(&c), Err(Error::NoPeak));
    }

    #[test]
    fn dominant_frequency_with_noise() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let fs = 500.0;
        let n = 20 * 500;
        // SNR 20 dB: signal power 0.5, noise variance 0.005.
        let noise = Normal::new(0.0, 0.005f64.sqrt()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = sine(0.5, 1.0, fs, n)
            .into_iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        let x = Channel::new(x, fs, "p").unwrap();
        assert!((dominant_frequency(&x).unwrap() - 0.5).abs() <= fs / n as f64);
    }

    fn mean_square(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn decimation_keeps_in_band_tone_energy(freq in 0.5f64..5.0, amp in 0.1f64..10.0) {
            let (fs, fc, order) = (500.0, 10.0, 2);
            let x = Channel::new(sine(freq, amp, fs, 60 * 500), fs, "s").unwrap();
            let filtered = butterworth_lowpass_dualpass(&x, fc, order).unwrap();
            let low = decimate(&filtered, 25.0).unwrap();
            // Edges carry the filter transient; compare the interior.
            let full = mean_square(&filtered.samples()[1000..29000]);
            let down = mean_square(&low.samples()[50..1450]);
            let gain = 1.0 / (1.0 + (freq / fc).powi(2 * order as i32));
            let designed = amp * amp / 2.0 * gain * gain;
            proptest::prop_assert!((down / full - 1.0).abs() <= 0.02, "{down} vs {full}");
            proptest::prop_assert!((down / designed - 1.0).abs() <= 0.02, "{down} vs {designed}");
        }

        #[test]
        fn epochs_are_equal_and_cover_the_prefix(len in 1usize..3000, k in 1usize..60) {
            proptest::prop_assume!(k <= len);
            let x = Channel::new((0..len).map(|i| i as f64).collect(), 25.0, "s").unwrap();
            let e = epoch_split(&x, k, "t").unwrap();
            proptest::prop_assert_eq!(e.len(), k);
            proptest::prop_assert!(e.iter().all(|w| w.samples.len() == len / k));
            let joined: Vec<f64> = e.iter().flat_map(|w| w.samples.iter().copied()).collect();
            proptest::prop_assert_eq!(&joined[..], &x.samples()[..k * (len / k)]);
        }
    }
}
