use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::spectral::CMat2;
use super::BivariateEpoch;
use crate::error::{Error, Result};

/// Welch estimate of the bivariate spectral matrix: Hann-windowed segments
/// of `segment_len` samples with 50% overlap, averaged over all epochs.
///
/// Returns the frequencies `k fs / segment_len` for `k = 0..=segment_len/2`
/// and the matrices, scaled like the parametric spectrum (mean over the
/// full circle equals the covariance).
pub fn welch_spectral_matrix(
    epochs: &[BivariateEpoch],
    segment_len: usize,
) -> Result<(Vec<f64>, Vec<CMat2>)> {
    if segment_len < 4 || segment_len % 2 != 0 {
        return Err(Error::Config(format!(
            "Welch segment length must be even and >= 4, got {segment_len}"
        )));
    }
    let first = epochs.first().ok_or_else(|| Error::NoData("no epochs".into()))?;
    let fs = first.fs;
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
        .collect();
    let power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![CMat2::zeros(); bins];
    let mut count = 0usize;
    let step = segment_len / 2;

    for e in epochs {
        if e.a.len() != e.b.len() || e.fs != fs {
            return Err(Error::ChannelMismatch("epochs differ in length or rate".into()));
        }
        let demean = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| v - m).collect::<Vec<_>>()
        };
        let (a, b) = (demean(&e.a), demean(&e.b));
        let mut start = 0;
        while start + segment_len <= a.len() {
            let mut xa: Vec<Complex64> = (0..segment_len)
                .map(|i| Complex64::new(a[start + i] * window[i], 0.0))
                .collect();
            let mut xb: Vec<Complex64> = (0..segment_len)
                .map(|i| Complex64::new(b[start + i] * window[i], 0.0))
                .collect();
            fft.process(&mut xa);
            fft.process(&mut xb);
            for k in 0..bins {
                let (u, v) = (xa[k], xb[k]);
                acc[k] += CMat2::new(u * u.conj(), u * v.conj(), v * u.conj(), v * v.conj());
            }
            count += 1;
            start += step;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientSamples {
            needed: segment_len,
            got: first.len(),
        });
    }
    let scale = 1.0 / (count as f64 * power);
    let freqs = (0..bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    Ok((freqs, acc.into_iter().map(|m| m * Complex64::new(scale, 0.0)).collect()))
}
