use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;

use super::VarModel;
use crate::error::{Error, Result};

pub type CMat2 = Matrix2<Complex64>;

/// Default spacing of the analysis frequency grid.
pub const DEFAULT_FREQ_STEP_HZ: f64 = 0.05;

/// `0, step, 2 step, ...` up to and including `max` (to rounding).
pub fn frequency_grid(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max > 0.0 && step <= max) {
        return Err(Error::Grid(format!("invalid grid step {step} Hz up to {max} Hz")));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * step).collect())
}

/// Transfer function, spectral matrix and innovation covariance on a grid.
///
/// The spectrum is normalized so that `(1/fs) * integral over [-fs/2, fs/2]`
/// of `S(f)` equals the process covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub freqs: Vec<f64>,
    pub h: Vec<CMat2>,
    pub s: Vec<CMat2>,
    pub sigma: Matrix2<f64>,
    pub fs: f64,
}

impl SpectralDecomposition {
    /// Relabels the channels (A <-> B) in every stored matrix.
    pub fn swapped(&self) -> Self {
        let swap_c = |m: &CMat2| CMat2::new(m[(1, 1)], m[(1, 0)], m[(0, 1)], m[(0, 0)]);
        let swap_r = |m: &Matrix2<f64>| Matrix2::new(m[(1, 1)], m[(1, 0)], m[(0, 1)], m[(0, 0)]);
        SpectralDecomposition {
            freqs: self.freqs.clone(),
            h: self.h.iter().map(swap_c).collect(),
            s: self.s.iter().map(swap_c).collect(),
            sigma: swap_r(&self.sigma),
            fs: self.fs,
        }
    }

    /// `max |S - H Sigma H^H| / max |S|` over the grid.
    pub fn factorization_residual(&self) -> f64 {
        let sig = self.sigma.map(|v| Complex64::new(v, 0.0));
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (h, s) in self.h.iter().zip(&self.s) {
            let rebuilt = h * sig * h.adjoint();
            num = num.max((s - rebuilt).iter().fold(0.0f64, |m, z| m.max(z.norm())));
            den = den.max(s.iter().fold(0.0f64, |m, z| m.max(z.norm())));
        }
        num / den
    }
}

/// `H(f) = (I - sum_k A_k exp(-i 2 pi f k / fs))^-1` at every frequency.
pub fn transfer_function(model: &VarModel, freqs: &[f64]) -> Result<Vec<CMat2>> {
    freqs
        .iter()
        .map(|&f| {
            let mut m = CMat2::identity();
            for (k, a) in model.coeffs.iter().enumerate() {
                let phase = Complex64::from_polar(1.0, -2.0 * PI * f * (k + 1) as f64 / model.fs);
                m -= a.map(|v| Complex64::new(v, 0.0)) * phase;
            }
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            if !(det.norm() > 1e-12) {
                return Err(Error::NonInvertible { freq: f });
            }
            Ok(CMat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
        })
        .collect()
}

/// `S(f) = H(f) Sigma H(f)^H`.
pub fn spectral_matrix(model: &VarModel, freqs: &[f64]) -> Result<SpectralDecomposition> {
    let h = transfer_function(model, freqs)?;
    let sig = model.sigma.map(|v| Complex64::new(v, 0.0));
    let s = h
        .iter()
        .map(|hf| {
            let mut m = hf * sig * hf.adjoint();
            // Diagonal entries are real by construction.
            m[(0, 0)].im = 0.0;
            m[(1, 1)].im = 0.0;
            m
        })
        .collect();
    Ok(SpectralDecomposition {
        freqs: freqs.to_vec(),
        h,
        s,
        sigma: model.sigma,
        fs: model.fs,
    })
}

/// Smallest eigenvalue of a 2x2 Hermitian matrix.
pub(crate) fn min_eigenvalue(m: &CMat2) -> f64 {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)].norm();
    let mean = 0.5 * (a + d);
    mean - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}
