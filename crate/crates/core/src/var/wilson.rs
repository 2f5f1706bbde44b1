use nalgebra::Matrix2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::spectral::{min_eigenvalue, CMat2, SpectralDecomposition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilsonOptions {
    /// Stop once the largest change of the factor, relative to its largest
    /// entry, falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WilsonOptions {
    fn default() -> Self {
        WilsonOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Minimum-phase factor of a spectral matrix: `S = H Sigma H^H`, with `H`
/// causal and equal to the identity at lag zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WilsonFactor {
    pub h: Vec<CMat2>,
    pub sigma: Matrix2<f64>,
    pub iterations: usize,
}

fn max_abs(m: &CMat2) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

fn inverse(m: &CMat2) -> Option<CMat2> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det.norm() == 0.0 || !det.is_finite() {
        return None;
    }
    Some(CMat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Element-wise transform of a sequence of 2x2 matrices.
struct MatrixFft {
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    n: usize,
}

impl MatrixFft {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        MatrixFft {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        }
    }

    fn apply(&self, data: &[CMat2], inverse: bool) -> Vec<CMat2> {
        let mut out = vec![CMat2::zeros(); self.n];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for r in 0..2 {
            for c in 0..2 {
                for (b, m) in buf.iter_mut().zip(data) {
                    *b = m[(r, c)];
                }
                if inverse {
                    self.inverse.process(&mut buf);
                    let scale = 1.0 / self.n as f64;
                    buf.iter_mut().for_each(|z| *z *= scale);
                } else {
                    self.forward.process(&mut buf);
                }
                for (o, b) in out.iter_mut().zip(&buf) {
                    o[(r, c)] = *b;
                }
            }
        }
        out
    }
}

/// Wilson's iterative spectral factorization.
///
/// `s` holds the spectral matrix on `M + 1` equally spaced frequencies from
/// 0 to the Nyquist frequency inclusive; the negative half of the circle is
/// implied by `S(-f) = S(f)^T`.
pub fn wilson_factorize(s: &[CMat2], opts: WilsonOptions) -> Result<WilsonFactor> {
    if s.len() < 2 {
        return Err(Error::InvalidSpectrum("need at least two frequencies".into()));
    }
    for (k, m) in s.iter().enumerate() {
        let scale = max_abs(m);
        if !(scale.is_finite() && scale > 0.0) || max_abs(&(m - m.adjoint())) > 1e-10 * scale {
            return Err(Error::InvalidSpectrum(format!("matrix {k} is not Hermitian")));
        }
        if !(min_eigenvalue(m) > 0.0) {
            return Err(Error::InvalidSpectrum(format!("matrix {k} is not positive definite")));
        }
    }
    let half = s.len() - 1;
    let n = 2 * half;
    let full: Vec<CMat2> = (0..n)
        .map(|k| if k <= half { s[k] } else { s[n - k].transpose() })
        .collect();
    let fft = MatrixFft::new(n);

    let gamma0 = fft.apply(&full, true)[0].map(|z| z.re);
    let gamma0 = 0.5 * (gamma0 + gamma0.transpose());
    let l0 = gamma0
        .cholesky()
        .ok_or_else(|| Error::InvalidSpectrum("zero-lag covariance is not positive definite".into()))?
        .l();
    let mut psi = vec![l0.map(|v| Complex64::new(v, 0.0)); n];
    let ident = CMat2::identity();

    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let g: Vec<CMat2> = psi
            .iter()
            .zip(&full)
            .map(|(p, sk)| {
                let pi = inverse(p).ok_or(Error::NoConvergence {
                    iterations,
                    last_change: change,
                })?;
                Ok(pi * sk * pi.adjoint() + ident)
            })
            .collect::<Result<_>>()?;

        // Causal part: keep positive lags, half of the zero-lag diagonal
        // and its strict upper triangle.
        let mut lags = fft.apply(&g, true);
        let z = lags[0];
        lags[0] = CMat2::new(z[(0, 0)] * 0.5, z[(0, 1)], Complex64::new(0.0, 0.0), z[(1, 1)] * 0.5);
        for l in lags.iter_mut().skip(half) {
            *l = CMat2::zeros();
        }
        let plus = fft.apply(&lags, false);

        let next: Vec<CMat2> = psi.iter().zip(&plus).map(|(p, q)| p * q).collect();
        let scale = psi.iter().map(max_abs).fold(0.0f64, f64::max);
        change = psi
            .iter()
            .zip(&next)
            .map(|(a, b)| max_abs(&(b - a)))
            .fold(0.0f64, f64::max)
            / scale;
        psi = next;
        if !change.is_finite() {
            break;
        }
        if change < opts.tol {
            let a0 = fft.apply(&psi, true)[0].map(|z| z.re);
            let a0_inv = a0.try_inverse().ok_or(Error::NoConvergence {
                iterations,
                last_change: change,
            })?;
            let a0_inv_c = a0_inv.map(|v| Complex64::new(v, 0.0));
            let sigma = a0 * a0.transpose();
            let sigma = 0.5 * (sigma + sigma.transpose());
            let h = psi[..=half].iter().map(|p| p * a0_inv_c).collect();
            return Ok(WilsonFactor {
                h,
                sigma,
                iterations,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations,
        last_change: change,
    })
}

/// Wilson factorization of `s` sampled on `freqs`, which must run uniformly
/// from 0 to `fs / 2`.
pub fn wilson_decomposition(
    freqs: &[f64],
    s: &[CMat2],
    fs: f64,
    opts: WilsonOptions,
) -> Result<SpectralDecomposition> {
    if freqs.len() != s.len() || freqs.len() < 2 {
        return Err(Error::Grid("frequency and spectrum lengths differ".into()));
    }
    let step = fs / 2.0 / (freqs.len() - 1) as f64;
    for (k, f) in freqs.iter().enumerate() {
        if (f - k as f64 * step).abs() > 1e-9 * fs {
            return Err(Error::Grid(format!(
                "Wilson factorization needs a uniform grid from 0 to {} Hz",
                fs / 2.0
            )));
        }
    }
    let factor = wilson_factorize(s, opts)?;
    Ok(SpectralDecomposition {
        freqs: freqs.to_vec(),
        h: factor.h,
        s: s.to_vec(),
        sigma: factor.sigma,
        fs,
    })
}
