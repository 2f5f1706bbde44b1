use std::f64::consts::PI;

use num_complex::Complex64;

use super::Channel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }
}

/// Digital Butterworth filter as a cascade of second-order sections
/// (bilinear transform with cutoff prewarping).
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub order: usize,
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn butterworth(order: usize, cutoff: f64, fs: f64, kind: FilterKind) -> Result<Sos> {
        let nyquist = fs / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(Error::InvalidCutoff { cutoff, nyquist });
        }
        if order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        let k = 2.0 * fs;
        let warped = k * (PI * cutoff / fs).tan();
        let analog = |idx: usize| {
            let theta = PI * (2 * idx + order - 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            match kind {
                FilterKind::Lowpass => p * warped,
                FilterKind::Highpass => warped / p,
            }
        };
        let bilinear = |s: Complex64| (k + s) / (k - s);

        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for idx in 1..=order / 2 {
            let z = bilinear(analog(idx));
            let a = [1.0, -2.0 * z.re, z.norm_sqr()];
            let b = match kind {
                FilterKind::Lowpass => {
                    let g = (a[0] + a[1] + a[2]) / 4.0;
                    [g, 2.0 * g, g]
                }
                FilterKind::Highpass => {
                    let g = (a[0] - a[1] + a[2]) / 4.0;
                    [g, -2.0 * g, g]
                }
            };
            sections.push(Biquad { b, a });
        }
        if order % 2 == 1 {
            let zr = bilinear(analog(order.div_ceil(2))).re;
            let a = [1.0, -zr, 0.0];
            let b = match kind {
                FilterKind::Lowpass => {
                    let g = (1.0 - zr) / 2.0;
                    [g, g, 0.0]
                }
                FilterKind::Highpass => {
                    let g = (1.0 + zr) / 2.0;
                    [g, -g, 0.0]
                }
            };
            sections.push(Biquad { b, a });
        }
        Ok(Sos { order, sections })
    }

    /// Complex single-pass frequency response at `f` Hz.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Causal single pass from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut state = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut y, &mut state);
        y
    }

    fn run(&self, data: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in data.iter_mut() {
                let x = *v;
                let y = b0 * x + z[0];
                z[0] = b1 * x - a1 * y + z[1];
                z[1] = b2 * x - a2 * y;
                *v = y;
            }
        }
    }

    /// Section states reached after an infinitely long unit-step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let out = g * level;
                let z = [out - s.b[0] * level, (s.b[2] - s.a[2] * g) * level];
                level = out;
                z
            })
            .collect()
    }

    /// Forward-backward (zero-phase) filtering with odd reflection padding of
    /// `3 * order` samples at each end and step-response initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let edge = 3 * self.order;
        if n <= edge {
            return Err(Error::InsufficientSamples {
                needed: edge + 1,
                got: n,
            });
        }
        let mut ext = Vec::with_capacity(n + 2 * edge);
        ext.extend((1..=edge).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=edge).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();

        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state = scaled(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        Ok(ext[edge..edge + n].to_vec())
    }
}

/// Zero-phase Butterworth low-pass: the effective magnitude response is the
/// square of the single-pass response.
pub fn butterworth_lowpass_dualpass(x: &Channel, fc: f64, order: usize) -> Result<Channel> {
    let sos = Sos::butterworth(order, fc, x.fs(), FilterKind::Lowpass)?;
    Ok(x.with_samples(sos.filtfilt(x.samples())?))
}
