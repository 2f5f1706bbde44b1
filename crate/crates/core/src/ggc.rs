//! Frequency-resolved Granger-Geweke causality between two channels and the
//! band-level summaries built on it.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::NullThreshold;
use crate::var::{spectral_matrix, SpectralDecomposition, VarModel};

/// Values in `[-ROUNDING_FLOOR, 0)` are treated as rounding noise and clipped.
const ROUNDING_FLOOR: f64 = 1e-12;

/// Lowest frequency considered when locating a curve's first peak.
pub const FIRST_PEAK_MIN_HZ: f64 = 0.1;
/// A first peak must rise at least this fraction of the curve's maximum
/// above its surroundings.
pub const FIRST_PEAK_PROMINENCE: f64 = 0.1;
/// Number of consecutive sub-threshold bins that mark the upper band edge.
pub const BELOW_THRESHOLD_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_b")]
    AtoB,
    #[serde(rename = "b_to_a")]
    BtoA,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::AtoB => "A->B",
            Direction::BtoA => "B->A",
        }
    }
}

/// Directional causality per frequency: `i_ab` is the influence of channel A
/// on channel B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgcSpectrum {
    pub freqs: Vec<f64>,
    pub i_ab: Vec<f64>,
    pub i_ba: Vec<f64>,
}

impl GgcSpectrum {
    pub fn curve(&self, dir: Direction) -> &[f64] {
        match dir {
            Direction::AtoB => &self.i_ab,
            Direction::BtoA => &self.i_ba,
        }
    }

    /// Parametric route: spectrum of a fitted model on `freqs`.
    pub fn from_model(model: &VarModel, freqs: &[f64]) -> Result<Self> {
        ggc_spectrum(&spectral_matrix(model, freqs)?)
    }

    pub fn swapped(&self) -> Self {
        GgcSpectrum {
            freqs: self.freqs.clone(),
            i_ab: self.i_ba.clone(),
            i_ba: self.i_ab.clone(),
        }
    }

    /// Time-domain causality implied by the spectrum:
    /// `(2 / fs) * integral over [0, fs/2]`.
    pub fn time_domain_equivalent(&self, dir: Direction, fs: f64) -> Result<f64> {
        let hi = *self.freqs.last().unwrap_or(&0.0);
        Ok(2.0 / fs * band_integral(self, dir, self.freqs[0], hi)?)
    }
}

fn causality(cond_var: f64, h_cross: f64, s_target: f64, freq: f64) -> Result<f64> {
    if !(s_target > 0.0) {
        return Err(Error::NumericDomain {
            freq,
            argument: s_target,
        });
    }
    let argument = 1.0 - cond_var * h_cross / s_target;
    if !(argument > 0.0) {
        return Err(Error::NumericDomain { freq, argument });
    }
    let v = -argument.ln();
    if v < 0.0 {
        if v < -ROUNDING_FLOOR {
            return Err(Error::NumericDomain { freq, argument });
        }
        return Ok(0.0);
    }
    Ok(v)
}

/// Geweke's spectral causality from a decomposition `(H, Sigma, S)`:
///
/// `I_{B->A}(f) = -ln(1 - (S_BB - S_AB^2 / S_AA) |H_AB(f)|^2 / S_AA(f))`
///
/// where the first two terms are innovation covariance entries, and
/// symmetrically for `I_{A->B}`.
pub fn ggc_spectrum(decomp: &SpectralDecomposition) -> Result<GgcSpectrum> {
    let sig = decomp.sigma;
    let (saa, sbb, sab) = (sig[(0, 0)], sig[(1, 1)], sig[(0, 1)]);
    let cond_b = sbb - sab * sab / saa;
    let cond_a = saa - sab * sab / sbb;
    let mut i_ab = Vec::with_capacity(decomp.freqs.len());
    let mut i_ba = Vec::with_capacity(decomp.freqs.len());
    for ((&f, h), s) in decomp.freqs.iter().zip(&decomp.h).zip(&decomp.s) {
        i_ba.push(causality(cond_b, h[(0, 1)].norm_sqr(), s[(0, 0)].re, f)?);
        i_ab.push(causality(cond_a, h[(1, 0)].norm_sqr(), s[(1, 1)].re, f)?);
    }
    Ok(GgcSpectrum {
        freqs: decomp.freqs.clone(),
        i_ab,
        i_ba,
    })
}

fn interpolate(freqs: &[f64], values: &[f64], x: f64) -> f64 {
    let i = freqs.partition_point(|&f| f <= x);
    if i == 0 {
        return values[0];
    }
    if i >= freqs.len() {
        return values[freqs.len() - 1];
    }
    let (f0, f1) = (freqs[i - 1], freqs[i]);
    let t = (x - f0) / (f1 - f0);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// Trapezoidal integral of a sampled curve over `[lo, hi]`. Grid points
/// inside the band are used as-is; the values at the exact band edges are
/// linearly interpolated.
pub fn trapezoid_band(freqs: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let invalid = |reason: &str| Error::InvalidBand {
        lo,
        hi,
        reason: reason.to_string(),
    };
    if freqs.len() != values.len() || freqs.len() < 2 {
        return Err(Error::Grid("curve and grid lengths differ".into()));
    }
    if !(lo < hi) {
        return Err(invalid("empty band"));
    }
    let span = freqs[freqs.len() - 1] - freqs[0];
    let eps = 1e-9 * span;
    if lo < freqs[0] - eps || hi > freqs[freqs.len() - 1] + eps {
        return Err(invalid("band exceeds the frequency grid"));
    }
    let mut xs = vec![lo];
    let mut ys = vec![interpolate(freqs, values, lo)];
    for (&f, &v) in freqs.iter().zip(values) {
        if f > lo + eps && f < hi - eps {
            xs.push(f);
            ys.push(v);
        }
    }
    xs.push(hi);
    ys.push(interpolate(freqs, values, hi));
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum())
}

pub fn band_integral(spec: &GgcSpectrum, dir: Direction, f_lo: f64, f_hi: f64) -> Result<f64> {
    trapezoid_band(&spec.freqs, spec.curve(dir), f_lo, f_hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandInfluence {
    pub band: (f64, f64),
    pub integral_ab: f64,
    pub integral_ba: f64,
    /// `integral_ab - integral_ba`.
    pub delta: f64,
}

impl BandInfluence {
    pub fn compute(spec: &GgcSpectrum, lo: f64, hi: f64) -> Result<Self> {
        let integral_ab = band_integral(spec, Direction::AtoB, lo, hi)?;
        let integral_ba = band_integral(spec, Direction::BtoA, lo, hi)?;
        Ok(BandInfluence {
            band: (lo, hi),
            integral_ab,
            integral_ba,
            delta: integral_ab - integral_ba,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandBoundaries {
    /// Split between the low and the high band.
    pub f1: f64,
    /// Upper edge of the high band.
    pub f2: f64,
}

impl BandBoundaries {
    pub fn new(f1: f64, f2: f64) -> Result<Self> {
        if !(f1 > 0.0 && f1 < f2) {
            return Err(Error::InvalidBand {
                lo: f1,
                hi: f2,
                reason: "boundaries must satisfy 0 < f1 < f2".into(),
            });
        }
        Ok(BandBoundaries { f1, f2 })
    }
}

/// Influence in the low band `[grid start, f1]` and the high band `[f1, f2]`.
pub fn delta_influence(spec: &GgcSpectrum, bounds: &BandBoundaries) -> Result<Vec<BandInfluence>> {
    let start = spec.freqs.first().copied().unwrap_or(0.0);
    Ok(vec![
        BandInfluence::compute(spec, start, bounds.f1)?,
        BandInfluence::compute(spec, bounds.f1, bounds.f2)?,
    ])
}

/// Which of a dyad's two curves feeds the upper-edge search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Designation {
    Fixed(Direction),
    /// The direction with the larger integral over the whole grid.
    #[default]
    Stronger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub boundaries: BandBoundaries,
    /// `(participant label, first-peak frequency)` for every curve that had one.
    pub first_peaks: Vec<(String, f64)>,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

/// Peak prominence: height above the higher of the two lowest points reached
/// before meeting a taller sample (or the edge) on either side.
fn prominence(c: &[f64], i: usize) -> f64 {
    let h = c[i];
    let mut left = h;
    for &v in c[..i].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &c[i + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Frequency of the first local maximum above [`FIRST_PEAK_MIN_HZ`] whose
/// prominence reaches [`FIRST_PEAK_PROMINENCE`] of the curve maximum.
pub fn first_peak(freqs: &[f64], curve: &[f64]) -> Option<f64> {
    let top = curve.iter().fold(0.0f64, |m, &v| m.max(v));
    if !(top > 0.0) {
        return None;
    }
    let n = curve.len();
    let mut i = 1;
    while i + 1 < n {
        if freqs[i] < FIRST_PEAK_MIN_HZ || curve[i] <= curve[i - 1] {
            i += 1;
            continue;
        }
        // Skip across a plateau to see where it ends.
        let mut j = i;
        while j + 1 < n && curve[j + 1] == curve[i] {
            j += 1;
        }
        if j + 1 < n && curve[j + 1] < curve[i] && prominence(curve, i) >= FIRST_PEAK_PROMINENCE * top {
            return Some(freqs[i]);
        }
        i = j + 1;
    }
    None
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Data-driven band edges.
///
/// `f1` is mean + 3 SD (sample SD) of every participant's first-peak
/// frequency, where each dyad contributes its A->B and B->A curves.
/// `f2` is where the across-dyad mean + 3 SD of the designated curves, after
/// having been at or above the permutation threshold beyond `f1`, drops
/// below it for [`BELOW_THRESHOLD_RUN`] consecutive bins.
pub fn band_boundaries(
    spectra: &[(String, GgcSpectrum)],
    designations: &[Designation],
    threshold: &NullThreshold,
) -> Result<BoundaryEstimate> {
    if spectra.len() < 2 {
        return Err(Error::NoData(format!(
            "band boundaries need at least 2 dyads, got {}",
            spectra.len()
        )));
    }
    if designations.len() != spectra.len() {
        return Err(Error::Config("one designation per dyad required".into()));
    }
    let freqs = &spectra[0].1.freqs;
    for (id, s) in spectra {
        if s.freqs.len() != freqs.len() || s.freqs.iter().zip(freqs).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Grid(format!("dyad {id} uses a different frequency grid")));
        }
    }
    threshold.check_grid(freqs)?;

    let mut first_peaks = Vec::new();
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    for (id, s) in spectra {
        for dir in [Direction::AtoB, Direction::BtoA] {
            let label = format!("{id}:{}", dir.label());
            match first_peak(freqs, s.curve(dir)) {
                Some(f) => first_peaks.push((label, f)),
                None => {
                    warn!("no qualifying first peak for {label}; participant excluded");
                    excluded.push(label);
                }
            }
        }
    }
    if first_peaks.len() < 2 {
        return Err(Error::MissingPeak(format!(
            "only {} participant curve(s) have a first peak",
            first_peaks.len()
        )));
    }
    let peaks: Vec<f64> = first_peaks.iter().map(|p| p.1).collect();
    let (m, sd) = mean_sd(&peaks);
    let f1 = m + 3.0 * sd;
    let nyquist = *freqs.last().unwrap();
    if !(f1 < nyquist) {
        return Err(Error::InvalidBand {
            lo: f1,
            hi: nyquist,
            reason: "first-peak boundary reaches the top of the grid".into(),
        });
    }

    let chosen: Vec<&[f64]> = spectra
        .iter()
        .zip(designations)
        .map(|((_, s), d)| {
            let dir = match d {
                Designation::Fixed(dir) => *dir,
                Designation::Stronger => {
                    let total = |dir| band_integral(s, dir, freqs[0], nyquist).unwrap_or(0.0);
                    if total(Direction::BtoA) > total(Direction::AtoB) {
                        Direction::BtoA
                    } else {
                        Direction::AtoB
                    }
                }
            };
            s.curve(dir)
        })
        .collect();
    let envelope: Vec<f64> = (0..freqs.len())
        .map(|k| {
            let col: Vec<f64> = chosen.iter().map(|c| c[k]).collect();
            let (m, sd) = mean_sd(&col);
            m + 3.0 * sd
        })
        .collect();

    let start = freqs.partition_point(|&f| f <= f1);
    let below_run = |k: usize| {
        k + BELOW_THRESHOLD_RUN <= freqs.len()
            && (k..k + BELOW_THRESHOLD_RUN).all(|j| envelope[j] < threshold.q99[j])
    };
    let first_above = (start..freqs.len()).find(|&k| envelope[k] >= threshold.q99[k]);
    let search_from = match first_above {
        Some(k) => k,
        None => {
            warnings.push("designated curves never reach the threshold above f1".into());
            start
        }
    };
    let f2 = match (search_from..freqs.len()).find(|&k| below_run(k)) {
        Some(k) => freqs[k],
        None => {
            warnings.push("designated curves stay above the threshold up to the Nyquist frequency".into());
            nyquist
        }
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(BoundaryEstimate {
        boundaries: BandBoundaries::new(f1, f2)?,
        first_peaks,
        excluded,
        warnings,
    })
}
