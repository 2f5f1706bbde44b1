//! Synthetic dyads with known directional coupling.
//!
//! Both participants follow a common rhythm (sinusoid at the movement
//! frequency), each with independent slow phase jitter, plus white noise. The follower additionally receives a
//! band-passed, delayed copy of the leader's force. Sensor readings follow
//! from the force model, position from integrating the slider acceleration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{invert_forces, MassConfig};
use crate::ggc::Direction;
use crate::io::{Condition, GroundTruth, Manifest, MassSpec, Roles, TrialEntry, TrialRecord, DEFAULT_EXPECTED_BEATS};
use crate::signal::{Channel, FilterKind, Sos};

/// Position components below this frequency are removed after integration.
pub const POSITION_HIGHPASS_HZ: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Full movement cycles per second (two target reaches per cycle).
    pub movement_freq: f64,
    /// Rhythm amplitude of participant A, N.
    pub movement_amp: f64,
    /// B's rhythm amplitude relative to A's.
    pub role_amp_ratio: f64,
    pub coupling_gain: f64,
    pub coupling_band: (f64, f64),
    /// s
    pub coupling_delay: f64,
    pub direction: Direction,
    pub coupling_filter_order: usize,
    /// White-noise SD of A and B, N.
    pub noise_sd: (f64, f64),
    /// Stationary SD of each participant's own phase jitter around the
    /// common rhythm, rad.
    pub phase_jitter_sd: f64,
    /// Correlation time of the phase jitter, s.
    pub phase_jitter_tau: f64,
    pub masses: MassConfig,
    pub fs: f64,
    pub duration: f64,
    /// Silence before the first beat, s.
    pub lead_in: f64,
    pub beats: usize,
    pub target_width: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            movement_freq: 0.5,
            movement_amp: 4.0,
            role_amp_ratio: 1.0,
            coupling_gain: 0.0,
            coupling_band: (2.15, 7.0),
            coupling_delay: 0.08,
            direction: Direction::AtoB,
            coupling_filter_order: 2,
            noise_sd: (1.0, 1.0),
            phase_jitter_sd: 0.3,
            phase_jitter_tau: 2.0,
            masses: MassConfig {
                slider: 5.0,
                m1: 1.6,
                m2: 1.6,
            },
            fs: 500.0,
            duration: 23.0,
            lead_in: 2.0,
            beats: DEFAULT_EXPECTED_BEATS,
            target_width: 0.03,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (lo, hi) = self.coupling_band;
        if !(self.fs > 0.0 && self.duration > 0.0) {
            return bad(format!("fs and duration must be positive ({}, {})", self.fs, self.duration));
        }
        if !(lo > 0.0 && lo < hi && self.fs >= 2.0 * hi) {
            return Err(Error::InvalidBand {
                lo,
                hi,
                reason: format!("needs 0 < lo < hi <= fs/2 = {}", self.fs / 2.0),
            });
        }
        if !(self.coupling_gain >= 0.0 && self.movement_amp >= 0.0 && self.role_amp_ratio >= 0.0) {
            return bad("gains and amplitudes must be non-negative".into());
        }
        if !(self.noise_sd.0 >= 0.0 && self.noise_sd.1 >= 0.0 && self.phase_jitter_sd >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.movement_freq > 0.0 && self.movement_freq < self.fs / 2.0) {
            return bad(format!("movement_freq {} out of range", self.movement_freq));
        }
        if !(self.coupling_delay >= 0.0 && self.phase_jitter_tau > 0.0 && self.lead_in >= 0.0) {
            return bad("delay, lead-in and jitter time constant must be non-negative".into());
        }
        if self.coupling_filter_order == 0 {
            return bad("coupling filter order must be at least 1".into());
        }
        self.masses.validate()
    }

    pub fn metronome_period(&self) -> f64 {
        0.5 / self.movement_freq
    }

    fn samples(&self) -> usize {
        (self.duration * self.fs).round() as usize
    }

    /// Peak displacement of the rhythm component, m.
    pub fn rhythm_position_amplitude(&self) -> f64 {
        let w = 2.0 * PI * self.movement_freq;
        self.movement_amp * (1.0 + self.role_amp_ratio) / (self.masses.total() * w * w)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            direction: (self.coupling_gain > 0.0).then_some(self.direction),
            band: self.coupling_band,
            gain: self.coupling_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrial {
    pub record: TrialRecord,
    pub truth: GroundTruth,
    pub seed: u64,
    /// Applied forces before they were turned into sensor readings.
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

/// Causal band-pass: high-pass and low-pass Butterworth sections, each run
/// forward twice so the magnitude response equals that of the zero-phase
/// version.
fn bandpass(x: &[f64], band: (f64, f64), order: usize, fs: f64) -> Result<Vec<f64>> {
    let hp = Sos::butterworth(order, band.0, fs, FilterKind::Highpass)?;
    let lp = Sos::butterworth(order, band.1, fs, FilterKind::Lowpass)?;
    Ok(lp.filter(&lp.filter(&hp.filter(&hp.filter(x)))))
}

/// Twice-integrated acceleration with content below `f_cut` removed, via the
/// DFT of the demeaned input.
fn integrate_twice(a: &[f64], fs: f64, f_cut: f64) -> Vec<f64> {
    let n = a.len();
    let mean = a.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = a.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < f_cut {
            *z = Complex64::new(0.0, 0.0);
        } else {
            let w = 2.0 * PI * f;
            *z /= -(w * w);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.re / n as f64).collect()
}

pub fn simulate(cfg: &SimConfig) -> Result<SimTrial> {
    cfg.validate()?;
    let n = cfg.samples();
    let fs = cfg.fs;
    let dt = 1.0 / fs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let decay = (-dt / cfg.phase_jitter_tau).exp();
    let kick = cfg.phase_jitter_sd * (1.0 - decay * decay).sqrt();
    let w = 2.0 * PI * cfg.movement_freq;
    let rhythm = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut phi = cfg.phase_jitter_sd * rng.sample::<f64, _>(StandardNormal);
        (0..n)
            .map(|i| {
                let v = (w * i as f64 * dt + phi).sin();
                phi = phi * decay + kick * rng.sample::<f64, _>(StandardNormal);
                v
            })
            .collect()
    };
    let ra = rhythm(&mut rng);
    let rb = rhythm(&mut rng);
    let noise = |sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let na = noise(cfg.noise_sd.0, &mut rng);
    let nb = noise(cfg.noise_sd.1, &mut rng);
    let amp_a = cfg.movement_amp;
    let amp_b = cfg.movement_amp * cfg.role_amp_ratio;
    let mut f1: Vec<f64> = ra.iter().zip(&na).map(|(r, e)| amp_a * r + e).collect();
    let mut f2: Vec<f64> = rb.iter().zip(&nb).map(|(r, e)| amp_b * r + e).collect();

    if cfg.coupling_gain > 0.0 {
        let (leader, follower) = match cfg.direction {
            Direction::AtoB => (&f1, &mut f2),
            Direction::BtoA => (&f2, &mut f1),
        };
        let drive = bandpass(leader, cfg.coupling_band, cfg.coupling_filter_order, fs)?;
        let lag = (cfg.coupling_delay * fs).round() as usize;
        for i in lag..n {
            follower[i] += cfg.coupling_gain * drive[i - lag];
        }
    }

    let ch1 = Channel::new(f1.clone(), fs, "F1")?;
    let ch2 = Channel::new(f2.clone(), fs, "F2")?;
    let (s1, s2, accel) = invert_forces(&ch1, &ch2, &cfg.masses)?;
    // The rhythm is integrated in closed form; only the broadband remainder
    // goes through the DFT, where a non-integer cycle count would leak.
    let total = cfg.masses.total();
    let rhythm_accel: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| (amp_a * x + amp_b * y) / total).collect();
    let remainder: Vec<f64> = accel.samples().iter().zip(&rhythm_accel).map(|(a, r)| a - r).collect();
    let position: Vec<f64> = integrate_twice(&remainder, fs, POSITION_HIGHPASS_HZ)
        .into_iter()
        .zip(&rhythm_accel)
        .map(|(p, r)| p - r / (w * w))
        .collect();

    // Beats fall where the jitter-free rhythm reverses.
    let period = cfg.metronome_period();
    let beats: Vec<f64> = (0..)
        .map(|k| (k as f64 + 0.5) * period)
        .skip_while(|&t| t < cfg.lead_in)
        .take(cfg.beats)
        .take_while(|&t| t < (n - 1) as f64 * dt)
        .map(|t| (t * fs).round() / fs)
        .collect();

    let record = TrialRecord {
        id: format!("sim_{}", cfg.seed),
        dyad_id: "sim".into(),
        condition: Condition {
            label: "sim".into(),
            target_distance: 2.0 * cfg.rhythm_position_amplitude(),
            target_width: cfg.target_width,
            target_midpoint: 0.0,
            metronome_period: period,
        },
        roles: Roles::default(),
        masses: cfg.masses,
        position: Channel::new(position, fs, "pos")?,
        s1,
        s2,
        beats,
    };
    Ok(SimTrial {
        record,
        truth: cfg.ground_truth(),
        seed: cfg.seed,
        f1,
        f2,
    })
}

/// Settings file of the `simulate` command: dyad count plus the trial
/// settings under `[sim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub dyads: usize,
    pub sim: SimConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            dyads: 1,
            sim: SimConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SessionConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Seed of trial `trial` of dyad `dyad` in a session built from `base`.
pub fn trial_seed(base: u64, dyad: usize, trial: usize) -> u64 {
    base.wrapping_add(1000 * dyad as u64 + trial as u64)
}

pub fn dyad_id(dyad: usize) -> String {
    format!("d{:02}", dyad + 1)
}

/// `dyads x trials` simulated trials, generated in parallel, ordered by
/// dyad then trial.
pub fn simulate_session(cfg: &SimConfig, dyads: usize, trials: usize) -> Result<Vec<SimTrial>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..dyads).flat_map(|d| (0..trials).map(move |t| (d, t))).collect();
    jobs.par_iter()
        .map(|&(d, t)| {
            let mut c = cfg.clone();
            c.seed = trial_seed(cfg.seed, d, t);
            let mut s = simulate(&c)?;
            s.record.dyad_id = dyad_id(d);
            s.record.id = format!("{}_t{:02}", dyad_id(d), t + 1);
            Ok(s)
        })
        .collect()
}

/// Manifest describing `trials` as files `<id>.csv`.
pub fn session_manifest(cfg: &SimConfig, trials: &[SimTrial]) -> Manifest {
    Manifest {
        fs: cfg.fs,
        expected_beats: cfg.beats,
        trials: trials
            .iter()
            .map(|t| TrialEntry {
                file: format!("{}.csv", t.record.id),
                dyad: t.record.dyad_id.clone(),
                condition: t.record.condition.clone(),
                roles: t.record.roles.clone(),
                masses: MassSpec::Explicit(t.record.masses),
                seed: Some(t.seed),
                truth: Some(t.truth),
            })
            .collect(),
    }
}

fn lagged_design(cols: &[&[f64]], p: usize) -> (DMatrix<f64>, usize) {
    let n = cols[0].len();
    let rows = n - p;
    let k = cols.len() * p;
    let m = DMatrix::from_fn(rows, k, |r, c| {
        let (series, lag) = (c / p, c % p + 1);
        cols[series][r + p - lag]
    });
    (m, rows)
}

/// Residual variance (RSS / rows) of regressing `target[t]` on `p` lags of
/// each series in `cols`.
fn residual_variance(target: &[f64], cols: &[&[f64]], p: usize) -> Result<f64> {
    let (x, rows) = lagged_design(cols, p);
    let y = DVector::from_iterator(rows, target[p..].iter().copied());
    let gram = x.transpose() * &x;
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = y - x * beta;
    Ok(resid.norm_squared() / rows as f64)
}

/// Time-domain Granger causality by direct regressions:
/// `gc_xy = ln(var(y | past y) / var(y | past y, past x))`, and the same
/// with the roles swapped. Inputs are demeaned first.
pub fn time_domain_gc_oracle(x: &[f64], y: &[f64], p: usize) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::ChannelMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    if p == 0 || x.len() <= 4 * p + 1 {
        return Err(Error::InsufficientSamples { needed: 4 * p + 2, got: x.len() });
    }
    let demean = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| a - m).collect::<Vec<_>>()
    };
    let (x, y) = (demean(x), demean(y));
    let gc = |target: &[f64], other: &[f64]| -> Result<f64> {
        let restricted = residual_variance(target, &[target], p)?;
        let full = residual_variance(target, &[target, other], p)?;
        if !(restricted > 0.0 && full > 0.0) {
            return Err(Error::RankDeficient);
        }
        Ok((restricted / full).ln())
    };
    Ok((gc(&y, &x)?, gc(&x, &y)?))
}
