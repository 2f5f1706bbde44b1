//! Task performance: position and synchronization errors, the dyad
//! exclusion rule, and per-participant force summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::ForcePair;
use crate::io::TrialRecord;
use crate::signal::{extrema_periods_with_bin_width, find_extrema, Channel, PeriodHistogram, DEFAULT_HISTOGRAM_BIN_HZ};

/// Reversal detection threshold as a fraction of the position range.
pub const REVERSAL_PROMINENCE_FRACTION: f64 = 0.1;
/// Exclusion multiplier on the pooled error SD.
pub const EXCLUSION_FACTOR: f64 = 2.0;
pub const MIN_RETAINED_DYADS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reversal {
    pub index: usize,
    pub time: f64,
    pub position: f64,
}

pub fn reversal_points(position: &Channel, prominence: f64) -> Vec<Reversal> {
    let x = position.samples();
    find_extrema(x, prominence)
        .into_iter()
        .map(|e| Reversal {
            index: e.index,
            time: e.index as f64 / position.fs(),
            position: x[e.index],
        })
        .collect()
}

/// Mean and sample SD of a set of errors, in percent of some reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl ErrorStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ErrorStats { mean, sd, n }
    }
}

/// Per-reversal distance to the nearest target center, in percent of
/// `normalizer`.
pub fn position_errors(reversals: &[f64], centers: (f64, f64), normalizer: f64) -> Result<Vec<f64>> {
    if reversals.is_empty() {
        return Err(Error::NoData("no reversals".into()));
    }
    if !(normalizer > 0.0) {
        return Err(Error::Config(format!("normalizer must be positive, got {normalizer}")));
    }
    Ok(reversals
        .iter()
        .map(|&r| {
            let e = (r - centers.0).abs().min((r - centers.1).abs());
            100.0 * e / normalizer
        })
        .collect())
}

pub fn position_error(reversals: &[f64], centers: (f64, f64), normalizer: f64) -> Result<ErrorStats> {
    Ok(ErrorStats::of(&position_errors(reversals, centers, normalizer)?))
}

/// Signed deviation of each successive reversal interval from the metronome
/// period, in percent of the period.
pub fn synchronization_errors(times: &[f64], period: f64) -> Result<Vec<f64>> {
    if times.len() < 2 {
        return Err(Error::NoData(format!("{} reversal(s); need at least 2", times.len())));
    }
    if !(period > 0.0) {
        return Err(Error::Config(format!("metronome period must be positive, got {period}")));
    }
    Ok(times.windows(2).map(|w| 100.0 * (w[1] - w[0] - period) / period).collect())
}

pub fn synchronization_error(times: &[f64], period: f64) -> Result<ErrorStats> {
    Ok(ErrorStats::of(&synchronization_errors(times, period)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeNormalizer {
    /// Distance between target centers.
    #[default]
    TargetDistance,
    TargetWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPerformance {
    pub trial_id: String,
    pub dyad_id: String,
    pub condition: String,
    pub pe: ErrorStats,
    pub se: ErrorStats,
    /// Raw per-reversal position errors, %.
    pub pe_values: Vec<f64>,
}

pub fn trial_performance(trial: &TrialRecord, normalizer: PeNormalizer) -> Result<TrialPerformance> {
    let prominence = REVERSAL_PROMINENCE_FRACTION * trial.position.peak_to_peak();
    let revs = reversal_points(&trial.position, prominence);
    let cond = &trial.condition;
    let norm = match normalizer {
        PeNormalizer::TargetDistance => cond.target_distance,
        PeNormalizer::TargetWidth => cond.target_width,
    };
    let positions: Vec<f64> = revs.iter().map(|r| r.position).collect();
    let pe_values = position_errors(&positions, cond.target_centers(), norm)?;
    // Movement before the metronome starts is not paced; a reversal may lead
    // the first beat by up to half a period.
    let first_beat = trial.beats.first().copied().unwrap_or(0.0);
    let paced: Vec<f64> = revs
        .iter()
        .map(|r| r.time)
        .filter(|&t| t >= first_beat - cond.metronome_period / 2.0)
        .collect();
    let se = synchronization_error(&paced, cond.metronome_period)?;
    Ok(TrialPerformance {
        trial_id: trial.id.clone(),
        dyad_id: trial.dyad_id.clone(),
        condition: cond.label.clone(),
        pe: ErrorStats::of(&pe_values),
        se,
        pe_values,
    })
}

/// Per-dyad indices: per-trial means and SDs averaged over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub dyad_id: String,
    /// `None` for the all-conditions row.
    pub condition: Option<String>,
    pub pe_mean: f64,
    pub pe_sd: f64,
    pub se_mean: f64,
    pub se_sd: f64,
    pub trials: usize,
}

fn average(dyad: &str, condition: Option<String>, rows: &[&TrialPerformance]) -> PerformanceSummary {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&TrialPerformance) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    PerformanceSummary {
        dyad_id: dyad.to_string(),
        condition,
        pe_mean: avg(&|r| r.pe.mean),
        pe_sd: avg(&|r| r.pe.sd),
        se_mean: avg(&|r| r.se.mean),
        se_sd: avg(&|r| r.se.sd),
        trials: rows.len(),
    }
}

/// Per-(dyad, condition) rows followed by one all-conditions row per dyad,
/// ordered by dyad then condition.
pub fn summarize(perf: &[TrialPerformance]) -> Vec<PerformanceSummary> {
    let mut by_dyad: BTreeMap<&str, BTreeMap<&str, Vec<&TrialPerformance>>> = BTreeMap::new();
    for p in perf {
        by_dyad.entry(&p.dyad_id).or_default().entry(&p.condition).or_default().push(p);
    }
    let mut out = Vec::new();
    for (dyad, conds) in by_dyad {
        for (cond, rows) in &conds {
            out.push(average(dyad, Some(cond.to_string()), rows));
        }
        let per_cond: Vec<PerformanceSummary> = conds.values().map(|rows| average(dyad, None, rows)).collect();
        let k = per_cond.len() as f64;
        let mean = |f: fn(&PerformanceSummary) -> f64| per_cond.iter().map(f).sum::<f64>() / k;
        out.push(PerformanceSummary {
            dyad_id: dyad.to_string(),
            condition: None,
            pe_mean: mean(|s| s.pe_mean),
            pe_sd: mean(|s| s.pe_sd),
            se_mean: mean(|s| s.se_mean),
            se_sd: mean(|s| s.se_sd),
            trials: per_cond.iter().map(|s| s.trials).sum(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub dyad_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExclusionOutcome {
    pub retained: Vec<String>,
    pub excluded: Vec<Exclusion>,
    pub notes: Vec<String>,
}

fn sample_sd(v: &[f64]) -> f64 {
    ErrorStats::of(v).sd
}

/// Drops dyads whose error SD reaches twice the SD of all pooled errors,
/// repeating on the survivors until nothing changes. Exclusions that would
/// leave fewer than [`MIN_RETAINED_DYADS`] are not applied.
pub fn exclusion_filter(errors: &[(String, Vec<f64>)]) -> ExclusionOutcome {
    let mut active: Vec<&(String, Vec<f64>)> = errors.iter().filter(|(_, e)| !e.is_empty()).collect();
    active.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = ExclusionOutcome::default();
    for (id, e) in errors {
        if e.is_empty() {
            out.excluded.push(Exclusion { dyad_id: id.clone(), reason: "no error samples".into() });
        }
    }
    if active.len() < MIN_RETAINED_DYADS {
        out.notes.push(format!("{} dyads; rule needs at least {MIN_RETAINED_DYADS}", active.len()));
    } else {
        loop {
            let pooled: Vec<f64> = active.iter().flat_map(|(_, e)| e.iter().copied()).collect();
            let limit = EXCLUSION_FACTOR * sample_sd(&pooled);
            let (drop, keep): (Vec<&(String, Vec<f64>)>, Vec<_>) =
                active.iter().partition(|(_, e)| sample_sd(e) >= limit);
            if drop.is_empty() {
                break;
            }
            if keep.len() < MIN_RETAINED_DYADS {
                out.notes.push(format!(
                    "stopping: excluding {} more dyad(s) would leave {}",
                    drop.len(),
                    keep.len()
                ));
                break;
            }
            for (id, e) in drop {
                out.excluded.push(Exclusion {
                    dyad_id: id.clone(),
                    reason: format!("error sd {:.4} >= {:.4} (2 x pooled sd)", sample_sd(e), limit),
                });
            }
            active = keep;
        }
    }
    out.retained = active.iter().map(|(id, _)| id.clone()).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Participant {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantForce {
    pub dyad_id: String,
    pub participant: Participant,
    pub role: String,
    /// Mean |F| over all samples of all trials, N.
    pub mean_abs: f64,
    pub histogram: PeriodHistogram,
}

pub fn mean_abs(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

/// Mean absolute force and extrema-period histogram per participant, pooled
/// over each dyad's trials. The extrema threshold is `prominence_fraction`
/// of each trial's force range.
pub fn force_summaries(trials: &[(&TrialRecord, &ForcePair)], prominence_fraction: f64) -> Vec<ParticipantForce> {
    type Acc = (String, f64, usize, Vec<f64>);
    let mut acc: BTreeMap<(String, Participant), Acc> = BTreeMap::new();
    for (trial, forces) in trials {
        for (p, ch, role) in [
            (Participant::A, &forces.f1, &trial.roles.a),
            (Participant::B, &forces.f2, &trial.roles.b),
        ] {
            let e = acc
                .entry((trial.dyad_id.clone(), p))
                .or_insert_with(|| (role.clone(), 0.0, 0, Vec::new()));
            e.1 += ch.samples().iter().map(|v| v.abs()).sum::<f64>();
            e.2 += ch.len();
            let h = extrema_periods_with_bin_width(ch, prominence_fraction * ch.peak_to_peak(), DEFAULT_HISTOGRAM_BIN_HZ);
            e.3.extend(h.frequencies);
        }
    }
    acc.into_iter()
        .map(|((dyad_id, participant), (role, sum, n, freqs))| ParticipantForce {
            dyad_id,
            participant,
            role,
            mean_abs: sum / n as f64,
            histogram: PeriodHistogram::from_frequencies(freqs, DEFAULT_HISTOGRAM_BIN_HZ),
        })
        .collect()
}
