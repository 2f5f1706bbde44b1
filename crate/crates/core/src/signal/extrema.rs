use serde::{Deserialize, Serialize};

use super::Channel;

/// Default histogram bin width for period-derived frequencies.
pub const DEFAULT_HISTOGRAM_BIN_HZ: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodHistogram {
    /// One entry per full cycle between consecutive same-type extrema, in
    /// time order of the cycle end.
    pub frequencies: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Trend {
    Unknown,
    Rising,
    Falling,
}

/// Alternating maxima and minima whose excursion to the next opposite
/// extremum is at least `prominence` on both sides.
///
/// The detector follows the signal and confirms a running maximum once the
/// signal has dropped `prominence` below it (and symmetrically for minima).
/// The very first reversal is not reported because its leading side lies
/// before the recording. Plateaus report their first sample.
pub fn find_extrema(x: &[f64], prominence: f64) -> Vec<Extremum> {
    let mut out = Vec::new();
    let Some(&first) = x.first() else {
        return out;
    };
    let mut trend = Trend::Unknown;
    let (mut hi, mut hi_at) = (first, 0);
    let (mut lo, mut lo_at) = (first, 0);

    for (i, &v) in x.iter().enumerate().skip(1) {
        match trend {
            Trend::Unknown => {
                if v > hi {
                    hi = v;
                    hi_at = i;
                }
                if v < lo {
                    lo = v;
                    lo_at = i;
                }
                if v > lo && v - lo >= prominence {
                    trend = Trend::Rising;
                    (hi, hi_at) = (v, i);
                } else if v < hi && hi - v >= prominence {
                    trend = Trend::Falling;
                    (lo, lo_at) = (v, i);
                }
            }
            Trend::Rising => {
                if v > hi {
                    (hi, hi_at) = (v, i);
                } else if v < hi && hi - v >= prominence {
                    out.push(Extremum {
                        index: hi_at,
                        kind: ExtremumKind::Max,
                    });
                    trend = Trend::Falling;
                    (lo, lo_at) = (v, i);
                }
            }
            Trend::Falling => {
                if v < lo {
                    (lo, lo_at) = (v, i);
                } else if v > lo && v - lo >= prominence {
                    out.push(Extremum {
                        index: lo_at,
                        kind: ExtremumKind::Min,
                    });
                    trend = Trend::Rising;
                    (hi, hi_at) = (v, i);
                }
            }
        }
    }
    out
}

pub fn extrema_periods(x: &Channel, min_prominence: f64) -> PeriodHistogram {
    extrema_periods_with_bin_width(x, min_prominence, DEFAULT_HISTOGRAM_BIN_HZ)
}

pub fn extrema_periods_with_bin_width(
    x: &Channel,
    min_prominence: f64,
    bin_width: f64,
) -> PeriodHistogram {
    let extrema = find_extrema(x.samples(), min_prominence);
    let mut last_max = None;
    let mut last_min = None;
    let mut frequencies = Vec::new();
    for e in &extrema {
        let slot = match e.kind {
            ExtremumKind::Max => &mut last_max,
            ExtremumKind::Min => &mut last_min,
        };
        if let Some(prev) = slot.replace(e.index) {
            frequencies.push(x.fs() / (e.index - prev) as f64);
        }
    }
    PeriodHistogram::from_frequencies(frequencies, bin_width)
}

impl PeriodHistogram {
    /// Bins `[k w, (k+1) w)` from 0 up to the largest frequency.
    pub fn from_frequencies(frequencies: Vec<f64>, bin_width: f64) -> PeriodHistogram {
        if frequencies.is_empty() {
            return PeriodHistogram {
                frequencies,
                bin_edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let top = frequencies.iter().fold(0.0f64, |m, &f| m.max(f));
        let bins = ((top / bin_width).ceil() as usize).max(1);
        let bin_edges = (0..=bins).map(|i| i as f64 * bin_width).collect();
        let mut counts = vec![0; bins];
        for &f in &frequencies {
            counts[((f / bin_width) as usize).min(bins - 1)] += 1;
        }
        PeriodHistogram {
            frequencies,
            bin_edges,
            counts,
        }
    }
}
