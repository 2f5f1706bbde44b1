//! Participant force reconstruction from the two load cells of the slider.
//!
//! The slider (mass `M`) sits between two load cells; each participant's
//! hand and forearm (mass `m1`, `m2`) is rigidly attached to one of them.
//! With rightward motion positive and friction neglected:
//!
//! ```text
//! F2 = m2 a + S2
//! S2 - S1 = M a
//! F1 = m1 a - S1
//! ```
//!
//! so the slider acceleration comes from the sensor difference and
//! `F1 + F2 = (m1 + m2 + M) a` holds sample by sample.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Channel;

/// Slider mass plus the two hand+forearm masses, all in kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassConfig {
    pub slider: f64,
    pub m1: f64,
    pub m2: f64,
}

impl MassConfig {
    pub fn new(slider: f64, m1: f64, m2: f64) -> Result<Self> {
        let m = MassConfig { slider, m1, m2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("slider", self.slider), ("m1", self.m1), ("m2", self.m2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidMass(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.m1 + self.m2 + self.slider
    }
}

/// How the raw sensor readings map onto the signed model quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorPolarity {
    /// Readings are already signed with rightward positive.
    #[default]
    Signed,
    /// Readings are unsigned magnitudes; their sign follows the slider's
    /// direction of motion at each instant.
    FollowMovement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcePair {
    pub f1: Channel,
    pub f2: Channel,
    pub accel: Channel,
}

fn check_pair(a: &Channel, b: &Channel) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ChannelMismatch(format!(
            "lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.fs() != b.fs() {
        return Err(Error::ChannelMismatch(format!(
            "sampling rates differ: {} vs {}",
            a.fs(),
            b.fs()
        )));
    }
    Ok(())
}

pub fn reconstruct_forces(s1: &Channel, s2: &Channel, masses: &MassConfig) -> Result<ForcePair> {
    check_pair(s1, s2)?;
    masses.validate()?;
    let n = s1.len();
    let mut f1 = Vec::with_capacity(n);
    let mut f2 = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for (&a1, &a2) in s1.samples().iter().zip(s2.samples()) {
        let a = (a2 - a1) / masses.slider;
        acc.push(a);
        f2.push(masses.m2 * a + a2);
        f1.push(masses.m1 * a - a1);
    }
    let fs = s1.fs();
    Ok(ForcePair {
        f1: Channel::new(f1, fs, "F1")?,
        f2: Channel::new(f2, fs, "F2")?,
        accel: Channel::new(acc, fs, "a")?,
    })
}

/// Like [`reconstruct_forces`], with sensor sign handling selected by
/// `polarity`. `position` is only consulted for [`SensorPolarity::FollowMovement`].
pub fn reconstruct_forces_with(
    s1: &Channel,
    s2: &Channel,
    position: &Channel,
    masses: &MassConfig,
    polarity: SensorPolarity,
) -> Result<ForcePair> {
    match polarity {
        SensorPolarity::Signed => reconstruct_forces(s1, s2, masses),
        SensorPolarity::FollowMovement => {
            check_pair(s1, position)?;
            let sign = movement_sign(position.samples());
            let apply = |c: &Channel| {
                c.with_samples(c.samples().iter().zip(&sign).map(|(v, s)| v.abs() * s).collect())
            };
            reconstruct_forces(&apply(s1), &apply(s2), masses)
        }
    }
}

/// +1/-1 per sample from the central-difference velocity; stationary samples
/// keep the previous direction (rightward at the start).
fn movement_sign(pos: &[f64]) -> Vec<f64> {
    let n = pos.len();
    let mut out = Vec::with_capacity(n);
    let mut last = 1.0;
    for i in 0..n {
        let v = pos[(i + 1).min(n - 1)] - pos[i.saturating_sub(1)];
        if v > 0.0 {
            last = 1.0;
        } else if v < 0.0 {
            last = -1.0;
        }
        out.push(last);
    }
    out
}

/// Algebraic inverse of [`reconstruct_forces`]: sensor readings and
/// acceleration produced by applied forces `f1`, `f2`. Returns `(S1, S2, a)`.
pub fn invert_forces(
    f1: &Channel,
    f2: &Channel,
    masses: &MassConfig,
) -> Result<(Channel, Channel, Channel)> {
    check_pair(f1, f2)?;
    masses.validate()?;
    let total = masses.total();
    let n = f1.len();
    let mut s1 = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for (&g1, &g2) in f1.samples().iter().zip(f2.samples()) {
        let a = (g1 + g2) / total;
        acc.push(a);
        s2.push(g2 - masses.m2 * a);
        s1.push(masses.m1 * a - g1);
    }
    let fs = f1.fs();
    Ok((
        Channel::new(s1, fs, "S1")?,
        Channel::new(s2, fs, "S2")?,
        Channel::new(acc, fs, "a")?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl std::str::FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Sex::Female),
            "m" | "male" => Ok(Sex::Male),
            other => Err(Error::Config(format!("unknown sex '{other}'"))),
        }
    }
}

/// Segment mass fractions of total body mass, keyed by (segment, sex).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientTable {
    entries: BTreeMap<(String, Sex), f64>,
}

/// Segment mass percentages (de Leva, 1996, adjusted Zatsiorsky-Seluyanov
/// parameters). Stored as the CSV shipped in `data/segment_mass_fractions.csv`.
pub const DE_LEVA_TABLE_CSV: &str = include_str!("../data/segment_mass_fractions.csv");

impl CoefficientTable {
    pub fn de_leva() -> Self {
        Self::from_csv_str(DE_LEVA_TABLE_CSV).expect("bundled coefficient table parses")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    /// Columns `segment,sex,mass_fraction`, header required.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Config(e.to_string()))?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("coefficient table lacks column '{name}'")))
        };
        let (ci_seg, ci_sex, ci_frac) = (col("segment")?, col("sex")?, col("mass_fraction")?);
        let mut entries = BTreeMap::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
            let line = row + 2;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let sex: Sex = field(ci_sex).parse()?;
            let frac: f64 = field(ci_frac).parse().map_err(|_| Error::Parse {
                line,
                column: "mass_fraction".into(),
                message: format!("not a number: '{}'", field(ci_frac)),
            })?;
            entries.insert((field(ci_seg).to_ascii_lowercase(), sex), frac);
        }
        Ok(CoefficientTable { entries })
    }

    pub fn fraction(&self, segment: &str, sex: Sex) -> Result<f64> {
        self.entries
            .get(&(segment.to_ascii_lowercase(), sex))
            .copied()
            .ok_or_else(|| Error::Config(format!("no coefficient for segment '{segment}' ({sex:?})")))
    }

    /// Hand + forearm mass for a participant.
    pub fn hand_forearm_mass(&self, body_mass: f64, sex: Sex) -> Result<f64> {
        segment_mass(
            body_mass,
            &[self.fraction("hand", sex)?, self.fraction("forearm", sex)?],
        )
    }
}

/// Body mass times the sum of the given segment fractions.
pub fn segment_mass(body_mass: f64, fractions: &[f64]) -> Result<f64> {
    if !(body_mass.is_finite() && body_mass > 0.0) {
        return Err(Error::InvalidMass(format!("body mass must be positive, got {body_mass}")));
    }
    if fractions.is_empty() {
        return Err(Error::Config("no segment fractions supplied".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::Config(format!("mass fraction {f} outside (0, 1)")));
    }
    Ok(body_mass * fractions.iter().sum::<f64>())
}
