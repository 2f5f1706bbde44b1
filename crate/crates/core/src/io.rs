//! Trial recordings on disk: one CSV per trial (`t_s,s1_n,s2_n,pos_m,beat`)
//! plus a TOML session manifest carrying per-trial metadata.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{CoefficientTable, MassConfig, Sex};
use crate::ggc::Direction;
use crate::signal::Channel;

pub const TRIAL_HEADER: [&str; 5] = ["t_s", "s1_n", "s2_n", "pos_m", "beat"];
pub const DEFAULT_EXPECTED_BEATS: usize = 20;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    /// Distance between the two target centers, m.
    pub target_distance: f64,
    /// Target width, m.
    #[serde(default = "default_target_width")]
    pub target_width: f64,
    /// Midpoint between the targets in position coordinates, m.
    #[serde(default)]
    pub target_midpoint: f64,
    /// Metronome inter-beat interval, s.
    pub metronome_period: f64,
}

fn default_target_width() -> f64 {
    0.03
}

impl Condition {
    pub fn target_centers(&self) -> (f64, f64) {
        let h = self.target_distance / 2.0;
        (self.target_midpoint - h, self.target_midpoint + h)
    }
}

/// Role tag of each participant, e.g. `synch` / `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub a: String,
    pub b: String,
}

impl Default for Roles {
    fn default() -> Self {
        Roles {
            a: "a".into(),
            b: "b".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: String,
    pub dyad_id: String,
    pub condition: Condition,
    pub roles: Roles,
    pub masses: MassConfig,
    pub position: Channel,
    pub s1: Channel,
    pub s2: Channel,
    /// Beat event times, s, strictly increasing.
    pub beats: Vec<f64>,
}

impl TrialRecord {
    pub fn fs(&self) -> f64 {
        self.s1.fs()
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }
}

/// Known coupling of a simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub direction: Option<Direction>,
    pub band: (f64, f64),
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub mass: f64,
    pub sex: Sex,
}

/// Either explicit hand+forearm masses or body specs resolved through the
/// segment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassSpec {
    Explicit(MassConfig),
    Bodies { slider: f64, a: BodySpec, b: BodySpec },
}

impl MassSpec {
    pub fn resolve(&self, table: &CoefficientTable) -> Result<MassConfig> {
        match self {
            MassSpec::Explicit(m) => {
                m.validate()?;
                Ok(*m)
            }
            MassSpec::Bodies { slider, a, b } => MassConfig::new(
                *slider,
                table.hand_forearm_mass(a.mass, a.sex)?,
                table.hand_forearm_mass(b.mass, b.sex)?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    pub dyad: String,
    pub condition: Condition,
    #[serde(default)]
    pub roles: Roles,
    pub masses: MassSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Sampling rate of every trial file, Hz.
    pub fs: f64,
    #[serde(default = "default_expected_beats")]
    pub expected_beats: usize,
    #[serde(default, rename = "trial")]
    pub trials: Vec<TrialEntry>,
}

fn default_expected_beats() -> usize {
    DEFAULT_EXPECTED_BEATS
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        if !(m.fs.is_finite() && m.fs > 0.0) {
            return Err(Error::Config(format!("manifest fs must be positive, got {}", m.fs)));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Parsed trial CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialColumns {
    pub t: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub pos: Vec<f64>,
    pub beat: Vec<bool>,
}

pub fn parse_trial_csv(text: &str) -> Result<TrialColumns> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, column: "header".into(), message: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != TRIAL_HEADER {
        return Err(Error::Parse {
            line: 1,
            column: "header".into(),
            message: format!("expected {}", TRIAL_HEADER.join(",")),
        });
    }
    let mut cols = TrialColumns { t: vec![], s1: vec![], s2: vec![], pos: vec![], beat: vec![] };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, column: "row".into(), message: e.to_string() })?;
        if rec.len() != TRIAL_HEADER.len() {
            return Err(Error::Parse {
                line,
                column: "row".into(),
                message: format!("expected {} fields, found {}", TRIAL_HEADER.len(), rec.len()),
            });
        }
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            let cell = &rec[k];
            *v = cell
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: TRIAL_HEADER[k].into(),
                    message: format!("not a finite number: {cell:?}"),
                })?;
        }
        let beat = match &rec[4] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    column: "beat".into(),
                    message: format!("expected 0 or 1, found {other:?}"),
                })
            }
        };
        cols.t.push(vals[0]);
        cols.s1.push(vals[1]);
        cols.s2.push(vals[2]);
        cols.pos.push(vals[3]);
        cols.beat.push(beat);
    }
    if cols.t.len() < 2 {
        return Err(Error::NoData("trial file has fewer than two rows".into()));
    }
    Ok(cols)
}

pub fn write_trial_csv(trial: &TrialRecord) -> String {
    let fs = trial.fs();
    let mut beat_idx = trial.beats.iter().map(|b| (b * fs).round() as usize).peekable();
    let mut out = String::with_capacity(trial.len() * 48);
    out.push_str(&TRIAL_HEADER.join(","));
    out.push('\n');
    for i in 0..trial.len() {
        let beat = if beat_idx.peek() == Some(&i) {
            beat_idx.next();
            1
        } else {
            0
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i as f64 / fs,
            trial.s1.samples()[i],
            trial.s2.samples()[i],
            trial.position.samples()[i],
            beat
        ));
    }
    out
}

/// Build a record from parsed columns, checking the time base against `fs`.
pub fn trial_from_columns(cols: TrialColumns, entry: &TrialEntry, fs: f64, masses: MassConfig) -> Result<TrialRecord> {
    let dt = 1.0 / fs;
    for (i, w) in cols.t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(Error::Config(format!(
                "{}: sample interval {} at row {} does not match fs = {fs}",
                entry.file,
                w[1] - w[0],
                i + 3
            )));
        }
    }
    let beats = cols
        .t
        .iter()
        .zip(&cols.beat)
        .filter(|(_, b)| **b)
        .map(|(t, _)| t - cols.t[0])
        .collect();
    let id = Path::new(&entry.file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| entry.file.clone());
    Ok(TrialRecord {
        id,
        dyad_id: entry.dyad.clone(),
        condition: entry.condition.clone(),
        roles: entry.roles.clone(),
        masses,
        position: Channel::new(cols.pos, fs, "pos")?,
        s1: Channel::new(cols.s1, fs, "S1")?,
        s2: Channel::new(cols.s2, fs, "S2")?,
        beats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestIssue {
    pub file: String,
    pub dyad: String,
    pub error: Error,
}

/// Result of reading a session directory. Per-file failures are collected
/// rather than aborting the whole session.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<IngestIssue>,
    pub warnings: Vec<String>,
}

pub fn ingest_entry(dir: &Path, manifest: &Manifest, entry: &TrialEntry, table: &CoefficientTable) -> Result<(TrialRecord, Option<String>)> {
    let path: PathBuf = dir.join(&entry.file);
    let text = fs::read_to_string(&path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    let cols = parse_trial_csv(&text).map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", entry.file),
        },
        other => other,
    })?;
    let masses = entry.masses.resolve(table)?;
    let trial = trial_from_columns(cols, entry, manifest.fs, masses)?;
    let warning = (trial.beats.len() != manifest.expected_beats).then(|| {
        format!(
            "{}: {} beats, expected {}",
            entry.file,
            trial.beats.len(),
            manifest.expected_beats
        )
    });
    Ok((trial, warning))
}

pub fn ingest(dir: &Path, table: &CoefficientTable) -> Result<Session> {
    let manifest = Manifest::load(dir)?;
    let mut session = Session::default();
    for entry in &manifest.trials {
        match ingest_entry(dir, &manifest, entry, table) {
            Ok((t, w)) => {
                if let Some(w) = w {
                    warn!("{w}");
                    session.warnings.push(w);
                }
                session.trials.push(t);
            }
            Err(error) => session.failures.push(IngestIssue {
                file: entry.file.clone(),
                dyad: entry.dyad.clone(),
                error,
            }),
        }
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> TrialEntry {
        TrialEntry {
            file: "d1_t0.csv".into(),
            dyad: "d1".into(),
            condition: Condition {
                label: "medium".into(),
                target_distance: 0.2,
                target_width: 0.03,
                target_midpoint: 0.0,
                metronome_period: 1.0,
            },
            roles: Roles::default(),
            masses: MassSpec::Explicit(MassConfig { slider: 5.0, m1: 1.5, m2: 1.7 }),
            seed: Some(3),
            truth: None,
        }
    }

    fn record() -> TrialRecord {
        let fs = 100.0;
        let n = 250;
        let wave = |k: f64| (0..n).map(|i| (i as f64 * k).sin() * 3.1 + 0.1).collect::<Vec<_>>();
        TrialRecord {
            id: "d1_t0".into(),
            dyad_id: "d1".into(),
            condition: entry().condition,
            roles: Roles::default(),
            masses: MassConfig { slider: 5.0, m1: 1.5, m2: 1.7 },
            position: Channel::new(wave(0.013), fs, "pos").unwrap(),
            s1: Channel::new(wave(0.37), fs, "S1").unwrap(),
            s2: Channel::new(wave(0.91), fs, "S2").unwrap(),
            beats: vec![0.5, 1.0, 1.5, 2.0],
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let r = record();
        let text = write_trial_csv(&r);
        let cols = parse_trial_csv(&text).unwrap();
        let back = trial_from_columns(cols, &entry(), 100.0, r.masses).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let text = "t_s,s1_n,s2_n,pos_m,beat\n0,1,2,3,0\n0.01,1,abc,3,0\n";
        match parse_trial_csv(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "s2_n");
            }
            other => panic!("{other:?}"),
        }
        let nan = "t_s,s1_n,s2_n,pos_m,beat\n0,1,2,3,0\n0.01,NaN,2,3,0\n";
        assert!(matches!(parse_trial_csv(nan), Err(Error::Parse { line: 3, .. })));
        let hdr = "t,s1,s2,pos,beat\n0,1,2,3,0\n";
        assert!(matches!(parse_trial_csv(hdr), Err(Error::Parse { line: 1, .. })));
        let beat = "t_s,s1_n,s2_n,pos_m,beat\n0,1,2,3,2\n0.01,1,2,3,0\n";
        assert!(matches!(parse_trial_csv(beat), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn fs_mismatch_is_config_error() {
        let text = write_trial_csv(&record());
        let cols = parse_trial_csv(&text).unwrap();
        assert!(matches!(
            trial_from_columns(cols, &entry(), 500.0, record().masses),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_round_trip_and_body_masses() {
        let mut e = entry();
        e.masses = MassSpec::Bodies {
            slider: 5.0,
            a: BodySpec { mass: 70.0, sex: Sex::Male },
            b: BodySpec { mass: 60.0, sex: Sex::Female },
        };
        e.truth = Some(GroundTruth { direction: Some(Direction::AtoB), band: (2.15, 7.0), gain: 0.8 });
        let m = Manifest { fs: 500.0, expected_beats: 20, trials: vec![entry(), e] };
        let text = m.to_toml().unwrap();
        let back = Manifest::from_toml(&text).unwrap();
        assert_eq!(back, m);
        let resolved = back.trials[1].masses.resolve(&CoefficientTable::de_leva()).unwrap();
        assert!((resolved.m1 - 70.0 * (0.0061 + 0.0162)).abs() < 1e-12);
        assert!(matches!(Manifest::from_toml("fs = -1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn ingest_collects_failures_and_beat_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let r = record();
        fs::write(dir.path().join("d1_t0.csv"), write_trial_csv(&r)).unwrap();
        fs::write(dir.path().join("bad.csv"), "t_s,s1_n,s2_n,pos_m,beat\n0,x,1,1,0\n").unwrap();
        let mut bad = entry();
        bad.file = "bad.csv".into();
        let m = Manifest { fs: 100.0, expected_beats: 20, trials: vec![entry(), bad] };
        fs::write(dir.path().join(MANIFEST_FILE), m.to_toml().unwrap()).unwrap();
        let s = ingest(dir.path(), &CoefficientTable::de_leva()).unwrap();
        assert_eq!(s.trials.len(), 1);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].contains("4 beats, expected 20"));
    }
}
