//! Seeded end-to-end fixtures.
//!
//! A fixture is a directory holding `fixture.toml`: the simulator settings,
//! the pipeline config, outcome expectations and SHA-256 digests of every
//! generated input file and every CSV report. Inputs are regenerated from
//! the recorded seed on each verification, so no data files are stored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::force::CoefficientTable;
use crate::io::{ingest, write_trial_csv, MANIFEST_FILE};
use crate::pipeline::{analyze_session, io_err, AnalysisReport, PipelineConfig, REPORT_CSVS};
use crate::sim::{session_manifest, simulate_session, SimConfig};

pub const FIXTURE_FILE: &str = "fixture.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    /// Minimum number of dyads with a positive high-band delta.
    pub positive_delta_min: Option<usize>,
    /// Maximum number of dyads whose high-band A->B integral exceeds the
    /// threshold integral.
    pub significant_ab_max: Option<usize>,
    pub significant_ba_max: Option<usize>,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub description: String,
    pub dyads: usize,
    pub trials_per_dyad: usize,
    pub sim: SimConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub expect: Expectations,
    /// Relative path (`input/...` or `report/...`) to lowercase hex SHA-256.
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
}

impl FixtureSpec {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FIXTURE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::NotFound(format!("fixture {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(FIXTURE_FILE);
        fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileStatus {
    Match,
    Mismatch { expected: String, actual: String },
    /// Expected but not produced.
    Missing { expected: String },
    /// Produced but not listed in the fixture.
    Unexpected { actual: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileCheck {
    pub path: String,
    pub status: FileStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct FixtureReport {
    pub id: String,
    pub files: Vec<FileCheck>,
    pub expectations: Vec<ExpectationCheck>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.files.iter().all(|f| f.status == FileStatus::Match) && self.expectations.iter().all(|e| e.passed)
    }

    /// One line per differing file or failed expectation.
    pub fn diff(&self) -> Vec<String> {
        let files = self.files.iter().filter_map(|f| match &f.status {
            FileStatus::Match => None,
            FileStatus::Mismatch { expected, actual } => {
                Some(format!("{}: digest {actual} != expected {expected}", f.path))
            }
            FileStatus::Missing { expected } => Some(format!("{}: missing (expected {expected})", f.path)),
            FileStatus::Unexpected { actual } => Some(format!("{}: not in fixture (digest {actual})", f.path)),
        });
        let exps = self
            .expectations
            .iter()
            .filter(|e| !e.passed)
            .map(|e| format!("{}: {}", e.name, e.detail));
        files.chain(exps).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulated session written to `dir` as trial CSVs plus the manifest.
pub fn write_session(spec_sim: &SimConfig, dyads: usize, trials: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let sims = simulate_session(spec_sim, dyads, trials)?;
    let manifest = session_manifest(spec_sim, &sims);
    let mut written = Vec::new();
    for (t, entry) in sims.iter().zip(&manifest.trials) {
        let p = dir.join(&entry.file);
        fs::write(&p, write_trial_csv(&t.record)).map_err(io_err(&p))?;
        written.push(p);
    }
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, manifest.to_toml()?).map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}

fn digest_files(root: &Path, prefix: &str, files: &[PathBuf], out: &mut BTreeMap<String, String>) -> Result<()> {
    for f in files {
        let bytes = fs::read(f).map_err(|e| Error::Io(format!("{}: {e}", f.display())))?;
        let rel = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        out.insert(format!("{prefix}/{rel}"), sha256_hex(&bytes));
    }
    Ok(())
}

fn report_csvs(report: &AnalysisReport, dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = REPORT_CSVS.iter().map(|f| dir.join(f)).collect();
    v.extend(report.dyads.iter().map(|d| dir.join("spectra").join(format!("{}.csv", d.dyad_id))));
    v
}

/// Regenerates the fixture's inputs in `work`, runs the analysis and returns
/// the report with digests of every input file and report CSV.
pub fn run_fixture(spec: &FixtureSpec, work: &Path) -> Result<(AnalysisReport, BTreeMap<String, String>)> {
    let input = work.join("input");
    let out = work.join("report");
    let inputs = write_session(&spec.sim, spec.dyads, spec.trials_per_dyad, &input)?;
    let table = match &spec.pipeline.coefficient_table {
        Some(p) => CoefficientTable::from_path(p)?,
        None => CoefficientTable::de_leva(),
    };
    let session = ingest(&input, &table)?;
    let report = analyze_session(&session, &spec.pipeline)?;
    report.write(&out)?;
    let mut digests = BTreeMap::new();
    digest_files(&input, "input", &inputs, &mut digests)?;
    digest_files(&out, "report", &report_csvs(&report, &out), &mut digests)?;
    Ok((report, digests))
}

fn check_expectations(exp: &Expectations, report: &AnalysisReport) -> Vec<ExpectationCheck> {
    let high: Vec<_> = report.dyads.iter().filter_map(|d| d.influence.get(1)).collect();
    let q = report
        .bands
        .as_ref()
        .zip(report.threshold.as_ref())
        .and_then(|(b, t)| t.band_integral(b.boundaries.f1, b.boundaries.f2).ok());
    let count = |f: &dyn Fn(&crate::ggc::BandInfluence, f64) -> bool| q.map(|q| high.iter().filter(|b| f(b, q)).count());
    let mut out = Vec::new();
    if let Some(min) = exp.positive_delta_min {
        let n = high.iter().filter(|b| b.delta > 0.0).count();
        out.push(ExpectationCheck {
            name: "positive_delta_min".into(),
            passed: n >= min,
            detail: format!("{n} dyads with positive high-band delta, need >= {min}"),
        });
    }
    for (name, max, n) in [
        ("significant_ab_max", exp.significant_ab_max, count(&|b, q| b.integral_ab > q)),
        ("significant_ba_max", exp.significant_ba_max, count(&|b, q| b.integral_ba > q)),
    ] {
        if let Some(max) = max {
            out.push(ExpectationCheck {
                name: name.into(),
                passed: n.is_some_and(|n| n <= max),
                detail: match n {
                    Some(n) => format!("{n} dyads above the threshold integral, allowed <= {max}"),
                    None => "no threshold or bands in the report".into(),
                },
            });
        }
    }
    if let Some(code) = exp.exit_code {
        out.push(ExpectationCheck {
            name: "exit_code".into(),
            passed: report.exit_code() == code,
            detail: format!("exit code {}, expected {code}", report.exit_code()),
        });
    }
    out
}

fn fixture_dir(root: &Path, id: &str) -> Result<PathBuf> {
    let dir = root.join(id);
    if !dir.join(FIXTURE_FILE).is_file() {
        return Err(Error::NotFound(format!("fixture '{id}' under {}", root.display())));
    }
    Ok(dir)
}

fn scratch() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| Error::Io(e.to_string()))
}

/// Reruns fixture `id` from `root` and compares every digest and
/// expectation.
pub fn verify_fixture(root: &Path, id: &str) -> Result<FixtureReport> {
    let spec = FixtureSpec::load(&fixture_dir(root, id)?)?;
    let work = scratch()?;
    let (report, actual) = run_fixture(&spec, work.path())?;
    let mut files = Vec::new();
    for (path, expected) in &spec.digests {
        let status = match actual.get(path) {
            Some(a) if a == expected => FileStatus::Match,
            Some(a) => FileStatus::Mismatch {
                expected: expected.clone(),
                actual: a.clone(),
            },
            None => FileStatus::Missing {
                expected: expected.clone(),
            },
        };
        files.push(FileCheck { path: path.clone(), status });
    }
    for (path, a) in &actual {
        if !spec.digests.contains_key(path) {
            files.push(FileCheck {
                path: path.clone(),
                status: FileStatus::Unexpected { actual: a.clone() },
            });
        }
    }
    Ok(FixtureReport {
        id: id.into(),
        files,
        expectations: check_expectations(&spec.expect, &report),
    })
}

/// Recomputes and stores the digests of fixture `id`.
pub fn update_fixture(root: &Path, id: &str) -> Result<usize> {
    let dir = fixture_dir(root, id)?;
    let mut spec = FixtureSpec::load(&dir)?;
    let work = scratch()?;
    let (_, digests) = run_fixture(&spec, work.path())?;
    spec.digests = digests;
    spec.save(&dir)?;
    Ok(spec.digests.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::BandConfig;

    fn tiny() -> FixtureSpec {
        FixtureSpec {
            description: "tiny".into(),
            dyads: 3,
            trials_per_dyad: 2,
            sim: SimConfig {
                coupling_gain: 0.8,
                seed: 5,
                ..Default::default()
            },
            pipeline: PipelineConfig {
                surrogate: crate::pipeline::SurrogateConfig { n_perm: 20, seed: 1 },
                bands: BandConfig::Fixed { f1: 2.15, f2: 7.0 },
                var: crate::pipeline::VarConfig {
                    fixed_p: Some(6),
                    ..Default::default()
                },
                ..Default::default()
            },
            expect: Expectations {
                positive_delta_min: Some(3),
                ..Default::default()
            },
            digests: BTreeMap::new(),
        }
    }

    #[test]
    fn missing_fixture_is_not_found() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(verify_fixture(root.path(), "nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn update_then_verify_then_corrupt() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("tiny");
        fs::create_dir_all(&dir).unwrap();
        let spec = tiny();
        spec.save(&dir).unwrap();
        assert_eq!(FixtureSpec::load(&dir).unwrap(), spec);

        let n = update_fixture(root.path(), "tiny").unwrap();
        // 6 trials + manifest, 8 tables + 3 spectra.
        assert_eq!(n, 7 + 8 + 3);
        let r = verify_fixture(root.path(), "tiny").unwrap();
        assert!(r.passed(), "{:?}", r.diff());

        let mut spec = FixtureSpec::load(&dir).unwrap();
        spec.digests.insert("report/summary.csv".into(), "0".repeat(64));
        spec.digests.remove("report/stats.csv");
        spec.expect.significant_ab_max = Some(0);
        spec.save(&dir).unwrap();
        let r = verify_fixture(root.path(), "tiny").unwrap();
        assert!(!r.passed());
        let diff = r.diff();
        assert_eq!(diff.len(), 3, "{diff:?}");
        assert!(diff[0].starts_with("report/summary.csv: digest"));
        assert!(diff[1].starts_with("report/stats.csv: not in fixture"));
        assert!(diff[2].starts_with("significant_ab_max"));
    }
}
