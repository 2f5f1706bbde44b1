//! End-to-end analysis: preprocessing, force reconstruction, causality
//! spectra, permutation threshold, band edges, statistics and behavior.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{
    exclusion_filter, force_summaries, summarize, trial_performance, ExclusionOutcome, Participant,
    ParticipantForce, PeNormalizer, PerformanceSummary, TrialPerformance,
};
use crate::error::{Error, Result};
use crate::estimate::{GgcEstimator, OrderSelection, SpectralMethod};
use crate::force::{reconstruct_forces, ForcePair};
use crate::ggc::{band_boundaries, delta_influence, BandBoundaries, BandInfluence, BoundaryEstimate, Designation, GgcSpectrum};
use crate::io::{Session, TrialRecord};
use crate::signal::{butterworth_lowpass_dualpass, decimate, epoch_split, DEFAULT_PROMINENCE_FRACTION};
use crate::stats::{gated_compare, gated_one_sample, ks_two_sample, pearson, TestResult};
use crate::surrogate::{permutation_null, significance_mask, Individual, NullThreshold, DEFAULT_N_PERM};
use crate::svg::spectrum_svg;
use crate::var::{DEFAULT_FREQ_STEP_HZ, DEFAULT_MAX_ORDER};

pub const TOOL_NAME: &str = "dyad-ggc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub fc: f64,
    pub order: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { fc: 10.0, order: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarConfig {
    pub p_max: usize,
    /// Skips order selection when set.
    pub fixed_p: Option<usize>,
    pub method: SpectralMethod,
}

impl Default for VarConfig {
    fn default() -> Self {
        VarConfig {
            p_max: DEFAULT_MAX_ORDER,
            fixed_p: None,
            method: SpectralMethod::Parametric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub step: f64,
    /// Defaults to the Nyquist frequency of the downsampled data.
    pub max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            step: DEFAULT_FREQ_STEP_HZ,
            max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n_perm: DEFAULT_N_PERM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandConfig {
    #[default]
    Auto,
    Fixed { f1: f64, f2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub downsample_fs: f64,
    pub epochs_per_trial: usize,
    pub var: VarConfig,
    pub freq_grid: GridConfig,
    pub surrogate: SurrogateConfig,
    pub bands: BandConfig,
    /// CSV of segment mass fractions; the bundled table when unset.
    pub coefficient_table: Option<PathBuf>,
    pub normalizer: PeNormalizer,
    pub apply_exclusion: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter: FilterConfig::default(),
            downsample_fs: 25.0,
            epochs_per_trial: 3,
            var: VarConfig::default(),
            freq_grid: GridConfig::default(),
            surrogate: SurrogateConfig::default(),
            bands: BandConfig::Auto,
            coefficient_table: None,
            normalizer: PeNormalizer::TargetDistance,
            apply_exclusion: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative coefficient table path
    /// is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(t), Some(dir)) = (&cfg.coefficient_table, path.parent()) {
            if t.is_relative() {
                cfg.coefficient_table = Some(dir.join(t));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.downsample_fs > 0.0) {
            return bad(format!("downsample_fs must be positive, got {}", self.downsample_fs));
        }
        if !(self.filter.fc > 0.0 && self.filter.fc < self.downsample_fs / 2.0) {
            return bad(format!(
                "filter cutoff {} Hz must lie below the downsampled Nyquist frequency {} Hz",
                self.filter.fc,
                self.downsample_fs / 2.0
            ));
        }
        if self.filter.order == 0 || self.epochs_per_trial == 0 {
            return bad("filter order and epochs_per_trial must be at least 1".into());
        }
        if self.var.p_max == 0 || self.var.fixed_p == Some(0) {
            return bad("VAR order must be at least 1".into());
        }
        if !(self.freq_grid.step > 0.0) || self.freq_grid.max.is_some_and(|m| !(m > 0.0)) {
            return bad("frequency grid step and max must be positive".into());
        }
        if self.surrogate.n_perm == 0 {
            return bad("surrogate.n_perm must be at least 1".into());
        }
        if let BandConfig::Fixed { f1, f2 } = self.bands {
            BandBoundaries::new(f1, f2)?;
        }
        if let Some(t) = &self.coefficient_table {
            if !t.is_file() {
                return Err(Error::NotFound(format!("coefficient table {}", t.display())));
            }
        }
        Ok(())
    }

    pub fn estimator(&self) -> GgcEstimator {
        GgcEstimator {
            order: match self.var.fixed_p {
                Some(p) => OrderSelection::Fixed(p),
                None => OrderSelection::Aic { max_order: self.var.p_max },
            },
            method: self.var.method,
            freq_step: self.freq_grid.step,
            freq_max: self.freq_grid.max,
            ..GgcEstimator::default()
        }
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the trial data and metadata in the given order.
pub fn trials_sha256(trials: &[TrialRecord]) -> String {
    let mut h = Sha256::new();
    for t in trials {
        for s in [&t.id, &t.dyad_id, &t.condition.label, &t.roles.a, &t.roles.b] {
            h.update(s.as_bytes());
            h.update([0u8]);
        }
        let c = &t.condition;
        let meta = [
            c.target_distance,
            c.target_width,
            c.target_midpoint,
            c.metronome_period,
            t.masses.slider,
            t.masses.m1,
            t.masses.m2,
            t.fs(),
        ];
        for ch in [&meta[..], t.s1.samples(), t.s2.samples(), t.position.samples(), &t.beats] {
            h.update((ch.len() as u64).to_le_bytes());
            for v in ch {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadFailure {
    /// `*` for stages that span all dyads.
    pub dyad_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadResult {
    pub dyad_id: String,
    pub trials: usize,
    pub order: Option<usize>,
    pub spectrum: GgcSpectrum,
    pub influence: Vec<BandInfluence>,
    /// Per-bin exceedance of the threshold, `(A->B, B->A)`.
    pub significant: Option<(Vec<bool>, Vec<bool>)>,
    pub excluded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSource {
    Auto,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub boundaries: BandBoundaries,
    pub source: BandSource,
    pub estimate: Option<BoundaryEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub result: Option<TestResult>,
    /// Why the test could not run.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub input_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub elapsed_ms: f64,
    pub status: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config: PipelineConfig,
    pub dyads: Vec<DyadResult>,
    pub threshold: Option<NullThreshold>,
    pub bands: Option<Bands>,
    pub performance: Vec<PerformanceSummary>,
    pub exclusion: ExclusionOutcome,
    pub forces: Vec<ParticipantForce>,
    pub tests: Vec<NamedTest>,
    pub failures: Vec<DyadFailure>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
    pub log: Vec<StageRecord>,
}

/// Preprocessed trial: filtered full-rate forces and downsampled epochs.
struct Prepared {
    record: TrialRecord,
    forces: ForcePair,
    epochs_a: Vec<Vec<f64>>,
    epochs_b: Vec<Vec<f64>>,
    fs: f64,
}

fn prepare(trial: &TrialRecord, cfg: &PipelineConfig) -> Result<Prepared> {
    let lp = |c| butterworth_lowpass_dualpass(c, cfg.filter.fc, cfg.filter.order);
    let s1 = lp(&trial.s1)?;
    let s2 = lp(&trial.s2)?;
    let forces = reconstruct_forces(&s1, &s2, &trial.masses)?;
    let mut record = trial.clone();
    record.position = lp(&trial.position)?;
    let split = |c| -> Result<Vec<Vec<f64>>> {
        let d = decimate(c, cfg.downsample_fs)?;
        Ok(epoch_split(&d, cfg.epochs_per_trial, &trial.id)?
            .into_iter()
            .map(|e| e.samples)
            .collect())
    };
    Ok(Prepared {
        epochs_a: split(&forces.f1)?,
        epochs_b: split(&forces.f2)?,
        fs: cfg.downsample_fs,
        record,
        forces,
    })
}

fn individuals(dyad: &str, prepared: &[Prepared], fs: f64) -> [Individual; 2] {
    let collect = |f: fn(&Prepared) -> &Vec<Vec<f64>>| prepared.iter().flat_map(f).cloned().collect::<Vec<_>>();
    [
        Individual {
            id: format!("{dyad}:A"),
            dyad: dyad.to_string(),
            fs,
            epochs: collect(|p| &p.epochs_a),
        },
        Individual {
            id: format!("{dyad}:B"),
            dyad: dyad.to_string(),
            fs,
            epochs: collect(|p| &p.epochs_b),
        },
    ]
}

/// Permutation threshold alone: every trial is preprocessed as in
/// [`run_analysis`] and all participants enter the pool.
pub fn null_threshold(trials: &[TrialRecord], cfg: &PipelineConfig) -> Result<NullThreshold> {
    cfg.validate()?;
    let mut by_dyad: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        by_dyad.entry(&t.dyad_id).or_default().push(t);
    }
    let pool = by_dyad
        .par_iter()
        .map(|(id, ts)| {
            let mut ts = ts.clone();
            ts.sort_by(|a, b| a.id.cmp(&b.id));
            let prepared = ts.iter().map(|t| prepare(t, cfg)).collect::<Result<Vec<_>>>()?;
            Ok(individuals(id, &prepared, cfg.downsample_fs))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    permutation_null(pool, cfg.surrogate.n_perm, cfg.surrogate.seed, &cfg.estimator())
}

/// Shaded regions of a plot: the low band from the grid start to `f1` and
/// the high band up to `f2`.
fn plot_bands(freqs: &[f64], bounds: Option<BandBoundaries>) -> Vec<(f64, f64)> {
    match (freqs.first(), bounds) {
        (Some(&start), Some(b)) => vec![(start, b.f1), (b.f1, b.f2)],
        _ => Vec::new(),
    }
}

fn parse_cell<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path, line: usize) -> Result<Option<T>> {
    let cell = rec.get(i).unwrap_or("");
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Parse {
        line,
        column: i.to_string(),
        message: format!("{}: cannot parse '{cell}'", path.display()),
    })
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        column: String::new(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Redraws `plots/<dyad>.svg` from the CSV tables of a report directory.
/// Returns the number of plots written.
pub fn render_plots(dir: &Path) -> Result<usize> {
    let bpath = dir.join("boundaries.csv");
    let bounds = match read_rows(&bpath)?.first() {
        Some(r) => match (parse_cell(r, 0, &bpath, 2)?, parse_cell(r, 1, &bpath, 2)?) {
            (Some(f1), Some(f2)) => Some(BandBoundaries { f1, f2 }),
            _ => None,
        },
        None => None,
    };
    let spectra = dir.join("spectra");
    let mut files: Vec<PathBuf> = fs::read_dir(&spectra)
        .map_err(|e| Error::NotFound(format!("{}: {e}", spectra.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    for f in &files {
        let mut spec = GgcSpectrum {
            freqs: Vec::new(),
            i_ab: Vec::new(),
            i_ba: Vec::new(),
        };
        let mut q99 = Vec::new();
        for (i, r) in read_rows(f)?.iter().enumerate() {
            let line = i + 2;
            let req = |c| -> Result<f64> {
                parse_cell(r, c, f, line)?.ok_or_else(|| Error::Parse {
                    line,
                    column: c.to_string(),
                    message: format!("{}: empty cell", f.display()),
                })
            };
            spec.freqs.push(req(0)?);
            spec.i_ab.push(req(1)?);
            spec.i_ba.push(req(2)?);
            if let Some(q) = parse_cell::<f64>(r, 3, f, line)? {
                q99.push(q);
            }
        }
        let dyad = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let q = (q99.len() == spec.freqs.len()).then_some(q99.as_slice());
        let svg = spectrum_svg(&format!("Dyad {dyad}"), &spec, q, &plot_bands(&spec.freqs, bounds));
        let p = plots.join(format!("{dyad}.svg"));
        fs::write(&p, svg).map_err(io_err(&p))?;
    }
    Ok(files.len())
}

struct DyadWork {
    id: String,
    prepared: Vec<Prepared>,
    performance: Vec<TrialPerformance>,
    order: Option<usize>,
    spectrum: GgcSpectrum,
}

fn analyze_dyad(id: &str, trials: &[&TrialRecord], cfg: &PipelineConfig, est: &GgcEstimator) -> std::result::Result<DyadWork, DyadFailure> {
    let fail = |stage: &str, e: Error| DyadFailure {
        dyad_id: id.to_string(),
        stage: stage.into(),
        error: e.to_string(),
    };
    let prepared = trials
        .iter()
        .map(|t| prepare(t, cfg))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| fail("preprocess", e))?;
    let performance = prepared
        .iter()
        .map(|p| trial_performance(&p.record, cfg.normalizer))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| fail("behavior", e))?;
    let epochs: Vec<_> = prepared
        .iter()
        .flat_map(|p| {
            p.epochs_a.iter().zip(&p.epochs_b).enumerate().map(|(i, (a, b))| {
                let mut e = crate::var::BivariateEpoch::new(a.clone(), b.clone(), p.fs);
                e.parent_trial = p.record.id.clone();
                e.window_index = i;
                e
            })
        })
        .collect();
    let estimate = est.estimate(&epochs).map_err(|e| fail("ggc", e))?;
    Ok(DyadWork {
        id: id.to_string(),
        order: estimate.model.as_ref().map(|m| m.order()),
        spectrum: estimate.spectrum,
        prepared,
        performance,
    })
}

struct StageClock {
    log: Vec<StageRecord>,
}

impl StageClock {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> (T, String, bool)) -> T {
        let start = Instant::now();
        let (out, detail, ok) = f();
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        info!("{stage}: {detail} ({elapsed_ms:.1} ms)");
        self.log.push(StageRecord {
            stage: stage.into(),
            elapsed_ms,
            status: if ok { "ok" } else { "error" }.into(),
            detail,
        });
        out
    }
}

fn named(name: &str, r: Result<TestResult>) -> NamedTest {
    match r {
        Ok(r) => NamedTest {
            name: name.into(),
            result: Some(r),
            note: None,
        },
        Err(e) => NamedTest {
            name: name.into(),
            result: None,
            note: Some(e.to_string()),
        },
    }
}

/// Runs the whole analysis on in-memory trials. Per-dyad failures are
/// recorded and the remaining dyads carry on.
pub fn run_analysis(trials: &[TrialRecord], cfg: &PipelineConfig) -> Result<AnalysisReport> {
    run_with_failures(trials, cfg, Vec::new(), Vec::new())
}

/// [`run_analysis`] on an ingested session; dyads with unreadable files are
/// reported as failed and left out.
pub fn analyze_session(session: &Session, cfg: &PipelineConfig) -> Result<AnalysisReport> {
    let broken: Vec<&str> = session.failures.iter().map(|f| f.dyad.as_str()).collect();
    let failures = session
        .failures
        .iter()
        .map(|f| DyadFailure {
            dyad_id: f.dyad.clone(),
            stage: "ingest".into(),
            error: format!("{}: {}", f.file, f.error),
        })
        .collect();
    let trials: Vec<TrialRecord> = session
        .trials
        .iter()
        .filter(|t| !broken.contains(&t.dyad_id.as_str()))
        .cloned()
        .collect();
    run_with_failures(&trials, cfg, failures, session.warnings.clone())
}

fn run_with_failures(
    trials: &[TrialRecord],
    cfg: &PipelineConfig,
    mut failures: Vec<DyadFailure>,
    mut warnings: Vec<String>,
) -> Result<AnalysisReport> {
    cfg.validate()?;
    if trials.is_empty() && failures.is_empty() {
        return Err(Error::NoData("no trials to analyze".into()));
    }
    let mut clock = StageClock { log: Vec::new() };
    let est = cfg.estimator();

    let mut by_dyad: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        by_dyad.entry(&t.dyad_id).or_default().push(t);
    }
    for list in by_dyad.values_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let work: Vec<DyadWork> = clock.run("dyads", || {
        let results: Vec<_> = by_dyad
            .par_iter()
            .map(|(id, ts)| analyze_dyad(id, ts, cfg, &est))
            .collect();
        let mut ok = Vec::new();
        for r in results {
            match r {
                Ok(w) => ok.push(w),
                Err(f) => {
                    warn!("dyad {} failed at {}: {}", f.dyad_id, f.stage, f.error);
                    failures.push(f);
                }
            }
        }
        let detail = format!("{} analyzed, {} failed", ok.len(), by_dyad.len() - ok.len());
        let clean = ok.len() == by_dyad.len();
        (ok, detail, clean)
    });

    let exclusion = clock.run("exclusion", || {
        let errors: Vec<(String, Vec<f64>)> = work
            .iter()
            .map(|w| (w.id.clone(), w.performance.iter().flat_map(|p| p.pe_values.iter().copied()).collect()))
            .collect();
        let out = if cfg.apply_exclusion {
            exclusion_filter(&errors)
        } else {
            ExclusionOutcome {
                retained: errors.iter().map(|e| e.0.clone()).collect(),
                ..Default::default()
            }
        };
        let detail = format!("{} retained, {} excluded", out.retained.len(), out.excluded.len());
        (out, detail, true)
    });
    warnings.extend(exclusion.notes.iter().cloned());
    let included: Vec<&DyadWork> = work.iter().filter(|w| exclusion.retained.contains(&w.id)).collect();

    let threshold = clock.run("surrogate", || {
        let pool: Vec<Individual> = included
            .iter()
            .flat_map(|w| individuals(&w.id, &w.prepared, cfg.downsample_fs))
            .collect();
        match permutation_null(pool, cfg.surrogate.n_perm, cfg.surrogate.seed, &est) {
            Ok(t) => {
                let detail = format!("{} surrogate spectra, seed {}", t.n_perm, t.seed);
                (Some(t), detail, true)
            }
            Err(e) => {
                failures.push(DyadFailure {
                    dyad_id: "*".into(),
                    stage: "surrogate".into(),
                    error: e.to_string(),
                });
                (None, e.to_string(), false)
            }
        }
    });

    let bands = clock.run("bands", || {
        let r = match cfg.bands {
            BandConfig::Fixed { f1, f2 } => BandBoundaries::new(f1, f2).map(|b| Bands {
                boundaries: b,
                source: BandSource::Fixed,
                estimate: None,
            }),
            BandConfig::Auto => match &threshold {
                None => Err(Error::NoData("automatic band edges need the surrogate threshold".into())),
                Some(thr) => {
                    let spectra: Vec<(String, GgcSpectrum)> = included.iter().map(|w| (w.id.clone(), w.spectrum.clone())).collect();
                    band_boundaries(&spectra, &vec![Designation::Stronger; spectra.len()], thr).map(|e| Bands {
                        boundaries: e.boundaries,
                        source: BandSource::Auto,
                        estimate: Some(e),
                    })
                }
            },
        };
        match r {
            Ok(b) => {
                let detail = format!("f1 {} Hz, f2 {} Hz", b.boundaries.f1, b.boundaries.f2);
                (Some(b), detail, true)
            }
            Err(e) => {
                failures.push(DyadFailure {
                    dyad_id: "*".into(),
                    stage: "bands".into(),
                    error: e.to_string(),
                });
                (None, e.to_string(), false)
            }
        }
    });
    if let Some(e) = bands.as_ref().and_then(|b| b.estimate.as_ref()) {
        warnings.extend(e.warnings.iter().cloned());
    }

    let dyads: Vec<DyadResult> = clock.run("influence", || {
        let mut out = Vec::new();
        let mut ok = true;
        for w in &work {
            let influence = match &bands {
                Some(b) => match delta_influence(&w.spectrum, &b.boundaries) {
                    Ok(i) => i,
                    Err(e) => {
                        ok = false;
                        failures.push(DyadFailure {
                            dyad_id: w.id.clone(),
                            stage: "influence".into(),
                            error: e.to_string(),
                        });
                        Vec::new()
                    }
                },
                None => Vec::new(),
            };
            out.push(DyadResult {
                dyad_id: w.id.clone(),
                trials: w.prepared.len(),
                order: w.order,
                significant: threshold.as_ref().and_then(|t| significance_mask(&w.spectrum, t).ok()),
                spectrum: w.spectrum.clone(),
                influence,
                excluded: !exclusion.retained.contains(&w.id),
            });
        }
        let detail = format!("{} dyads", out.len());
        (out, detail, ok)
    });

    let performance: Vec<PerformanceSummary> =
        summarize(&work.iter().flat_map(|w| w.performance.iter().cloned()).collect::<Vec<_>>());

    let forces = clock.run("forces", || {
        let pairs: Vec<(&TrialRecord, &ForcePair)> =
            work.iter().flat_map(|w| w.prepared.iter().map(|p| (&p.record, &p.forces))).collect();
        let f = force_summaries(&pairs, DEFAULT_PROMINENCE_FRACTION);
        let detail = format!("{} participants", f.len());
        (f, detail, true)
    });

    let tests = clock.run("stats", || {
        let tests = run_tests(&dyads, &performance, &forces);
        let detail = format!("{} tests, {} skipped", tests.len(), tests.iter().filter(|t| t.result.is_none()).count());
        (tests, detail, true)
    });

    failures.sort_by(|a, b| (&a.dyad_id, &a.stage).cmp(&(&b.dyad_id, &b.stage)));
    let provenance = Provenance {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config_sha256: cfg.sha256()?,
        input_sha256: trials_sha256(trials),
        seed: cfg.surrogate.seed,
    };
    Ok(AnalysisReport {
        config: cfg.clone(),
        dyads,
        threshold,
        bands,
        performance,
        exclusion,
        forces,
        tests,
        failures,
        warnings,
        provenance,
        log: clock.log,
    })
}

fn run_tests(dyads: &[DyadResult], performance: &[PerformanceSummary], forces: &[ParticipantForce]) -> Vec<NamedTest> {
    let used: Vec<&DyadResult> = dyads.iter().filter(|d| !d.excluded && d.influence.len() == 2).collect();
    let col = |band: usize, f: fn(&BandInfluence) -> f64| used.iter().map(|d| f(&d.influence[band])).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (band, label) in [(0, "low"), (1, "high")] {
        let ab = col(band, |b| b.integral_ab);
        let ba = col(band, |b| b.integral_ba);
        out.push(named(&format!("{label}_band_ab_vs_ba"), gated_compare(&ab, &ba, true)));
        let delta = col(band, |b| b.delta);
        out.push(named(&format!("{label}_band_delta_vs_zero"), gated_one_sample(&delta, 0.0)));
    }
    let pe: BTreeMap<&str, f64> = performance
        .iter()
        .filter(|p| p.condition.is_none())
        .map(|p| (p.dyad_id.as_str(), p.pe_mean))
        .collect();
    let (deltas, pes): (Vec<f64>, Vec<f64>) = used
        .iter()
        .filter_map(|d| pe.get(d.dyad_id.as_str()).map(|p| (d.influence[1].delta, *p)))
        .unzip();
    out.push(named("high_band_delta_vs_pe", pearson(&deltas, &pes)));

    let kept: Vec<&str> = used.iter().map(|d| d.dyad_id.as_str()).collect();
    let side = |p: Participant| -> Vec<&ParticipantForce> {
        forces
            .iter()
            .filter(|f| f.participant == p && kept.contains(&f.dyad_id.as_str()))
            .collect()
    };
    let (fa, fb) = (side(Participant::A), side(Participant::B));
    let mean = |v: &[&ParticipantForce]| v.iter().map(|f| f.mean_abs).collect::<Vec<_>>();
    out.push(named("mean_force_a_vs_b", gated_compare(&mean(&fa), &mean(&fb), true)));
    let freqs = |v: &[&ParticipantForce]| v.iter().flat_map(|f| f.histogram.frequencies.iter().copied()).collect::<Vec<_>>();
    out.push(named("force_frequency_a_vs_b", ks_two_sample(&freqs(&fa), &freqs(&fb))));
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

/// File names of the CSV outputs, relative to the report directory.
pub const REPORT_CSVS: [&str; 8] = [
    "summary.csv",
    "bands.csv",
    "boundaries.csv",
    "threshold.csv",
    "stats.csv",
    "forces.csv",
    "failures.csv",
    "first_peaks.csv",
];

impl AnalysisReport {
    /// 0 when every dyad and stage succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }

    pub fn dyad(&self, id: &str) -> Option<&DyadResult> {
        self.dyads.iter().find(|d| d.dyad_id == id)
    }

    /// Writes CSV tables, per-dyad spectra and plots, the run log and the
    /// provenance record into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["", "spectra", "plots"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let excluded: Vec<&str> = self.exclusion.excluded.iter().map(|e| e.dyad_id.as_str()).collect();
        write_csv(
            dir.join("summary.csv"),
            &["dyad_id", "condition", "pe_mean", "pe_sd", "se_mean", "se_sd", "trials", "excluded"],
            self.performance.iter().map(|p| {
                vec![
                    p.dyad_id.clone(),
                    p.condition.clone().unwrap_or_else(|| "all".into()),
                    p.pe_mean.to_string(),
                    p.pe_sd.to_string(),
                    p.se_mean.to_string(),
                    p.se_sd.to_string(),
                    p.trials.to_string(),
                    excluded.contains(&p.dyad_id.as_str()).to_string(),
                ]
            }),
        )?;

        let band_names = ["low", "high"];
        let thr_integral = |lo: f64, hi: f64| self.threshold.as_ref().and_then(|t| t.band_integral(lo, hi).ok());
        write_csv(
            dir.join("bands.csv"),
            &[
                "dyad_id", "band", "f_lo", "f_hi", "integral_ab", "integral_ba", "delta", "threshold_integral",
                "significant_ab", "significant_ba", "order", "excluded",
            ],
            self.dyads.iter().flat_map(|d| {
                d.influence.iter().zip(band_names).map(move |(b, name)| {
                    let q = thr_integral(b.band.0, b.band.1);
                    vec![
                        d.dyad_id.clone(),
                        name.into(),
                        b.band.0.to_string(),
                        b.band.1.to_string(),
                        b.integral_ab.to_string(),
                        b.integral_ba.to_string(),
                        b.delta.to_string(),
                        opt(q),
                        opt(q.map(|q| b.integral_ab > q)),
                        opt(q.map(|q| b.integral_ba > q)),
                        opt(d.order),
                        d.excluded.to_string(),
                    ]
                })
            }),
        )?;

        write_csv(
            dir.join("boundaries.csv"),
            &["f1", "f2", "source"],
            self.bands.iter().map(|b| {
                let src = match b.source {
                    BandSource::Auto => "auto",
                    BandSource::Fixed => "fixed",
                };
                vec![b.boundaries.f1.to_string(), b.boundaries.f2.to_string(), src.into()]
            }),
        )?;
        let peaks = self.bands.as_ref().and_then(|b| b.estimate.as_ref());
        write_csv(
            dir.join("first_peaks.csv"),
            &["participant", "freq_hz"],
            peaks.into_iter().flat_map(|e| e.first_peaks.iter().map(|(p, f)| vec![p.clone(), f.to_string()])),
        )?;

        let thr_path = dir.join("threshold.csv");
        match &self.threshold {
            Some(t) => {
                let f = fs::File::create(&thr_path).map_err(io_err(&thr_path))?;
                t.write_csv(std::io::BufWriter::new(f))?;
            }
            None => write_csv(&thr_path, &["freq_hz", "q99", "n_perm", "seed"], std::iter::empty())?,
        }

        write_csv(
            dir.join("stats.csv"),
            &["name", "test", "route", "statistic", "p_value", "df", "n1", "n2", "note"],
            self.tests.iter().map(|t| match &t.result {
                Some(r) => vec![
                    t.name.clone(),
                    r.test.name().into(),
                    opt(r.route.map(|x| match x {
                        crate::stats::Route::Parametric => "parametric",
                        crate::stats::Route::RankBased => "rank_based",
                    })),
                    r.statistic.to_string(),
                    r.p_value.to_string(),
                    opt(r.df),
                    r.n.0.to_string(),
                    r.n.1.to_string(),
                    String::new(),
                ],
                None => {
                    let mut row = vec![t.name.clone()];
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row.push(t.note.clone().unwrap_or_default());
                    row
                }
            }),
        )?;

        write_csv(
            dir.join("forces.csv"),
            &["dyad_id", "participant", "role", "mean_abs_n", "cycles", "median_freq_hz"],
            self.forces.iter().map(|f| {
                let mut fr = f.histogram.frequencies.clone();
                fr.sort_by(f64::total_cmp);
                let median = (!fr.is_empty()).then(|| crate::surrogate::percentile_sorted(&fr, 0.5));
                vec![
                    f.dyad_id.clone(),
                    format!("{:?}", f.participant),
                    f.role.clone(),
                    f.mean_abs.to_string(),
                    fr.len().to_string(),
                    opt(median),
                ]
            }),
        )?;

        write_csv(
            dir.join("failures.csv"),
            &["dyad_id", "stage", "error"],
            self.failures.iter().map(|f| vec![f.dyad_id.clone(), f.stage.clone(), f.error.clone()]),
        )?;

        let bounds = self.bands.as_ref().map(|b| b.boundaries);
        for d in &self.dyads {
            let q = self.threshold.as_ref().map(|t| t.q99.as_slice());
            let mask = d.significant.as_ref();
            write_csv(
                dir.join("spectra").join(format!("{}.csv", d.dyad_id)),
                &["freq_hz", "i_ab", "i_ba", "q99", "significant_ab", "significant_ba"],
                (0..d.spectrum.freqs.len()).map(|k| {
                    vec![
                        d.spectrum.freqs[k].to_string(),
                        d.spectrum.i_ab[k].to_string(),
                        d.spectrum.i_ba[k].to_string(),
                        opt(q.map(|q| q[k])),
                        opt(mask.map(|m| m.0[k])),
                        opt(mask.map(|m| m.1[k])),
                    ]
                }),
            )?;
            let svg = spectrum_svg(&format!("Dyad {}", d.dyad_id), &d.spectrum, q, &plot_bands(&d.spectrum.freqs, bounds));
            let p = dir.join("plots").join(format!("{}.svg", d.dyad_id));
            fs::write(&p, svg).map_err(io_err(&p))?;
        }

        let prov = dir.join("provenance.json");
        let text = serde_json::to_string_pretty(&self.provenance).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&prov, text + "\n").map_err(io_err(&prov))?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, self.config.to_toml()?).map_err(io_err(&cfg_path))?;
        let log_path = dir.join("run_log.jsonl");
        let mut lines = String::new();
        for r in &self.log {
            lines.push_str(&serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?);
            lines.push('\n');
        }
        for w in &self.warnings {
            lines.push_str(&serde_json::json!({ "warning": w }).to_string());
            lines.push('\n');
        }
        fs::write(&log_path, lines).map_err(io_err(&log_path))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.sha256().unwrap(), PipelineConfig::from_toml(&text).unwrap().sha256().unwrap());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml(
            "downsample_fs = 25.0\n[surrogate]\nn_perm = 50\n[bands]\nmode = \"fixed\"\nf1 = 2.15\nf2 = 7.0\n",
        )
        .unwrap();
        assert_eq!(cfg.surrogate.n_perm, 50);
        assert_eq!(cfg.surrogate.seed, 0);
        assert_eq!(cfg.bands, BandConfig::Fixed { f1: 2.15, f2: 7.0 });
        assert_eq!(cfg.filter, FilterConfig::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "downsample_fs = 15.0",
            "epochs_per_trial = 0",
            "[bands]\nmode = \"fixed\"\nf1 = 7.0\nf2 = 2.0",
            "[surrogate]\nn_perm = 0",
            "unknown_key = 1",
            "coefficient_table = \"/nonexistent/table.csv\"",
        ] {
            assert!(PipelineConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn estimator_reflects_config() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.estimator().order, OrderSelection::Aic { max_order: 20 });
        cfg.var.fixed_p = Some(4);
        cfg.freq_grid.max = Some(8.0);
        let e = cfg.estimator();
        assert_eq!(e.order, OrderSelection::Fixed(4));
        assert_eq!(e.freq_max, Some(8.0));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(run_analysis(&[], &PipelineConfig::default()), Err(Error::NoData(_))));
    }
}
