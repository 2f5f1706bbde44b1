use std::path::PathBuf;

use nalgebra::Matrix2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dyad_ggc::behavior;
use dyad_ggc::estimate::{GgcEstimator, OrderSelection};
use dyad_ggc::fixtures;
use dyad_ggc::force::{self, CoefficientTable, MassConfig};
use dyad_ggc::ggc::{self, Direction};
use dyad_ggc::io::ingest;
use dyad_ggc::pipeline::{analyze_session, PipelineConfig};
use dyad_ggc::signal::{butterworth_lowpass_dualpass, Channel};
use dyad_ggc::sim::{time_domain_gc_oracle, SessionConfig};
use dyad_ggc::stats::{self, RankTest, TTest};
use dyad_ggc::var::{fit_var, frequency_grid, BivariateEpoch};
use dyad_ggc::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::NotFound(_)
        | Error::InvalidBand { .. }
        | Error::InvalidMass(_)
        | Error::InvalidCutoff { .. }
        | Error::InvalidRatio { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn direction(name: &str) -> PyResult<Direction> {
    match name {
        "ab" | "a_to_b" => Ok(Direction::AtoB),
        "ba" | "b_to_a" => Ok(Direction::BtoA),
        _ => Err(PyValueError::new_err(format!("direction must be 'ab' or 'ba', got {name:?}"))),
    }
}

fn channel(x: Vec<f64>, fs: f64, label: &str) -> PyResult<Channel> {
    Channel::new(x, fs, label).map_err(py_err)
}

fn matrix(rows: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
}

fn epochs(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, fs: f64) -> PyResult<Vec<BivariateEpoch>> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err(format!("{} A epochs but {} B epochs", a.len(), b.len())));
    }
    Ok(a.into_iter().zip(b).map(|(x, y)| BivariateEpoch::new(x, y, fs)).collect())
}

/// Directional causality spectra on a frequency grid.
#[pyclass(name = "GgcSpectrum", frozen)]
struct PyGgcSpectrum {
    inner: ggc::GgcSpectrum,
}

#[pymethods]
impl PyGgcSpectrum {
    #[getter]
    fn freqs(&self) -> Vec<f64> {
        self.inner.freqs.clone()
    }

    #[getter]
    fn i_ab(&self) -> Vec<f64> {
        self.inner.i_ab.clone()
    }

    #[getter]
    fn i_ba(&self) -> Vec<f64> {
        self.inner.i_ba.clone()
    }

    /// Trapezoid integral of one direction over `[lo, hi]` Hz.
    #[pyo3(signature = (lo, hi, direction="ab"))]
    fn band_integral(&self, lo: f64, hi: f64, direction: &str) -> PyResult<f64> {
        ggc::band_integral(&self.inner, self::direction(direction)?, lo, hi).map_err(py_err)
    }

    /// `(I_ab, I_ba, I_ab - I_ba)` over `[lo, hi]` Hz.
    fn delta(&self, lo: f64, hi: f64) -> PyResult<(f64, f64, f64)> {
        let b = ggc::BandInfluence::compute(&self.inner, lo, hi).map_err(py_err)?;
        Ok((b.integral_ab, b.integral_ba, b.delta))
    }

    #[pyo3(signature = (fs, direction="ab"))]
    fn time_domain_equivalent(&self, fs: f64, direction: &str) -> PyResult<f64> {
        self.inner.time_domain_equivalent(self::direction(direction)?, fs).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.freqs.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "GgcSpectrum({} bins, 0..{} Hz)",
            self.inner.freqs.len(),
            self.inner.freqs.last().copied().unwrap_or(0.0)
        )
    }
}

/// Bivariate vector autoregression.
#[pyclass(name = "VarModel", frozen)]
struct PyVarModel {
    inner: dyad_ggc::var::VarModel,
}

#[pymethods]
impl PyVarModel {
    /// `coeffs` is a list of 2x2 lag matrices, `sigma` the innovation covariance.
    #[new]
    fn new(coeffs: Vec<[[f64; 2]; 2]>, sigma: [[f64; 2]; 2], fs: f64) -> PyResult<Self> {
        let inner = dyad_ggc::var::VarModel::new(coeffs.into_iter().map(matrix).collect(), matrix(sigma), fs)
            .map_err(py_err)?;
        Ok(PyVarModel { inner })
    }

    /// Least-squares fit pooled over epochs; order by AIC when not given.
    #[staticmethod]
    #[pyo3(signature = (a, b, fs, order=None, max_order=20))]
    fn fit(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, fs: f64, order: Option<usize>, max_order: usize) -> PyResult<Self> {
        let e = epochs(a, b, fs)?;
        let p = match order {
            Some(p) => p,
            None => dyad_ggc::var::select_order(&e, max_order).map_err(py_err)?,
        };
        Ok(PyVarModel {
            inner: fit_var(&e, p).map_err(py_err)?,
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn coeffs(&self) -> Vec<[[f64; 2]; 2]> {
        self.inner
            .coeffs
            .iter()
            .map(|m| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]])
            .collect()
    }

    #[getter]
    fn sigma(&self) -> [[f64; 2]; 2] {
        let s = self.inner.sigma;
        [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]]
    }

    fn is_stable(&self) -> bool {
        self.inner.is_stable()
    }

    /// `(a, b)` sample paths of length `n`.
    #[pyo3(signature = (n, seed, burn_in=500))]
    fn simulate(&self, n: usize, seed: u64, burn_in: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = self.inner.simulate(n, burn_in, &mut rng);
        (e.a, e.b)
    }

    #[pyo3(signature = (freq_step=0.05))]
    fn ggc(&self, freq_step: f64) -> PyResult<PyGgcSpectrum> {
        let freqs = frequency_grid(freq_step, self.inner.fs / 2.0).map_err(py_err)?;
        Ok(PyGgcSpectrum {
            inner: ggc::GgcSpectrum::from_model(&self.inner, &freqs).map_err(py_err)?,
        })
    }
}

/// Statistic, p value and metadata of a hypothesis test.
#[pyclass(name = "TestResult", frozen, get_all)]
struct PyTestResult {
    test: String,
    statistic: f64,
    p_value: f64,
    df: Option<f64>,
    n: (usize, usize),
    route: Option<String>,
}

#[pymethods]
impl PyTestResult {
    fn __repr__(&self) -> String {
        format!("TestResult({}, statistic={}, p={})", self.test, self.statistic, self.p_value)
    }
}

impl From<stats::TestResult> for PyTestResult {
    fn from(r: stats::TestResult) -> Self {
        PyTestResult {
            test: r.test.name().to_string(),
            statistic: r.statistic,
            p_value: r.p_value,
            df: r.df,
            n: r.n,
            route: r.route.map(|x| format!("{x:?}").to_lowercase()),
        }
    }
}

fn test_result(r: dyad_ggc::Result<stats::TestResult>) -> PyResult<PyTestResult> {
    r.map(PyTestResult::from).map_err(py_err)
}

/// GGC spectrum of paired epochs (`a[i]`, `b[i]`) via the parametric route.
#[pyfunction]
#[pyo3(signature = (a, b, fs, order=None, max_order=20, freq_step=0.05))]
fn estimate_ggc(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    fs: f64,
    order: Option<usize>,
    max_order: usize,
    freq_step: f64,
) -> PyResult<PyGgcSpectrum> {
    let est = GgcEstimator {
        order: order.map_or(OrderSelection::Aic { max_order }, OrderSelection::Fixed),
        freq_step,
        ..Default::default()
    };
    Ok(PyGgcSpectrum {
        inner: est.spectrum(&epochs(a, b, fs)?).map_err(py_err)?,
    })
}

/// Time-domain Granger causality `(x -> y, y -> x)` from lag-`p` regressions.
#[pyfunction]
fn time_domain_gc(x: Vec<f64>, y: Vec<f64>, p: usize) -> PyResult<(f64, f64)> {
    time_domain_gc_oracle(&x, &y, p).map_err(py_err)
}

/// Zero-phase Butterworth low-pass.
#[pyfunction]
#[pyo3(signature = (x, fs, fc=10.0, order=2))]
fn lowpass(x: Vec<f64>, fs: f64, fc: f64, order: usize) -> PyResult<Vec<f64>> {
    let out = butterworth_lowpass_dualpass(&channel(x, fs, "x")?, fc, order).map_err(py_err)?;
    Ok(out.samples().to_vec())
}

/// Applied forces `(F1, F2, a)` from sensor readings.
#[pyfunction]
fn reconstruct_forces(
    s1: Vec<f64>,
    s2: Vec<f64>,
    fs: f64,
    slider: f64,
    m1: f64,
    m2: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let masses = MassConfig::new(slider, m1, m2).map_err(py_err)?;
    let f = force::reconstruct_forces(&channel(s1, fs, "S1")?, &channel(s2, fs, "S2")?, &masses).map_err(py_err)?;
    Ok((f.f1.samples().to_vec(), f.f2.samples().to_vec(), f.accel.samples().to_vec()))
}

/// Sensor readings `(S1, S2, a)` produced by applied forces.
#[pyfunction]
fn invert_forces(
    f1: Vec<f64>,
    f2: Vec<f64>,
    fs: f64,
    slider: f64,
    m1: f64,
    m2: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let masses = MassConfig::new(slider, m1, m2).map_err(py_err)?;
    let (s1, s2, a) = force::invert_forces(&channel(f1, fs, "F1")?, &channel(f2, fs, "F2")?, &masses).map_err(py_err)?;
    Ok((s1.samples().to_vec(), s2.samples().to_vec(), a.samples().to_vec()))
}

/// `(mean, sd)` of reversal distances to the nearest center, in % of `normalizer`.
#[pyfunction]
fn position_error(reversals: Vec<f64>, centers: (f64, f64), normalizer: f64) -> PyResult<(f64, f64)> {
    let s = behavior::position_error(&reversals, centers, normalizer).map_err(py_err)?;
    Ok((s.mean, s.sd))
}

/// `(mean, sd)` of interval deviations from `period`, in % of `period`.
#[pyfunction]
fn synchronization_error(times: Vec<f64>, period: f64) -> PyResult<(f64, f64)> {
    let s = behavior::synchronization_error(&times, period).map_err(py_err)?;
    Ok((s.mean, s.sd))
}

#[pyfunction]
#[pyo3(signature = (x, y=None, mu=0.0, paired=false, welch=false))]
fn t_test(x: Vec<f64>, y: Option<Vec<f64>>, mu: f64, paired: bool, welch: bool) -> PyResult<PyTestResult> {
    let kind = match &y {
        None => TTest::OneSample { x: &x, mu },
        Some(y) if paired => TTest::Paired { x: &x, y },
        Some(y) => TTest::TwoSample { x: &x, y, welch },
    };
    test_result(stats::t_test(kind))
}

#[pyfunction]
fn rank_sum(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::rank_test(RankTest::RankSum, &x, &y))
}

#[pyfunction]
fn signed_rank(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::rank_test(RankTest::SignedRank, &x, &y))
}

#[pyfunction]
fn ks_two_sample(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::ks_two_sample(&x, &y))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::pearson(&x, &y))
}

#[pyfunction]
fn shapiro_wilk(x: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::shapiro_wilk(&x))
}

/// t-test when both samples pass the normality gate, rank test otherwise.
#[pyfunction]
#[pyo3(signature = (x, y, paired=false))]
fn gated_compare(x: Vec<f64>, y: Vec<f64>, paired: bool) -> PyResult<PyTestResult> {
    test_result(stats::gated_compare(&x, &y, paired))
}

/// Writes simulated trial CSVs plus `manifest.toml`; returns the paths.
#[pyfunction]
fn simulate(session_toml: &str, trials: usize, out: PathBuf) -> PyResult<Vec<PathBuf>> {
    let cfg = SessionConfig::from_toml(session_toml).map_err(py_err)?;
    fixtures::write_session(&cfg.sim, cfg.dyads, trials, &out).map_err(py_err)
}

/// Runs the full pipeline on a session directory and writes the report.
/// Returns `(exit_code, {dyad: (delta_low, delta_high)})`.
#[pyfunction]
#[pyo3(signature = (input, out, config_toml=None, seed=None))]
fn analyze(
    input: PathBuf,
    out: PathBuf,
    config_toml: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(i32, Vec<(String, Vec<f64>)>)> {
    let mut cfg = match config_toml {
        Some(t) => PipelineConfig::from_toml(t).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.surrogate.seed = s;
    }
    let session = ingest(&input, &CoefficientTable::de_leva()).map_err(py_err)?;
    let report = analyze_session(&session, &cfg).map_err(py_err)?;
    report.write(&out).map_err(py_err)?;
    let deltas = report
        .dyads
        .iter()
        .map(|d| (d.dyad_id.clone(), d.influence.iter().map(|b| b.delta).collect()))
        .collect();
    Ok((report.exit_code(), deltas))
}

/// Reruns a pinned fixture; returns whether every digest and expectation holds.
#[pyfunction]
fn verify_fixture(root: PathBuf, id: &str) -> PyResult<bool> {
    Ok(fixtures::verify_fixture(&root, id).map_err(py_err)?.passed())
}

#[pymodule]
fn dyadggc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGgcSpectrum>()?;
    m.add_class::<PyVarModel>()?;
    m.add_class::<PyTestResult>()?;
    m.add_function(wrap_pyfunction!(estimate_ggc, m)?)?;
    m.add_function(wrap_pyfunction!(time_domain_gc, m)?)?;
    m.add_function(wrap_pyfunction!(lowpass, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_forces, m)?)?;
    m.add_function(wrap_pyfunction!(invert_forces, m)?)?;
    m.add_function(wrap_pyfunction!(position_error, m)?)?;
    m.add_function(wrap_pyfunction!(synchronization_error, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(gated_compare, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(verify_fixture, m)?)?;
    Ok(())
}
