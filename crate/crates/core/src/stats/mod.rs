//! Hypothesis tests and correlation, plus a normality-gated comparison that
//! picks a parametric or rank-based test.

mod rank;
mod shapiro;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub use rank::{rank_sum, rank_test, signed_rank, RankTest};
pub use shapiro::shapiro_wilk;

/// Normality gate level used by [`gated_compare`].
pub const NORMALITY_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    OneSampleT,
    PairedT,
    TwoSampleT,
    WelchT,
    SignedRank,
    RankSum,
    KolmogorovSmirnov,
    Pearson,
    ShapiroWilk,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::OneSampleT => "one-sample t",
            TestKind::PairedT => "paired t",
            TestKind::TwoSampleT => "two-sample t",
            TestKind::WelchT => "welch t",
            TestKind::SignedRank => "signed-rank",
            TestKind::RankSum => "rank-sum",
            TestKind::KolmogorovSmirnov => "kolmogorov-smirnov",
            TestKind::Pearson => "pearson",
            TestKind::ShapiroWilk => "shapiro-wilk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Parametric,
    RankBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    /// t, W, D, r or the Shapiro-Wilk W depending on `test`.
    pub statistic: f64,
    pub p_value: f64,
    pub df: Option<f64>,
    pub n: (usize, usize),
    /// Set by [`gated_compare`] and [`gated_one_sample`].
    pub route: Option<Route>,
}

impl TestResult {
    fn new(test: TestKind, statistic: f64, p_value: f64, df: Option<f64>, n: (usize, usize)) -> Self {
        TestResult {
            test,
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            df,
            n,
            route: None,
        }
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::DegenerateSample(format!("{what} contains non-finite values")))
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sum of squared deviations from the mean.
fn ss(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum()
}

/// Two-sided p of a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub enum TTest<'a> {
    OneSample { x: &'a [f64], mu: f64 },
    Paired { x: &'a [f64], y: &'a [f64] },
    /// Pooled variance unless `welch`.
    TwoSample { x: &'a [f64], y: &'a [f64], welch: bool },
}

pub fn t_test(kind: TTest<'_>) -> Result<TestResult> {
    let need = |x: &[f64], what: &str| -> Result<()> {
        check_finite(x, what)?;
        if x.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: x.len() });
        }
        Ok(())
    };
    let degenerate = || Error::DegenerateSample("zero variance in t statistic".into());
    match kind {
        TTest::OneSample { x, mu } => {
            need(x, "x")?;
            let n = x.len() as f64;
            let se = (ss(x) / (n - 1.0) / n).sqrt();
            if se == 0.0 {
                return Err(degenerate());
            }
            let t = (mean(x) - mu) / se;
            Ok(TestResult::new(TestKind::OneSampleT, t, t_two_sided(t, n - 1.0), Some(n - 1.0), (x.len(), 0)))
        }
        TTest::Paired { x, y } => {
            need(x, "x")?;
            need(y, "y")?;
            if x.len() != y.len() {
                return Err(Error::ChannelMismatch(format!("paired samples of length {} and {}", x.len(), y.len())));
            }
            let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            let mut r = t_test(TTest::OneSample { x: &d, mu: 0.0 })?;
            r.test = TestKind::PairedT;
            r.n = (x.len(), y.len());
            Ok(r)
        }
        TTest::TwoSample { x, y, welch } => {
            need(x, "x")?;
            need(y, "y")?;
            let (n, m) = (x.len() as f64, y.len() as f64);
            let (vx, vy) = (ss(x) / (n - 1.0), ss(y) / (m - 1.0));
            let diff = mean(x) - mean(y);
            let (se, df, test) = if welch {
                let (a, b) = (vx / n, vy / m);
                let df = (a + b).powi(2) / (a * a / (n - 1.0) + b * b / (m - 1.0));
                ((a + b).sqrt(), df, TestKind::WelchT)
            } else {
                let pooled = ((n - 1.0) * vx + (m - 1.0) * vy) / (n + m - 2.0);
                ((pooled * (1.0 / n + 1.0 / m)).sqrt(), n + m - 2.0, TestKind::TwoSampleT)
            };
            if se == 0.0 || !se.is_finite() {
                return Err(degenerate());
            }
            let t = diff / se;
            Ok(TestResult::new(test, t, t_two_sided(t, df), Some(df), (x.len(), y.len())))
        }
    }
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // Theta-function form converges fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        2.0 * (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::DegenerateSample("empty sample".into()));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n * m) as f64 / (n + m) as f64;
    Ok(TestResult::new(TestKind::KolmogorovSmirnov, d, kolmogorov_sf(en.sqrt() * d), None, (n, m)))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::ChannelMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: x.len() });
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let (sxx, syy) = (ss(x), ss(y));
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (x.len() - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(TestResult::new(TestKind::Pearson, r, p, Some(df), (x.len(), y.len())))
}

fn is_normal(x: &[f64]) -> Result<bool> {
    Ok(shapiro_wilk(x)?.p_value > NORMALITY_ALPHA)
}

/// Compare two samples: t-test when both pass the normality gate, rank test
/// otherwise.
pub fn gated_compare(x: &[f64], y: &[f64], paired: bool) -> Result<TestResult> {
    let parametric = is_normal(x)? && is_normal(y)?;
    let mut r = match (parametric, paired) {
        (true, true) => t_test(TTest::Paired { x, y })?,
        (true, false) => t_test(TTest::TwoSample { x, y, welch: false })?,
        (false, true) => rank_test(RankTest::SignedRank, x, y)?,
        (false, false) => rank_test(RankTest::RankSum, x, y)?,
    };
    r.route = Some(if parametric { Route::Parametric } else { Route::RankBased });
    Ok(r)
}

/// One-sample version of [`gated_compare`] against a location `mu`.
pub fn gated_one_sample(x: &[f64], mu: f64) -> Result<TestResult> {
    let parametric = is_normal(x)?;
    let mut r = if parametric {
        t_test(TTest::OneSample { x, mu })?
    } else {
        let shifted: Vec<f64> = x.iter().map(|v| v - mu).collect();
        signed_rank(&shifted)?
    };
    r.route = Some(if parametric { Route::Parametric } else { Route::RankBased });
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp, StandardNormal};

    #[test]
    fn identical_samples_give_zero_t() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let r = t_test(TTest::TwoSample { x: &x, y: &x, welch: false }).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sample_at_mean() {
        let r = t_test(TTest::OneSample { x: &[1.0, 2.0, 3.0, 4.0, 5.0], mu: 3.0 }).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.df, Some(4.0));
    }

    #[test]
    fn pooled_t_matches_hand_formula() {
        let x = [5.1, 4.9, 6.0, 5.5];
        let y = [4.0, 4.2, 3.9, 4.5];
        // Means 5.375 and 4.15; sums of squares 0.7075 and 0.21.
        let sp2 = (0.7075 + 0.21) / 6.0;
        let t_ref = (5.375 - 4.15) / (sp2 * 0.5f64).sqrt();
        let r = t_test(TTest::TwoSample { x: &x, y: &y, welch: false }).unwrap();
        assert!((r.statistic - t_ref).abs() < 1e-6);
        assert!((r.statistic - 4.430203493890004).abs() < 1e-6);
        assert!((r.p_value - 0.004422135476125703).abs() < 1e-6);
        assert_eq!(r.df, Some(6.0));
    }

    #[test]
    fn welch_df_is_satterthwaite() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 9.0, 1.0, 7.0, 3.0];
        let r = t_test(TTest::TwoSample { x: &x, y: &y, welch: true }).unwrap();
        let (a, b) = (ss(&x) / 3.0 / 4.0, ss(&y) / 5.0 / 6.0);
        let df = (a + b).powi(2) / (a * a / 3.0 + b * b / 5.0);
        assert!((r.df.unwrap() - df).abs() < 1e-12);
    }

    #[test]
    fn t_degenerate() {
        assert!(matches!(
            t_test(TTest::OneSample { x: &[2.0, 2.0, 2.0], mu: 0.0 }),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            t_test(TTest::OneSample { x: &[2.0], mu: 0.0 }),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn paired_equals_one_sample_on_differences() {
        let x = [3.0, 5.0, 2.5, 8.0, 6.0];
        let y = [2.0, 5.5, 1.0, 6.0, 6.5];
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let p = t_test(TTest::Paired { x: &x, y: &y }).unwrap();
        let o = t_test(TTest::OneSample { x: &d, mu: 0.0 }).unwrap();
        assert_eq!(p.statistic, o.statistic);
        assert_eq!(p.test, TestKind::PairedT);
    }

    fn ecdf_d(x: &[f64], y: &[f64]) -> f64 {
        let cdf = |s: &[f64], v: f64| s.iter().filter(|u| **u <= v).count() as f64 / s.len() as f64;
        x.iter().chain(y).map(|&v| (cdf(x, v) - cdf(y, v)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&x, &x).unwrap().statistic, 0.0);
        assert_eq!(ks_two_sample(&x, &[4.0, 5.0]).unwrap().statistic, 1.0);
        let (a, b) = ([1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.0]);
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, ecdf_d(&a, &b));
        assert_eq!(r.statistic, 0.25);
        assert!(matches!(ks_two_sample(&[], &a), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn kolmogorov_series_forms_agree() {
        // Evaluate each branch's series on the other side of the switch.
        for &l in &[0.6, 0.9, 1.0, 1.2, 1.8] {
            let alt = 2.0
                * (1..=200)
                    .map(|k| (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * (k * k) as f64 * l * l).exp())
                    .sum::<f64>();
            assert!((kolmogorov_sf(l) - alt).abs() < 1e-10, "{l}");
        }
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(pearson(&x, &y).unwrap().statistic, 1.0);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &z).unwrap().statistic, -1.0);

        let a = [2.0, 4.5, 3.1, 8.0, 6.6, 5.0];
        let b = [1.0, 3.3, 3.0, 6.1, 7.0, 2.2];
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (n - 1.0);
        let sa = (a.iter().map(|p| (p - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sb = (b.iter().map(|q| (q - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pearson(&a, &b).unwrap().statistic - cov / (sa * sb)).abs() < 1e-12);
        assert!(matches!(pearson(&a, &[1.0; 6]), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn gate_routes_normal_to_t() {
        // Both samples pass the gate with probability 0.95^2.
        let mut parametric = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.5).collect();
            let r = gated_compare(&x, &y, false).unwrap();
            if r.route == Some(Route::Parametric) {
                assert_eq!(r.test, TestKind::TwoSampleT);
                parametric += 1;
            }
        }
        assert!(parametric >= 170, "{parametric}");
    }

    #[test]
    fn gate_routes_skewed_to_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let exp = Exp::new(1.0).unwrap();
        let x: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(exp).powi(3)).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let r = gated_compare(&x, &y, false).unwrap();
        assert_eq!(r.route, Some(Route::RankBased));
        assert_eq!(r.test, TestKind::RankSum);
        let r = gated_compare(&x, &y, true).unwrap();
        assert_eq!(r.test, TestKind::SignedRank);
        assert!(gated_one_sample(&x, 0.0).unwrap().route.is_some());
    }

    #[test]
    fn t_p_decreases_with_t() {
        let ps: Vec<f64> = (0..20).map(|k| t_two_sided(k as f64 * 0.3, 9.0)).collect();
        assert!(ps.windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #[test]
        fn swapping_flips_sign_keeps_p(
            x in prop::collection::vec(-50.0f64..50.0, 3..15),
            y in prop::collection::vec(-50.0f64..50.0, 3..15),
        ) {
            prop_assume!(ss(&x) > 1e-6 && ss(&y) > 1e-6);
            let a = t_test(TTest::TwoSample { x: &x, y: &y, welch: false }).unwrap();
            let b = t_test(TTest::TwoSample { x: &y, y: &x, welch: false }).unwrap();
            prop_assert!((a.statistic + b.statistic).abs() < 1e-9);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p_value));

            let ka = ks_two_sample(&x, &y).unwrap();
            let kb = ks_two_sample(&y, &x).unwrap();
            prop_assert_eq!(ka.statistic, kb.statistic);
            prop_assert_eq!(ka.statistic, ecdf_d(&x, &y));
            prop_assert!((0.0..=1.0).contains(&ka.p_value));

            let n = x.len().min(y.len());
            let (xs, ys) = (&x[..n], &y[..n]);
            if ss(xs) > 1e-6 && ss(ys) > 1e-6 {
                let ra = pearson(xs, ys).unwrap();
                let rb = pearson(ys, xs).unwrap();
                prop_assert!((ra.statistic - rb.statistic).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ra.p_value));
            }
        }
    }
}
