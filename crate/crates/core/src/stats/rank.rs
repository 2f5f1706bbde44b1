use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_finite, TestKind, TestResult};
use crate::error::{Error, Result};

/// Largest smaller-sample size for the exact rank-sum distribution.
pub const EXACT_RANK_SUM_MAX: usize = 10;
/// Largest number of non-zero differences for the exact signed-rank
/// distribution.
pub const EXACT_SIGNED_RANK_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankTest {
    SignedRank,
    RankSum,
}

pub fn rank_test(kind: RankTest, x: &[f64], y: &[f64]) -> Result<TestResult> {
    match kind {
        RankTest::SignedRank => {
            if x.len() != y.len() {
                return Err(Error::ChannelMismatch(format!("paired samples of length {} and {}", x.len(), y.len())));
            }
            let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            let mut r = signed_rank(&d)?;
            r.n = (x.len(), y.len());
            Ok(r)
        }
        RankTest::RankSum => rank_sum(x, y),
    }
}

/// Midranks (1-based) of `v`, plus the sizes of tied groups.
pub(crate) fn midranks(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Two-sided p from the count of outcomes at most and at least the observed
/// value.
fn two_sided(le: f64, ge: f64, total: f64) -> f64 {
    (2.0 * le.min(ge) / total).min(1.0)
}

fn normal_p(stat: f64, mean: f64, var: f64) -> f64 {
    let dev = stat - mean;
    let corrected = (dev.abs() - 0.5).max(0.0);
    if var <= 0.0 {
        return 1.0;
    }
    let z = corrected / var.sqrt();
    let n = Normal::standard();
    (2.0 * n.sf(z)).min(1.0)
}

/// Wilcoxon rank-sum test. The statistic is the rank sum of `x` in the
/// pooled sample.
pub fn rank_sum(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::DegenerateSample("empty sample".into()));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..n].iter().sum();
    let total = n + m;

    let p = if n.min(m) <= EXACT_RANK_SUM_MAX {
        // Midranks are multiples of 1/2; count subsets by doubled rank sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut ways = vec![vec![0.0f64; max_sum + 1]; n + 1];
        ways[0][0] = 1.0;
        for &d in &doubled {
            for k in (1..=n).rev() {
                let (lo, hi) = ways.split_at_mut(k);
                for s in (d..=max_sum).rev() {
                    hi[0][s] += lo[k - 1][s - d];
                }
            }
        }
        let obs = (2.0 * w).round() as usize;
        let dist = &ways[n];
        let all: f64 = dist.iter().sum();
        let le: f64 = dist[..=obs].iter().sum();
        let ge: f64 = dist[obs..].iter().sum();
        two_sided(le, ge, all)
    } else {
        let (nf, mf, nt) = (n as f64, m as f64, total as f64);
        let mean = nf * (nt + 1.0) / 2.0;
        let var = nf * mf / 12.0 * ((nt + 1.0) - tie_term(&ties) / (nt * (nt - 1.0)));
        normal_p(w, mean, var)
    };
    Ok(TestResult::new(TestKind::RankSum, w, p, None, (n, m)))
}

/// Wilcoxon signed-rank test on differences `d`; zero differences are
/// dropped. The statistic is the sum of ranks of positive differences.
pub fn signed_rank(d: &[f64]) -> Result<TestResult> {
    check_finite(d, "differences")?;
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::DegenerateSample("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();

    let p = if n <= EXACT_SIGNED_RANK_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut ways = vec![0.0f64; max_sum + 1];
        ways[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                ways[s] += ways[s - r];
            }
        }
        let obs = (2.0 * w).round() as usize;
        let all: f64 = ways.iter().sum();
        two_sided(ways[..=obs].iter().sum(), ways[obs..].iter().sum(), all)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        normal_p(w, mean, var)
    };
    Ok(TestResult::new(TestKind::SignedRank, w, p, None, (d.len(), d.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Every split of the pooled midranks into groups of size n.
    fn brute_rank_sum_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let (ranks, _) = midranks(&pooled);
        let w: f64 = ranks[..x.len()].iter().sum();
        let total = pooled.len();
        let (mut le, mut ge, mut all) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != x.len() {
                continue;
            }
            let s: f64 = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            all += 1.0;
            if s <= w + 1e-9 {
                le += 1.0;
            }
            if s >= w - 1e-9 {
                ge += 1.0;
            }
        }
        (2.0 * f64::min(le, ge) / all).min(1.0)
    }

    fn brute_signed_rank_p(d: &[f64]) -> f64 {
        let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
        let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
        let (ranks, _) = midranks(&abs);
        let w: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let (mut le, mut ge, mut all) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << nz.len()) {
            let s: f64 = (0..nz.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            all += 1.0;
            if s <= w + 1e-9 {
                le += 1.0;
            }
            if s >= w - 1e-9 {
                ge += 1.0;
            }
        }
        (2.0 * f64::min(le, ge) / all).min(1.0)
    }

    #[test]
    fn separated_groups_have_extreme_w() {
        let r = rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 6.0);
        assert!((r.p_value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mixed_sample_matches_enumeration() {
        let x = [1.2, 3.4, 3.4, 0.5, 7.0];
        let y = [2.2, 3.4, 5.1, 6.0, 0.1, 4.4];
        let r = rank_sum(&x, &y).unwrap();
        assert!((r.p_value - brute_rank_sum_p(&x, &y)).abs() < 1e-12);
        let d = [0.5, -1.0, 2.0, 2.0, -0.25, 3.0, 0.0, 1.5];
        assert!((signed_rank(&d).unwrap().p_value - brute_signed_rank_p(&d)).abs() < 1e-12);
    }

    #[test]
    fn all_zero_differences() {
        assert!(matches!(
            rank_test(RankTest::SignedRank, &[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn midrank_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn exact_and_normal_branches_agree_at_ten() {
        // Same statistic pushed through both branches for n = m = 10.
        let nf = 10.0f64;
        let nt = 20.0f64;
        let mean = nf * (nt + 1.0) / 2.0;
        let var = nf * nf / 12.0 * (nt + 1.0);
        for shift in 0..10 {
            let x: Vec<f64> = (0..10).map(|i| (2 * i) as f64).collect();
            let y: Vec<f64> = (0..10).map(|i| (2 * i + 1) as f64 + shift as f64 * 1.3).collect();
            let r = rank_sum(&x, &y).unwrap();
            let approx = normal_p(r.statistic, mean, var);
            assert!((r.p_value - approx).abs() < 0.02, "{} vs {approx}", r.p_value);
        }
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64 + 10.5).collect();
        let r = rank_sum(&x, &y).unwrap();
        assert!(r.p_value < 0.05 && r.p_value > 0.0);
        let d: Vec<f64> = (1..=20).map(|i| i as f64 - 4.5).collect();
        let s = signed_rank(&d).unwrap();
        assert!((0.0..=1.0).contains(&s.p_value));
    }

    proptest! {
        #[test]
        fn exact_rank_sum_equals_enumeration(
            x in prop::collection::vec(0i32..8, 1..6),
            y in prop::collection::vec(0i32..8, 1..6),
        ) {
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let r = rank_sum(&xf, &yf).unwrap();
            prop_assert!((r.p_value - brute_rank_sum_p(&xf, &yf)).abs() < 1e-12);
            let swapped = rank_sum(&yf, &xf).unwrap();
            prop_assert!((r.p_value - swapped.p_value).abs() < 1e-12);
        }

        #[test]
        fn exact_signed_rank_equals_enumeration(d in prop::collection::vec(-5i32..6, 1..11)) {
            prop_assume!(d.iter().any(|v| *v != 0));
            let df: Vec<f64> = d.iter().map(|&v| v as f64).collect();
            let r = signed_rank(&df).unwrap();
            prop_assert!((r.p_value - brute_signed_rank_p(&df)).abs() < 1e-12);
        }
    }
}
