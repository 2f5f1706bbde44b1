//! Permutation null for the causality spectrum: force series of
//! participants who never interacted are paired and run through the same
//! estimator as real dyads.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::GgcEstimator;
use crate::ggc::{trapezoid_band, GgcSpectrum};
use crate::var::BivariateEpoch;

/// Number of surrogate pairings drawn by default.
pub const DEFAULT_N_PERM: usize = 506;
/// Quantile of the null distribution used as significance threshold.
pub const THRESHOLD_QUANTILE: f64 = 0.99;

/// One participant's epoched force series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub dyad: String,
    pub fs: f64,
    pub epochs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullThreshold {
    pub freqs: Vec<f64>,
    pub q99: Vec<f64>,
    /// Number of surrogate spectra behind each quantile.
    pub n_perm: usize,
    pub seed: u64,
}

impl NullThreshold {
    pub fn check_grid(&self, freqs: &[f64]) -> Result<()> {
        if freqs.len() != self.freqs.len()
            || freqs.iter().zip(&self.freqs).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::Grid(format!(
                "threshold has {} bins, spectrum has {}",
                self.freqs.len(),
                freqs.len()
            )));
        }
        Ok(())
    }

    /// Trapezoidal integral of the threshold curve over a band.
    pub fn band_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        trapezoid_band(&self.freqs, &self.q99, lo, hi)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["freq_hz", "q99", "n_perm", "seed"]).map_err(io)?;
        for (f, q) in self.freqs.iter().zip(&self.q99) {
            w.write_record([f.to_string(), q.to_string(), self.n_perm.to_string(), self.seed.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut freqs = Vec::new();
        let mut q99 = Vec::new();
        let mut meta = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let line = i + 2;
            let num = |k: usize, name: &str| -> Result<f64> {
                rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                    line,
                    column: name.into(),
                    message: "expected a number".into(),
                })
            };
            freqs.push(num(0, "freq_hz")?);
            q99.push(num(1, "q99")?);
            let n: usize = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line,
                column: "n_perm".into(),
                message: "expected an integer".into(),
            })?;
            let s: u64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line,
                column: "seed".into(),
                message: "expected an integer".into(),
            })?;
            meta = Some((n, s));
        }
        let (n_perm, seed) = meta.ok_or_else(|| Error::NoData("empty threshold file".into()))?;
        Ok(NullThreshold { freqs, q99, n_perm, seed })
    }
}

/// Canonically ordered individuals plus every admissible ordered pairing
/// (partners excluded).
#[derive(Debug, Clone)]
pub struct SurrogatePool {
    individuals: Vec<Individual>,
    pairs: Vec<(usize, usize)>,
}

impl SurrogatePool {
    pub fn new(mut individuals: Vec<Individual>) -> Result<Self> {
        individuals.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.dyad.cmp(&b.dyad)));
        let dyads: std::collections::BTreeSet<&str> = individuals.iter().map(|i| i.dyad.as_str()).collect();
        if individuals.len() < 2 || dyads.len() < 2 {
            return Err(Error::InsufficientPool(format!(
                "{} individual(s) from {} dyad(s); need at least 2 of each",
                individuals.len(),
                dyads.len()
            )));
        }
        for ind in &individuals {
            if ind.epochs.is_empty() {
                return Err(Error::InsufficientPool(format!("individual {} has no epochs", ind.id)));
            }
        }
        let n = individuals.len();
        let pairs = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| individuals[i].dyad != individuals[j].dyad)
            .collect();
        Ok(SurrogatePool { individuals, pairs })
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    /// All admissible ordered pairs, as indices into [`Self::individuals`].
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `n_perm` pairings: the admissible pairs are shuffled and consumed
    /// without replacement, reshuffling whenever a round is exhausted.
    pub fn draw_pairs(&self, n_perm: usize, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n_perm);
        while out.len() < n_perm {
            let mut round = self.pairs.clone();
            round.shuffle(&mut rng);
            let take = (n_perm - out.len()).min(round.len());
            out.extend_from_slice(&round[..take]);
        }
        out
    }

    /// Epoch-wise pairing of individual `a` (channel A) with `b` (channel B),
    /// truncated to the shorter epoch count and length.
    pub fn pair_epochs(&self, a: usize, b: usize) -> Vec<BivariateEpoch> {
        let (x, y) = (&self.individuals[a], &self.individuals[b]);
        let count = x.epochs.len().min(y.epochs.len());
        (0..count)
            .map(|k| {
                let len = x.epochs[k].len().min(y.epochs[k].len());
                BivariateEpoch {
                    a: x.epochs[k][..len].to_vec(),
                    b: y.epochs[k][..len].to_vec(),
                    fs: x.fs,
                    parent_trial: format!("{}|{}", x.id, y.id),
                    window_index: k,
                }
            })
            .collect()
    }

    /// Causality spectra for each distinct pair in `pairs`, computed in
    /// parallel. Pairs whose estimation fails are logged and left out.
    pub fn spectra(
        &self,
        pairs: &[(usize, usize)],
        estimator: &GgcEstimator,
    ) -> BTreeMap<(usize, usize), GgcSpectrum> {
        let distinct: Vec<(usize, usize)> = {
            let mut d = pairs.to_vec();
            d.sort_unstable();
            d.dedup();
            d
        };
        let results: Vec<_> = distinct
            .par_iter()
            .map(|&(a, b)| ((a, b), estimator.spectrum(&self.pair_epochs(a, b))))
            .collect();
        let mut out = BTreeMap::new();
        for ((a, b), r) in results {
            match r {
                Ok(s) => {
                    out.insert((a, b), s);
                }
                Err(e) => warn!(
                    "surrogate pair {} -> {} skipped: {e}",
                    self.individuals[a].id, self.individuals[b].id
                ),
            }
        }
        out
    }
}

/// Linear interpolation between closest ranks of sorted data (rank
/// `q * (n - 1)`, zero-based).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-bin quantile of the A->B curves of the drawn surrogate pairs.
pub fn threshold_from_draws(
    draws: &[(usize, usize)],
    spectra: &BTreeMap<(usize, usize), GgcSpectrum>,
    seed: u64,
) -> Result<NullThreshold> {
    let used: Vec<&GgcSpectrum> = draws.iter().filter_map(|p| spectra.get(p)).collect();
    let first = used
        .first()
        .ok_or_else(|| Error::InsufficientPool("every surrogate estimation failed".into()))?;
    let bins = first.freqs.len();
    let mut column = vec![0.0; used.len()];
    let q99 = (0..bins)
        .map(|k| {
            for (c, s) in column.iter_mut().zip(&used) {
                *c = s.i_ab[k];
            }
            column.sort_by(f64::total_cmp);
            percentile_sorted(&column, THRESHOLD_QUANTILE)
        })
        .collect();
    Ok(NullThreshold {
        freqs: first.freqs.clone(),
        q99,
        n_perm: used.len(),
        seed,
    })
}

pub fn permutation_null(
    pool: Vec<Individual>,
    n_perm: usize,
    seed: u64,
    estimator: &GgcEstimator,
) -> Result<NullThreshold> {
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be at least 1".into()));
    }
    let pool = SurrogatePool::new(pool)?;
    let draws = pool.draw_pairs(n_perm, seed);
    let spectra = pool.spectra(&draws, estimator);
    threshold_from_draws(&draws, &spectra, seed)
}

/// Per-bin exceedance of the threshold, `(A->B, B->A)`.
pub fn significance_mask(spec: &GgcSpectrum, thr: &NullThreshold) -> Result<(Vec<bool>, Vec<bool>)> {
    thr.check_grid(&spec.freqs)?;
    let above = |c: &[f64]| c.iter().zip(&thr.q99).map(|(v, q)| v > q).collect();
    Ok((above(&spec.i_ab), above(&spec.i_ba)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::OrderSelection;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white_individual(id: &str, dyad: &str, rng: &mut impl Rng, epochs: usize, len: usize) -> Individual {
        Individual {
            id: id.into(),
            dyad: dyad.into(),
            fs: 25.0,
            epochs: (0..epochs)
                .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        }
    }

    fn pool(n_dyads: usize, seed: u64) -> Vec<Individual> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_dyads)
            .flat_map(|d| {
                let a = white_individual(&format!("d{d:02}a"), &format!("d{d:02}"), &mut rng, 4, 60);
                let b = white_individual(&format!("d{d:02}b"), &format!("d{d:02}"), &mut rng, 4, 60);
                [a, b]
            })
            .collect()
    }

    fn quick() -> GgcEstimator {
        GgcEstimator {
            order: OrderSelection::Fixed(2),
            freq_step: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn percentile_interpolates_between_ranks() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile_sorted(&v, 0.99), 99.0);
        assert!((percentile_sorted(&[0.0, 10.0], 0.99) - 9.9).abs() < 1e-12);
        assert_eq!(percentile_sorted(&[3.0], 0.99), 3.0);
    }

    #[test]
    fn pool_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = vec![
            white_individual("x", "d1", &mut rng, 2, 30),
            white_individual("y", "d1", &mut rng, 2, 30),
        ];
        assert!(matches!(SurrogatePool::new(same), Err(Error::InsufficientPool(_))));
        assert!(matches!(SurrogatePool::new(vec![]), Err(Error::InsufficientPool(_))));
    }

    #[test]
    fn partners_are_never_paired() {
        let p = SurrogatePool::new(pool(4, 1)).unwrap();
        assert_eq!(p.pairs().len(), 8 * 6);
        let draws = p.draw_pairs(200, 9);
        assert_eq!(draws.len(), 200);
        for (a, b) in draws {
            assert_ne!(p.individuals()[a].dyad, p.individuals()[b].dyad);
        }
    }

    #[test]
    fn rounds_sample_without_replacement() {
        let p = SurrogatePool::new(pool(4, 1)).unwrap();
        let draws = p.draw_pairs(48, 3);
        let mut d = draws.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 48);
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let individuals = pool(4, 2);
        let a = permutation_null(individuals.clone(), 40, 17, &quick()).unwrap();
        let b = permutation_null(individuals.clone(), 40, 17, &quick()).unwrap();
        let mut rev = individuals;
        rev.reverse();
        let c = permutation_null(rev, 40, 17, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.n_perm, 40);
        assert!(a.q99.iter().all(|&q| q >= 0.0));
    }

    #[test]
    fn mask_edges() {
        let thr = NullThreshold {
            freqs: vec![0.0, 1.0, 2.0],
            q99: vec![0.1, 0.2, 0.3],
            n_perm: 1,
            seed: 0,
        };
        let zero = GgcSpectrum { freqs: thr.freqs.clone(), i_ab: vec![0.0; 3], i_ba: vec![0.0; 3] };
        let (ab, ba) = significance_mask(&zero, &thr).unwrap();
        assert!(ab.iter().chain(&ba).all(|m| !m));
        let up: Vec<f64> = thr.q99.iter().map(|q| q + 1e-9).collect();
        let high = GgcSpectrum { freqs: thr.freqs.clone(), i_ab: up.clone(), i_ba: up };
        let (ab, ba) = significance_mask(&high, &thr).unwrap();
        assert!(ab.iter().chain(&ba).all(|m| *m));
        let other = GgcSpectrum { freqs: vec![0.0, 1.0], i_ab: vec![0.0; 2], i_ba: vec![0.0; 2] };
        assert!(matches!(significance_mask(&other, &thr), Err(Error::Grid(_))));
    }

    #[test]
    fn csv_round_trip() {
        let thr = NullThreshold { freqs: vec![0.0, 0.05, 0.1], q99: vec![0.01, 0.125, 1e-7], n_perm: 506, seed: 42 };
        let mut buf = Vec::new();
        thr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("freq_hz,q99,n_perm,seed\n0,0.01,506,42\n"));
        assert_eq!(NullThreshold::read_csv(&text).unwrap(), thr);
    }

    #[test]
    fn quantile_spread_shrinks_with_more_draws() {
        let p = SurrogatePool::new(pool(26, 5)).unwrap();
        let est = quick();
        let all = p.spectra(p.pairs(), &est);
        let spread = |n_perm: usize| {
            let vals: Vec<Vec<f64>> = (0..12)
                .map(|seed| threshold_from_draws(&p.draw_pairs(n_perm, seed), &all, seed).unwrap().q99)
                .collect();
            let bins = vals[0].len();
            (0..bins)
                .map(|k| {
                    let col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
                    let m = col.iter().sum::<f64>() / col.len() as f64;
                    (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt()
                })
                .sum::<f64>()
                / bins as f64
        };
        let (s50, s506, s2000) = (spread(50), spread(506), spread(2000));
        assert!(s50 > s506 && s506 > s2000, "{s50} {s506} {s2000}");
    }
}
