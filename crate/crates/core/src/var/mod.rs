//! Bivariate vector autoregressive models: pooled multi-epoch least-squares
//! fitting, order selection, and the spectral quantities derived from a
//! fitted model. The nonparametric route (Welch estimate + Wilson
//! factorization) lives alongside for cross-checking.

mod spectral;
mod welch;
mod wilson;

pub use spectral::{
    frequency_grid, spectral_matrix, transfer_function, CMat2, SpectralDecomposition,
    DEFAULT_FREQ_STEP_HZ,
};
pub use welch::welch_spectral_matrix;
pub use wilson::{wilson_decomposition, wilson_factorize, WilsonFactor, WilsonOptions};

#[cfg(test)]
pub(crate) use spectral::min_eigenvalue;

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound for AIC order selection (0.8 s of memory at 25 Hz).
pub const DEFAULT_MAX_ORDER: usize = 20;

/// Minimum number of samples an epoch must have beyond the model order.
const EPOCH_MARGIN: usize = 10;

/// Two simultaneously recorded channels over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateEpoch {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub fs: f64,
    pub parent_trial: String,
    pub window_index: usize,
}

impl BivariateEpoch {
    pub fn new(a: Vec<f64>, b: Vec<f64>, fs: f64) -> Self {
        BivariateEpoch {
            a,
            b,
            fs,
            parent_trial: String::new(),
            window_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Channels exchanged: A becomes B and vice versa.
    pub fn swapped(&self) -> Self {
        BivariateEpoch {
            a: self.b.clone(),
            b: self.a.clone(),
            ..self.clone()
        }
    }

    fn sort_key(&self) -> (&str, usize) {
        (&self.parent_trial, self.window_index)
    }

    fn data_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let bits = |e: &Self| -> Vec<u64> { e.a.iter().chain(&e.b).map(|v| v.to_bits()).collect() };
        bits(self).cmp(&bits(other))
    }
}

/// Fitted bivariate VAR(p): `x_t = sum_k A_k x_{t-k} + e_t`, `cov(e) = sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub coeffs: Vec<Matrix2<f64>>,
    pub sigma: Matrix2<f64>,
    pub fs: f64,
    pub n_obs: usize,
}

impl VarModel {
    /// A model with given coefficients; checks that `sigma` is symmetric
    /// positive definite.
    pub fn new(coeffs: Vec<Matrix2<f64>>, sigma: Matrix2<f64>, fs: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("VAR order must be at least 1".into()));
        }
        check_covariance(&sigma)?;
        Ok(VarModel {
            coeffs,
            sigma,
            fs,
            n_obs: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Largest modulus among the companion-matrix eigenvalues.
    pub fn spectral_radius(&self) -> f64 {
        let p = self.order();
        let mut c = DMatrix::<f64>::zeros(2 * p, 2 * p);
        for (k, a) in self.coeffs.iter().enumerate() {
            c.view_mut((0, 2 * k), (2, 2)).copy_from(a);
        }
        for i in 2..2 * p {
            c[(i, i - 2)] = 1.0;
        }
        c.complex_eigenvalues()
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Draws `n` samples after discarding `burn_in` start-up samples.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, burn_in: usize, rng: &mut R) -> BivariateEpoch {
        let l = self
            .sigma
            .cholesky()
            .expect("sigma validated as positive definite")
            .l();
        let p = self.order();
        let total = n + burn_in;
        let mut xs: Vec<[f64; 2]> = vec![[0.0; 2]; total + p];
        for t in p..total + p {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let mut v = [l[(0, 0)] * z0, l[(1, 0)] * z0 + l[(1, 1)] * z1];
            for (k, a) in self.coeffs.iter().enumerate() {
                let prev = xs[t - k - 1];
                v[0] += a[(0, 0)] * prev[0] + a[(0, 1)] * prev[1];
                v[1] += a[(1, 0)] * prev[0] + a[(1, 1)] * prev[1];
            }
            xs[t] = v;
        }
        let kept = &xs[p + burn_in..];
        BivariateEpoch::new(
            kept.iter().map(|v| v[0]).collect(),
            kept.iter().map(|v| v[1]).collect(),
            self.fs,
        )
    }
}

fn check_covariance(sigma: &Matrix2<f64>) -> Result<()> {
    let sym = (sigma[(0, 1)] - sigma[(1, 0)]).abs() <= 1e-12 * sigma.abs().max().max(1.0);
    let pd = sigma[(0, 0)] > 0.0 && sigma.determinant() > 0.0;
    if sym && pd && sigma.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("covariance is not symmetric positive definite: {sigma:?}")))
    }
}

/// Epochs validated, sorted canonically and mean-removed per channel.
fn prepare(epochs: &[BivariateEpoch], order: usize) -> Result<Vec<BivariateEpoch>> {
    let first = epochs.first().ok_or_else(|| Error::NoData("no epochs to fit".into()))?;
    let len = first.len();
    for e in epochs {
        if e.a.len() != e.b.len() {
            return Err(Error::ChannelMismatch(format!(
                "epoch {}#{} has channels of length {} and {}",
                e.parent_trial,
                e.window_index,
                e.a.len(),
                e.b.len()
            )));
        }
        if e.len() <= order + EPOCH_MARGIN {
            return Err(Error::InsufficientSamples {
                needed: order + EPOCH_MARGIN + 1,
                got: e.len(),
            });
        }
        if e.len() != len {
            return Err(Error::ChannelMismatch(format!(
                "epochs must share one length ({len} vs {})",
                e.len()
            )));
        }
        if e.fs != first.fs {
            return Err(Error::ChannelMismatch("epochs differ in sampling rate".into()));
        }
        if e.a.iter().chain(&e.b).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite value in epoch".into()));
        }
    }
    let mut sorted: Vec<BivariateEpoch> = epochs.to_vec();
    sorted.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()).then_with(|| x.data_cmp(y)));
    for e in &mut sorted {
        for ch in [&mut e.a, &mut e.b] {
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            ch.iter_mut().for_each(|v| *v -= m);
        }
    }
    Ok(sorted)
}

/// Cross-product sums of lagged regressors `[a_{t-1}, b_{t-1}, ..., a_{t-L}, b_{t-L}]`
/// and targets `[a_t, b_t]` over `t >= start` of every epoch.
struct Gram {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
    yty: Matrix2<f64>,
    n: usize,
}

impl Gram {
    fn build(epochs: &[BivariateEpoch], lags: usize, start: usize) -> Gram {
        let k = 2 * lags;
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut xty = DMatrix::<f64>::zeros(k, 2);
        let mut yty = Matrix2::zeros();
        let mut z = vec![0.0; k];
        let mut n = 0;
        for e in epochs {
            for t in start..e.len() {
                for j in 0..lags {
                    z[2 * j] = e.a[t - j - 1];
                    z[2 * j + 1] = e.b[t - j - 1];
                }
                let y = [e.a[t], e.b[t]];
                for r in 0..k {
                    let zr = z[r];
                    for c in r..k {
                        xtx[(r, c)] += zr * z[c];
                    }
                    xty[(r, 0)] += zr * y[0];
                    xty[(r, 1)] += zr * y[1];
                }
                yty[(0, 0)] += y[0] * y[0];
                yty[(0, 1)] += y[0] * y[1];
                yty[(1, 1)] += y[1] * y[1];
                n += 1;
            }
        }
        for r in 0..k {
            for c in 0..r {
                xtx[(r, c)] = xtx[(c, r)];
            }
        }
        yty[(1, 0)] = yty[(0, 1)];
        Gram { xtx, xty, yty, n }
    }

    /// Least-squares coefficients using the first `lags` lags, and the
    /// residual sum of squares.
    fn solve(&self, lags: usize) -> Result<(DMatrix<f64>, Matrix2<f64>)> {
        let k = 2 * lags;
        let xtx = self.xtx.view((0, 0), (k, k)).into_owned();
        let xty = self.xty.view((0, 0), (k, 2)).into_owned();
        let diag_max = (0..k).map(|i| xtx[(i, i)]).fold(0.0f64, f64::max);
        let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
        let l = chol.l_dirty();
        let min_pivot = (0..k).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-12 * diag_max) {
            return Err(Error::RankDeficient);
        }
        let beta = chol.solve(&xty);
        let explained = xty.transpose() * &beta;
        let rss = self.yty - Matrix2::new(
            explained[(0, 0)],
            explained[(0, 1)],
            explained[(1, 0)],
            explained[(1, 1)],
        );
        Ok((beta, rss))
    }
}

fn coeffs_from_beta(beta: &DMatrix<f64>, lags: usize) -> Vec<Matrix2<f64>> {
    (0..lags)
        .map(|j| {
            // Column c of beta holds the regression of channel c.
            Matrix2::new(
                beta[(2 * j, 0)],
                beta[(2 * j + 1, 0)],
                beta[(2 * j, 1)],
                beta[(2 * j + 1, 1)],
            )
        })
        .collect()
}

/// Pooled least-squares VAR(`order`) over all epochs. Each epoch is demeaned
/// and contributes regressions only for samples whose lags stay inside it.
/// The innovation covariance uses the denominator `N - 2p`.
pub fn fit_var(epochs: &[BivariateEpoch], order: usize) -> Result<VarModel> {
    if order == 0 {
        return Err(Error::Config("VAR order must be at least 1".into()));
    }
    let prepared = prepare(epochs, order)?;
    let gram = Gram::build(&prepared, order, order);
    let (beta, _) = gram.solve(order)?;
    let coeffs = coeffs_from_beta(&beta, order);

    let mut sse = Matrix2::<f64>::zeros();
    for e in &prepared {
        for t in order..e.len() {
            let mut r = [e.a[t], e.b[t]];
            for (j, a) in coeffs.iter().enumerate() {
                let (pa, pb) = (e.a[t - j - 1], e.b[t - j - 1]);
                r[0] -= a[(0, 0)] * pa + a[(0, 1)] * pb;
                r[1] -= a[(1, 0)] * pa + a[(1, 1)] * pb;
            }
            sse[(0, 0)] += r[0] * r[0];
            sse[(0, 1)] += r[0] * r[1];
            sse[(1, 1)] += r[1] * r[1];
        }
    }
    sse[(1, 0)] = sse[(0, 1)];
    let dof = gram.n.saturating_sub(2 * order);
    if dof == 0 {
        return Err(Error::InsufficientSamples {
            needed: 2 * order + 1,
            got: gram.n,
        });
    }
    let sigma = sse / dof as f64;
    check_covariance(&sigma).map_err(|_| Error::RankDeficient)?;

    let model = VarModel {
        coeffs,
        sigma,
        fs: prepared[0].fs,
        n_obs: gram.n,
    };
    let radius = model.spectral_radius();
    if !(radius < 1.0) {
        return Err(Error::Unstable { max_modulus: radius });
    }
    Ok(model)
}

/// AIC for each order `1..=max_order`, all evaluated on the same samples
/// (the first `max_order` samples of every epoch serve only as lags).
pub fn aic_curve(epochs: &[BivariateEpoch], max_order: usize) -> Result<Vec<f64>> {
    if max_order == 0 {
        return Err(Error::Config("maximum VAR order must be at least 1".into()));
    }
    let prepared = prepare(epochs, max_order)?;
    let gram = Gram::build(&prepared, max_order, max_order);
    let n = gram.n as f64;
    (1..=max_order)
        .map(|p| {
            let (_, rss) = gram.solve(p)?;
            let det = (rss / n).determinant();
            if !(det > 0.0) {
                return Err(Error::RankDeficient);
            }
            Ok(n * det.ln() + 2.0 * (4 * p) as f64)
        })
        .collect()
}

/// Order in `1..=max_order` minimizing AIC.
pub fn select_order(epochs: &[BivariateEpoch], max_order: usize) -> Result<usize> {
    let aic = aic_curve(epochs, max_order)?;
    Ok(aic
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best })
        .0
        + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn var1(c: f64) -> VarModel {
        VarModel::new(
            vec![Matrix2::new(0.5, 0.0, c, 0.4)],
            Matrix2::identity(),
            25.0,
        )
        .unwrap()
    }

    fn chunk(series: &BivariateEpoch, len: usize) -> Vec<BivariateEpoch> {
        (0..series.len() / len)
            .map(|i| BivariateEpoch {
                a: series.a[i * len..(i + 1) * len].to_vec(),
                b: series.b[i * len..(i + 1) * len].to_vec(),
                fs: series.fs,
                parent_trial: format!("t{i:03}"),
                window_index: 0,
            })
            .collect()
    }

    #[test]
    fn recovers_var1_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = var1(0.3).simulate(100_000, 500, &mut rng);
        let m = fit_var(&[data], 1).unwrap();
        let a = m.coeffs[0];
        let expect = [[0.5, 0.0], [0.3, 0.4]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((a[(r, c)] - expect[r][c]).abs() < 0.02, "A[{r},{c}] = {}", a[(r, c)]);
            }
        }
        assert!((m.sigma - Matrix2::identity()).abs().max() < 0.03);
    }

    #[test]
    fn white_noise_epochs_give_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wn = VarModel::new(vec![Matrix2::zeros()], Matrix2::new(1.0, 0.3, 0.3, 2.0), 25.0).unwrap();
        let epochs: Vec<_> = (0..27)
            .map(|i| {
                let mut e = wn.simulate(250, 0, &mut rng);
                e.parent_trial = format!("t{i}");
                e
            })
            .collect();
        let m = fit_var(&epochs, 1).unwrap();
        assert!(m.coeffs[0].abs().max() < 0.1);
        // Sample covariance of the pooled, demeaned data.
        let prepared = prepare(&epochs, 1).unwrap();
        let mut cov = Matrix2::<f64>::zeros();
        let mut n = 0.0;
        for e in &prepared {
            for t in 0..e.len() {
                cov[(0, 0)] += e.a[t] * e.a[t];
                cov[(0, 1)] += e.a[t] * e.b[t];
                cov[(1, 1)] += e.b[t] * e.b[t];
                n += 1.0;
            }
        }
        cov[(1, 0)] = cov[(0, 1)];
        cov /= n;
        for (s, c) in m.sigma.iter().zip(cov.iter()) {
            assert!((s / c - 1.0).abs() < 0.1, "{s} vs {c}");
        }
    }

    #[test]
    fn short_epoch_rejected() {
        let e = BivariateEpoch::new(vec![0.0; 5], vec![0.0; 5], 25.0);
        assert!(matches!(fit_var(&[e], 6), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn constant_data_is_rank_deficient() {
        let e = BivariateEpoch::new(vec![1.0; 50], vec![2.0; 50], 25.0);
        assert_eq!(fit_var(&[e], 2), Err(Error::RankDeficient));
    }

    #[test]
    fn epoch_order_does_not_change_any_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = var1(0.3).simulate(2000, 100, &mut rng);
        let epochs = chunk(&data, 200);
        let forward = fit_var(&epochs, 3).unwrap();
        let mut rev = epochs.clone();
        rev.reverse();
        rev.swap(2, 5);
        let shuffled = fit_var(&rev, 3).unwrap();
        assert_eq!(forward, shuffled);
    }

    #[test]
    fn order_selection() {
        let p2 = VarModel::new(
            vec![Matrix2::new(0.2, 0.0, 0.0, 0.1), Matrix2::new(-0.6, 0.2, 0.3, -0.5)],
            Matrix2::identity(),
            25.0,
        )
        .unwrap();
        let wn = VarModel::new(vec![Matrix2::zeros()], Matrix2::identity(), 25.0).unwrap();
        let mut hits_p2 = 0;
        let mut hits_wn = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = p2.simulate(5000, 200, &mut rng);
            if select_order(&chunk(&d, 500), 8).unwrap() == 2 {
                hits_p2 += 1;
            }
            let d = wn.simulate(5000, 0, &mut rng);
            if select_order(&chunk(&d, 500), 8).unwrap() == 1 {
                hits_wn += 1;
            }
        }
        assert!(hits_p2 >= 18, "VAR(2) selected in {hits_p2}/20");
        assert!(hits_wn >= 16, "white noise order 1 in {hits_wn}/20");

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = wn.simulate(500, 0, &mut rng);
        assert_eq!(select_order(&[d], 1).unwrap(), 1);
    }

    #[test]
    fn stability_check() {
        assert!(var1(0.3).is_stable());
        let unstable = VarModel::new(vec![Matrix2::new(1.1, 0.0, 0.0, 0.2)], Matrix2::identity(), 25.0).unwrap();
        assert!(!unstable.is_stable());
        assert!((unstable.spectral_radius() - 1.1).abs() < 1e-12);
    }
}
