//! The fit -> spectrum -> causality chain shared by the per-dyad analysis
//! and the permutation null.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggc::{ggc_spectrum, GgcSpectrum};
use crate::var::{
    fit_var, frequency_grid, select_order, spectral_matrix, welch_spectral_matrix,
    wilson_decomposition, BivariateEpoch, VarModel, WilsonOptions, DEFAULT_FREQ_STEP_HZ,
    DEFAULT_MAX_ORDER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSelection {
    Fixed(usize),
    Aic { max_order: usize },
}

impl Default for OrderSelection {
    fn default() -> Self {
        OrderSelection::Aic {
            max_order: DEFAULT_MAX_ORDER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    /// VAR fit, then `H`, `Sigma`, `S` from the model.
    #[default]
    Parametric,
    /// Welch spectral matrix, then Wilson factorization. The grid spacing is
    /// `fs / segment_len`.
    Nonparametric { segment_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GgcEstimator {
    pub order: OrderSelection,
    pub method: SpectralMethod,
    /// Grid spacing in Hz; the grid runs from 0 to the Nyquist frequency.
    pub freq_step: f64,
    /// Upper end of the parametric grid, capped at the Nyquist frequency.
    pub freq_max: Option<f64>,
    #[serde(skip)]
    pub wilson: WilsonOptions,
}

impl Default for GgcEstimator {
    fn default() -> Self {
        GgcEstimator {
            order: OrderSelection::default(),
            method: SpectralMethod::default(),
            freq_step: DEFAULT_FREQ_STEP_HZ,
            freq_max: None,
            wilson: WilsonOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GgcEstimate {
    pub spectrum: GgcSpectrum,
    /// Present for the parametric route.
    pub model: Option<VarModel>,
}

impl GgcEstimator {
    pub fn estimate(&self, epochs: &[BivariateEpoch]) -> Result<GgcEstimate> {
        let fs = epochs
            .first()
            .ok_or_else(|| Error::NoData("no epochs to analyze".into()))?
            .fs;
        match self.method {
            SpectralMethod::Parametric => {
                let order = match self.order {
                    OrderSelection::Fixed(p) => p,
                    OrderSelection::Aic { max_order } => select_order(epochs, max_order)?,
                };
                let model = fit_var(epochs, order)?;
                let freqs = frequency_grid(self.freq_step, self.freq_max.map_or(fs / 2.0, |m| m.min(fs / 2.0)))?;
                let spectrum = ggc_spectrum(&spectral_matrix(&model, &freqs)?)?;
                Ok(GgcEstimate {
                    spectrum,
                    model: Some(model),
                })
            }
            SpectralMethod::Nonparametric { segment_len } => {
                let (freqs, s) = welch_spectral_matrix(epochs, segment_len)?;
                let decomp = wilson_decomposition(&freqs, &s, fs, self.wilson)?;
                Ok(GgcEstimate {
                    spectrum: ggc_spectrum(&decomp)?,
                    model: None,
                })
            }
        }
    }

    pub fn spectrum(&self, epochs: &[BivariateEpoch]) -> Result<GgcSpectrum> {
        Ok(self.estimate(epochs)?.spectrum)
    }
}
