//! Dimensionality reducers producing latent features for clustering: PCA, a
//! single-hidden-layer autoencoder, and a greedily stacked pair of them.

mod autoencoder;
pub mod eigen;
mod pca;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use autoencoder::{canonical_reduce, stacked_reduce, CanonicalReduction, StackedReduction};
pub use pca::{covariance, pca_fit, pca_transform, PcaModel, COMPONENTS_FILE, PCA_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Pca,
    CanonicalAe,
    StackedAe,
}

impl Producer {
    pub fn as_str(self) -> &'static str {
        match self {
            Producer::Pca => "pca",
            Producer::CanonicalAe => "canonical_ae",
            Producer::StackedAe => "stacked_ae",
        }
    }
}

/// `n_pixels x m` latent features.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub values: Array2<f64>,
    pub producer: Producer,
}

impl LatentMatrix {
    pub fn new(values: Array2<f64>, producer: Producer) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} latent features",
                producer.as_str()
            )));
        }
        Ok(LatentMatrix { values, producer })
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Latent widths tied to the PCA width `m_pca`: the canonical autoencoder
/// uses `m_pca`, the stacked one `(ceil((n_bands + m_pca) / 2), m_pca)`.
pub fn matched_widths(n_bands: usize, m_pca: usize) -> (usize, (usize, usize)) {
    let h1 = (n_bands + m_pca).div_ceil(2);
    (m_pca, (h1, m_pca))
}
