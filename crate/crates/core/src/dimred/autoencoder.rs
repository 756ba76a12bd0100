use ndarray::{Array2, ArrayView2};

use super::{LatentMatrix, Producer};
use crate::error::{Error, Result};
use crate::neuralnet::{train_autoencoder, DenseNetwork, TrainConfig};
use crate::preprocess::ScalingParams;
use crate::seed;

#[derive(Debug, Clone)]
pub struct CanonicalReduction {
    pub latent: LatentMatrix,
    pub network: DenseNetwork,
    pub losses: Vec<f64>,
}

impl CanonicalReduction {
    pub fn reconstruct(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.network.predict(data)
    }
}

#[derive(Debug, Clone)]
pub struct StackedReduction {
    pub latent: LatentMatrix,
    pub first: DenseNetwork,
    pub second: DenseNetwork,
    pub first_losses: Vec<f64>,
    pub second_losses: Vec<f64>,
    /// Min-max bounds applied to the first hidden layer before stage two.
    pub hidden_scaling: ScalingParams,
    /// Exactly what stage two was trained on.
    pub stage_two_input: Array2<f64>,
}

impl StackedReduction {
    /// Encode through both stages and decode back through both decoders.
    pub fn reconstruct(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let hidden = self.first.forward_through(data, 1)?;
        let scaled = self.hidden_scaling.apply(hidden.view())?;
        let hidden_back = self.second.predict(scaled.view())?;
        let unscaled = self.hidden_scaling.invert(hidden_back.view())?;
        self.first.forward_from(unscaled.view(), 1)
    }
}

fn check_unit_range(data: ArrayView2<'_, f64>) -> Result<()> {
    if data.nrows() == 0 {
        return Err(Error::InvalidInput("cannot reduce an empty matrix".into()));
    }
    match data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidInput(format!(
            "autoencoder input must be scaled to [0, 1], found {v}"
        ))),
        None => Ok(()),
    }
}

/// Train `n_bands -> latent_dim (relu) -> n_bands (sigmoid)` and return the
/// hidden activations of every pixel.
pub fn canonical_reduce(
    data: ArrayView2<'_, f64>,
    latent_dim: usize,
    config: &TrainConfig,
) -> Result<CanonicalReduction> {
    check_unit_range(data)?;
    let n = data.ncols();
    if latent_dim == 0 || latent_dim > n {
        return Err(Error::Config(format!(
            "latent width must lie in 1..={n}, got {latent_dim}"
        )));
    }
    let (network, losses) = train_autoencoder(data, &[n, latent_dim, n], config)?;
    let hidden = network.forward_through(data, 1)?;
    Ok(CanonicalReduction {
        latent: LatentMatrix::new(hidden, Producer::CanonicalAe)?,
        network,
        losses,
    })
}

/// Greedy layer-wise stacking: `n -> h1 -> n` on the input, then
/// `h1 -> h2 -> h1` on the first hidden layer rescaled to [0, 1]. The final
/// latent is the second hidden layer. No joint fine-tuning follows.
pub fn stacked_reduce(
    data: ArrayView2<'_, f64>,
    (h1, h2): (usize, usize),
    config: &TrainConfig,
) -> Result<StackedReduction> {
    check_unit_range(data)?;
    let n = data.ncols();
    if !(n >= h1 && h1 >= h2 && h2 >= 1) {
        return Err(Error::Config(format!(
            "stacked widths must satisfy {n} >= h1 >= h2 >= 1, got ({h1}, {h2})"
        )));
    }
    let first_cfg = TrainConfig {
        seed: seed::derive_seed(config.seed, "stage1"),
        ..*config
    };
    let (first, first_losses) = train_autoencoder(data, &[n, h1, n], &first_cfg)?;
    let hidden = first.forward_through(data, 1)?;
    let hidden_scaling = ScalingParams::fit(hidden.view())?;
    let stage_two_input = hidden_scaling.apply(hidden.view())?;

    let second_cfg = TrainConfig {
        seed: seed::derive_seed(config.seed, "stage2"),
        ..*config
    };
    let (second, second_losses) =
        train_autoencoder(stage_two_input.view(), &[h1, h2, h1], &second_cfg)?;
    let latent = second.forward_through(stage_two_input.view(), 1)?;
    Ok(StackedReduction {
        latent: LatentMatrix::new(latent, Producer::StackedAe)?,
        first,
        second,
        first_losses,
        second_losses,
        hidden_scaling,
        stage_two_input,
    })
}
