//! Small dense feed-forward networks: forward pass, backpropagation of a mean
//! squared error loss, Adam updates, and a mini-batch autoencoder trainer.
//!
//! Everything runs serially in `f64`, so a fixed seed gives bit-identical
//! weights regardless of how many worker threads the process has.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out_dim x in_dim`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        z += &self.biases;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "network needs at least one layer".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.biases.len() != layer.out_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i}: {} biases for {} outputs",
                    layer.biases.len(),
                    layer.out_dim()
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.biases)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(DenseNetwork { layers })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "{} layer widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput(
                "layer widths must be at least 1".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                DenseLayer {
                    weights,
                    biases: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        DenseNetwork::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input through every layer output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Activations> {
        if batch.ncols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "batch width {} but network expects {}",
                batch.ncols(),
                self.in_dim()
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(batch.to_owned());
        for layer in &self.layers {
            let next = layer.forward(outputs[outputs.len() - 1].view());
            outputs.push(next);
        }
        Ok(Activations { outputs })
    }

    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_through(batch, self.layers.len())
    }

    /// Output of the first `n_layers` layers.
    pub fn forward_through(
        &self,
        batch: ArrayView2<'_, f64>,
        n_layers: usize,
    ) -> Result<Array2<f64>> {
        if batch.ncols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "batch width {} but network expects {}",
                batch.ncols(),
                self.in_dim()
            )));
        }
        if n_layers == 0 || n_layers > self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "cannot stop after layer {n_layers} of {}",
                self.layers.len()
            )));
        }
        let mut out = self.layers[0].forward(batch);
        for layer in &self.layers[1..n_layers] {
            out = layer.forward(out.view());
        }
        Ok(out)
    }

    /// Run only layers `from..` on an intermediate representation.
    pub fn forward_from(&self, hidden: ArrayView2<'_, f64>, from: usize) -> Result<Array2<f64>> {
        let layer = self.layers.get(from).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no layer {from} in a {}-layer network",
                self.layers.len()
            ))
        })?;
        if hidden.ncols() != layer.in_dim() {
            return Err(Error::Dimension(format!(
                "input width {} but layer {from} expects {}",
                hidden.ncols(),
                layer.in_dim()
            )));
        }
        let mut out = layer.forward(hidden);
        for layer in &self.layers[from + 1..] {
            out = layer.forward(out.view());
        }
        Ok(out)
    }
}

/// Per-layer outputs of a forward pass; `outputs[0]` is the input batch and
/// `outputs[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub outputs: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        &self.outputs[self.outputs.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }
}

pub fn mse_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse of an empty batch".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Analytic gradients of `mse_loss(forward(x), target)` for every parameter.
pub fn backward(
    net: &DenseNetwork,
    activations: &Activations,
    target: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let outs = &activations.outputs;
    if outs.len() != net.layers.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} activation tensors for a {}-layer network",
            outs.len(),
            net.layers.len()
        )));
    }
    let batch = outs[0].nrows();
    for (i, a) in outs.iter().enumerate() {
        let width = if i == 0 {
            net.in_dim()
        } else {
            net.layers[i - 1].out_dim()
        };
        if a.dim() != (batch, width) {
            return Err(Error::Dimension(format!(
                "activation {i} has shape {:?}, expected {:?}",
                a.dim(),
                (batch, width)
            )));
        }
    }
    let pred = activations.output();
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }

    let scale = 2.0 / pred.len() as f64;
    let last = net.layers.len() - 1;
    let mut delta = (pred - &target) * scale;
    let mut grads = Vec::with_capacity(net.layers.len());
    for i in (0..=last).rev() {
        let layer = &net.layers[i];
        let act = layer.activation;
        ndarray::Zip::from(&mut delta)
            .and(&outs[i + 1])
            .for_each(|d, &y| *d *= act.derivative_from_output(y));
        let weights = delta.t().dot(&outs[i]);
        let biases = delta.sum_axis(Axis(0));
        grads.push(LayerGradient { weights, biases });
        if i > 0 {
            delta = delta.dot(&layer.weights);
        }
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork, config: AdamConfig) -> Result<Self> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(config.beta1) || !ok(config.beta2) {
            return Err(Error::InvalidInput(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                config.beta1, config.beta2
            )));
        }
        Ok(AdamState {
            config,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step: 0,
        })
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(net: &mut DenseNetwork, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.first_moment.layers.len() != net.layers.len()
    {
        return Err(Error::Dimension(
            "gradient/network layer count mismatch".into(),
        ));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
        if g.weights.dim() != l.weights.dim() || g.biases.len() != l.biases.len() {
            return Err(Error::Dimension(format!(
                "gradient shape mismatch at layer {i}"
            )));
        }
        if g.weights.iter().chain(&g.biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {i}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };

    for (i, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[i];
        let m = &mut state.first_moment.layers[i];
        let v = &mut state.second_moment.layers[i];
        ndarray::Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.biases)
            .and(&g.biases)
            .and(&mut m.biases)
            .and(&mut v.biases)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 256,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs and batch_size must be at least 1, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Train a reconstruction network `dims[0] -> ... -> dims[last]` with ReLU
/// hidden layers and a sigmoid output, by mini-batch Adam on MSE.
///
/// Returns the network and the mean training loss of each epoch.
pub fn train_autoencoder(
    data: ArrayView2<'_, f64>,
    layer_dims: &[usize],
    config: &TrainConfig,
) -> Result<(DenseNetwork, Vec<f64>)> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(Error::InvalidInput(
            "cannot train on an empty matrix".into(),
        ));
    }
    if layer_dims.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "autoencoder needs input, hidden and output widths, got {layer_dims:?}"
        )));
    }
    let (first, last) = (layer_dims[0], layer_dims[layer_dims.len() - 1]);
    if first != data.ncols() || last != data.ncols() {
        return Err(Error::Dimension(format!(
            "autoencoder widths {layer_dims:?} must start and end with {}",
            data.ncols()
        )));
    }

    let n_layers = layer_dims.len() - 1;
    let mut activations = vec![Activation::Relu; n_layers];
    activations[n_layers - 1] = Activation::Sigmoid;

    let mut net = DenseNetwork::init(
        layer_dims,
        &activations,
        seed::derive_seed(config.seed, "init"),
    )?;
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let mut shuffle_rng = seed::rng(seed::derive_seed(config.seed, "shuffle"));
    let n = data.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let acts = net.forward(batch.view())?;
            weighted += mse_loss(acts.output().view(), batch.view())? * chunk.len() as f64;
            let grads = backward(&net, &acts, batch.view())?;
            adam_step(&mut net, &grads, &mut adam)?;
        }
        let loss = weighted / n as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged to {loss}")));
        }
        losses.push(loss);
    }
    Ok((net, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub losses: Vec<f64>,
}

/// Persist as `model.json` plus `weights.bin`: every layer's weights
/// (row-major, layer order) followed by every layer's biases, as `f64` LE.
pub fn save_model(
    net: &DenseNetwork,
    config: Option<&TrainConfig>,
    losses: &[f64],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = ModelMeta {
        layer_dims: net.dims(),
        activations: net.layers.iter().map(|l| l.activation).collect(),
        seed: config.map(|c| c.seed),
        config: config.copied(),
        losses: losses.to_vec(),
    };
    let meta_path = dir.join(MODEL_FILE);
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::header(&meta_path, e.to_string()))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    let mut payload = Vec::with_capacity(net.parameter_count() * 8);
    for layer in &net.layers {
        for v in layer.weights.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for layer in &net.layers {
        for v in layer.biases.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, payload).map_err(|e| Error::io(&weights_path, e))
}

pub fn load_model(dir: &Path) -> Result<(DenseNetwork, ModelMeta)> {
    let meta_path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta =
        serde_json::from_str(&text).map_err(|e| Error::header(&meta_path, e.to_string()))?;
    if meta.layer_dims.len() < 2 || meta.activations.len() != meta.layer_dims.len() - 1 {
        return Err(Error::header(
            &meta_path,
            "layer_dims and activations disagree",
        ));
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let dims = &meta.layer_dims;
    let n_weights: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
    let n_biases: usize = dims[1..].iter().sum();
    let expected = (n_weights + n_biases) * 8;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: bytes.len(),
        });
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut weights = Vec::new();
    for w in dims.windows(2) {
        let flat: Vec<f64> = values.by_ref().take(w[0] * w[1]).collect();
        weights.push(
            Array2::from_shape_vec((w[1], w[0]), flat)
                .map_err(|e| Error::Dimension(e.to_string()))?,
        );
    }
    let layers = weights
        .into_iter()
        .zip(&meta.activations)
        .zip(&dims[1..])
        .map(|((weights, &activation), &out)| DenseLayer {
            weights,
            biases: values.by_ref().take(out).collect(),
            activation,
        })
        .collect();
    Ok((DenseNetwork::new(layers)?, meta))
}
