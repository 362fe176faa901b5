//! Feed-forward embedding network with hand-written backpropagation.
//!
//! Layout: `input → [affine → ReLU]* → affine → embedding`. Weight matrices
//! are row-major with one row per output unit.

use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{DigraphVocabulary, FeatureSet, NormStats};
use crate::math::{exp, sqrt};
use crate::{Error, Result};

/// Temperature of the distance-to-similarity transform.
pub const DEFAULT_TAU: f64 = 10.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_EMBED_DIM: usize = 32;
/// Normalized inputs are clamped to `±INPUT_CLIP` before the first layer.
pub const INPUT_CLIP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub tau: f64,
    pub seed: u64,
}

impl NetworkConfig {
    /// The standard 128-64-32 network for one input configuration.
    pub fn for_features(set: FeatureSet, seed: u64) -> Self {
        Self {
            input_dim: set.dim(),
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            tau: DEFAULT_TAU,
            seed,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims().contains(&0) {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument("tau must be positive and finite".into()));
        }
        Ok(())
    }
}

/// One affine layer. `weights` holds `rows * cols` values, row-major, with
/// `rows` outputs and `cols` inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: alloc::vec![0.0; rows * cols], bias: alloc::vec![0.0; rows] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weights plus everything needed to turn a raw feature vector into an
/// embedding: the frozen normalization and the digraph vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<Dense>,
    pub norm: NormStats,
    pub vocab: DigraphVocabulary,
}

/// Glorot-uniform weights from a ChaCha stream seeded by `cfg.seed`, zero
/// biases, identity normalization and an empty vocabulary.
pub fn init_network(cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.layer_dims();
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = sqrt(6.0 / (fan_in + fan_out) as f64);
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
            let mut layer = Dense::zeros(fan_out, fan_in);
            layer.weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            layer
        })
        .collect();
    Ok(Network {
        config: cfg.clone(),
        layers,
        norm: NormStats::identity(cfg.input_dim),
        vocab: DigraphVocabulary::empty(),
    })
}

/// Layer inputs and hidden pre-activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[l]` is the input to layer `l`.
    pub inputs: Vec<Vec<f64>>,
    /// `pre[l]` is layer `l`'s affine output before the activation.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Network {
    pub fn feature_set(&self) -> Option<FeatureSet> {
        FeatureSet::from_dim(self.config.input_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Embeds an already normalized input.
    pub fn forward(&self, x: &[f64]) -> Result<Embedding> {
        self.check_input(x)?;
        Ok(Embedding(self.trace(x).output))
    }

    /// Normalizes a raw feature vector with the frozen statistics and clamps
    /// it to `±INPUT_CLIP`.
    pub fn prepare_input(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.norm.normalize(raw)?;
        x.iter_mut().for_each(|v| *v = v.clamp(-INPUT_CLIP, INPUT_CLIP));
        Ok(x)
    }

    /// Raw feature vector to embedding.
    pub fn embed(&self, raw: &[f64]) -> Result<Embedding> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        self.forward(&self.prepare_input(raw)?)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch { expected: self.config.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Forward pass that keeps what [`Network::backward`] needs. The input
    /// is assumed to have the right dimension.
    pub fn trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&current);
            inputs.push(current);
            if l == last {
                current = z;
            } else {
                current = z.iter().map(|v| v.max(0.0)).collect();
                pre.push(z);
            }
        }
        Trace { inputs, pre, output: current }
    }

    /// Accumulates parameter gradients for one sample into `grads`, given
    /// the loss gradient with respect to the embedding.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut Gradients) {
        let mut g = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let acc = &mut grads.layers[l];
            for (r, gr) in g.iter().enumerate() {
                if *gr == 0.0 {
                    continue;
                }
                acc.bias[r] += gr;
                let row = &mut acc.weights[r * layer.cols..(r + 1) * layer.cols];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += gr * x);
            }
            if l == 0 {
                break;
            }
            let mut prev = alloc::vec![0.0; layer.cols];
            for (r, gr) in g.iter().enumerate() {
                if *gr == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += gr * w);
            }
            // ReLU: gradient passes only where the pre-activation was positive.
            for (p, z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            g = prev;
        }
    }
}

/// Parameter gradients with the same shapes as the network layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self { layers: net.layers.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-‖a - b‖² / tau)`, in `(0, 1]` and decreasing in distance.
pub fn embed_similarity_with_tau(a: &Embedding, b: &Embedding, tau: f64) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::DimensionMismatch { expected: a.0.len(), got: b.0.len() });
    }
    Ok(exp(-squared_distance(&a.0, &b.0) / tau))
}

pub fn embed_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    embed_similarity_with_tau(a, b, DEFAULT_TAU)
}
