//! Training loop for the embedding network.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::features::{fit_norm_stats, DigraphVocabulary};
use crate::loss::npair_loss;
use crate::math::sqrt;
use crate::nn::{init_network, Gradients, Network, NetworkConfig};
use crate::sampling::BatchSampler;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Users per batch; each contributes an anchor and a positive.
    pub batch_users: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch. `None` means one pass worth of users,
    /// `eligible_users / batch_users`.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_users: 32,
            epochs: 150,
            steps_per_epoch: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Adaptive-moment optimizer state, one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(net: &Network, cfg: &TrainConfig) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn update(&mut self, net: &mut Network, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = net.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let g = grads.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias));
        let m = self.m.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let v = self.v.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (sqrt(v_hat) + eps);
        }
    }
}

/// Loss and accumulated parameter gradients for one batch of prepared
/// (normalized) inputs.
pub fn batch_gradients<A: AsRef<[f64]>>(net: &Network, anchors: &[A], positives: &[A]) -> Result<(f64, Gradients)> {
    let ta: Vec<_> = anchors.iter().map(|x| net.trace(x.as_ref())).collect();
    let tp: Vec<_> = positives.iter().map(|x| net.trace(x.as_ref())).collect();
    let ea: Vec<&[f64]> = ta.iter().map(|t| t.output.as_slice()).collect();
    let ep: Vec<&[f64]> = tp.iter().map(|t| t.output.as_slice()).collect();
    let out = npair_loss(&ea, &ep)?;
    let mut grads = Gradients::zeros_like(net);
    for (t, g) in ta.iter().zip(&out.grad_anchors).chain(tp.iter().zip(&out.grad_positives)) {
        net.backward(t, g, &mut grads);
    }
    Ok((out.loss, grads))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

/// Trains one embedding network.
///
/// `users` holds the raw feature vectors of each training user's sessions.
/// Normalization statistics are fitted on all of them and frozen into the
/// returned network together with `vocab`. Training is single-threaded and
/// fully determined by the two configs.
pub fn train(
    users: &[Vec<Vec<f64>>],
    vocab: &DigraphVocabulary,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_cfg.batch_users < 2 {
        return Err(Error::BatchTooSmall(train_cfg.batch_users));
    }
    let eligible = users.iter().filter(|u| u.len() >= 2).count();
    if eligible < train_cfg.batch_users {
        return Err(Error::InsufficientUsers { needed: train_cfg.batch_users, found: eligible });
    }
    let all: Vec<&[f64]> = users.iter().flatten().map(Vec::as_slice).collect();
    for v in &all {
        if v.len() != net_cfg.input_dim {
            return Err(Error::DimensionMismatch { expected: net_cfg.input_dim, got: v.len() });
        }
    }

    let mut net = init_network(net_cfg)?;
    net.norm = fit_norm_stats(&all)?;
    net.vocab = vocab.clone();

    let inputs: Vec<Vec<f64>> = all.iter().map(|v| net.prepare_input(v)).collect::<Result<_>>()?;
    let mut groups = Vec::with_capacity(users.len());
    let mut next = 0;
    for u in users {
        groups.push((next..next + u.len()).collect::<Vec<_>>());
        next += u.len();
    }
    let mut sampler = BatchSampler::new(groups, train_cfg.seed);
    let steps = train_cfg.steps_per_epoch.unwrap_or(eligible / train_cfg.batch_users).max(1);
    let mut adam = Adam::new(&net, train_cfg);
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut sum = 0.0;
        for step in 0..steps {
            let (a, p) = sampler.next_batch(train_cfg.batch_users)?;
            let anchors: Vec<&[f64]> = a.iter().map(|&i| inputs[i].as_slice()).collect();
            let positives: Vec<&[f64]> = p.iter().map(|&i| inputs[i].as_slice()).collect();
            let (loss, grads) = batch_gradients(&net, &anchors, &positives)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, step });
            }
            adam.update(&mut net, &grads);
            if !net.is_finite() {
                return Err(Error::DivergedLoss { epoch, step });
            }
            sum += loss;
        }
        history.push(sum / steps as f64);
    }
    Ok(TrainOutcome { network: net, history })
}
