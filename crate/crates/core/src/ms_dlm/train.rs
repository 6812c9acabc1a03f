use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossBreakdown, MsDlm};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::token_codec::{AssembledExample, Special, TokenKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub init_lr: f64,
    pub max_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 1,
            warmup_steps: 100,
            init_lr: 1e-7,
            max_lr: 2e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            log_every: 50,
        }
    }
}

/// Inverse square-root schedule: linear warmup from `init_lr` to `max_lr`,
/// then decay proportional to `1 / sqrt(step)`. `step` counts from 1.
pub fn inverse_sqrt_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps.max(1) as f64;
    let s = step as f64;
    if s < w {
        cfg.init_lr + (cfg.max_lr - cfg.init_lr) * s / w
    } else {
        cfg.max_lr * (w / s).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_per_edge: f64,
    pub eu_per_edge: f64,
    pub ed_per_edge: f64,
    pub grad_norm: f64,
}

/// Optimize the summed edge losses with Adam, each step on a batch of
/// examples drawn from a seeded shuffle. The gradient is normalized by the
/// number of edges in the batch.
pub fn train(model: &mut MsDlm, data: &[AssembledExample], cfg: &TrainConfig) -> Result<Vec<TrainRecord>> {
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("batch_size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params.len(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::new();
    let mut grad = vec![0.0; model.params.len()];
    let mut window = LossBreakdown::default();
    for step in 1..=cfg.steps {
        grad.fill(0.0);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().unwrap());
        }
        let mut total = LossBreakdown::default();
        for &i in &batch {
            let l = model.loss_and_grad(&data[i], &mut grad, 1.0)?;
            total.add(&l);
        }
        let norm_by = total.edges.max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= norm_by);
        if !total.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite loss at step {step} (eu {}, ed {}); lower the learning rate",
                total.eu, total.ed
            )));
        }
        let grad_norm = clip_grad_norm(&mut grad, cfg.clip_norm);
        let lr = inverse_sqrt_lr(step, cfg);
        adam.update(&mut model.params, &grad, lr);
        window.add(&total);
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            let rec = TrainRecord {
                step,
                lr,
                loss_per_edge: window.total() / window.edges.max(1) as f64,
                eu_per_edge: window.eu_per_edge(),
                ed_per_edge: window.ed_per_edge(),
                grad_norm,
            };
            log::info!(
                "step {step}: loss/edge {:.4} (unit {:.4}, duration {:.4}) lr {lr:.2e}",
                rec.loss_per_edge,
                rec.eu_per_edge,
                rec.ed_per_edge
            );
            records.push(rec);
            window = LossBreakdown::default();
        }
    }
    Ok(records)
}

/// Train on single-channel examples whose prefix is `BOS, speaker, phonemes…, SEP`.
pub fn pretrain_single_channel(
    model: &mut MsDlm,
    data: &[AssembledExample],
    cfg: &TrainConfig,
) -> Result<Vec<TrainRecord>> {
    let v = &model.vocab;
    for (i, ex) in data.iter().enumerate() {
        if ex.channels.len() != 1 {
            return Err(Error::input(format!("pre-training example {i} has {} channels", ex.channels.len())));
        }
        let prefix = &ex.channels[0].content.input[..ex.prefix_len];
        let ok = prefix.len() >= 3
            && prefix[0] == v.special(Special::Bos)
            && v.kind(prefix[1]) == Some(TokenKind::Speaker)
            && *prefix.last().unwrap() == v.special(Special::Sep)
            && prefix[2..prefix.len() - 1].iter().all(|&t| {
                matches!(v.kind(t), Some(TokenKind::Phoneme))
                    || t == v.special(Special::Lau)
                    || t == v.special(Special::Unk)
            });
        if !ok {
            return Err(Error::input(format!(
                "pre-training example {i} does not use the BOS, speaker, phonemes, SEP prefix"
            )));
        }
    }
    train(model, data, cfg)
}
