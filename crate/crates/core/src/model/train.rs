use awe_tensorkit::{sgd_nesterov_step, Graph, Tensor, TensorError, Var};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, SoftmaxMode};
use super::network::{build_network, forward, pack_batch, NetworkParams};
use super::total_loss;
use crate::corpus::{PairIndex, WordInstance};
use crate::error::{Error, Result};
use crate::features::{pad_or_clip, FeatureSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean joint loss over the epoch's pairs.
    pub total_loss: f64,
    /// Mean of the two cross-entropy terms combined.
    pub ce_loss: f64,
    pub mse_loss: f64,
    /// Fraction of anchor and partner items classified correctly.
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

fn non_finite(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

fn argmax_hits(logits: &Tensor<f32>, targets: &[usize], ranges: &[(usize, usize)]) -> usize {
    let n = logits.shape()[1];
    logits
        .data()
        .chunks(n)
        .zip(targets)
        .zip(ranges)
        .filter(|((row, &t), &(b, e))| {
            let best = (b..e)
                .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
                .expect("non-empty block");
            best == t
        })
        .count()
}

/// Scales all gradients by a common factor so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
    norm
}

pub fn train(cfg: &ModelConfig, instances: &[WordInstance]) -> Result<(NetworkParams<f32>, TrainReport)> {
    train_with_progress(cfg, instances, |_| {})
}

/// Minibatch SGD with Nesterov momentum on the joint objective. Each
/// epoch shuffles the anchors, samples one other-speaker partner per
/// anchor and reduces the learning rate when the epoch loss plateaus.
pub fn train_with_progress(
    cfg: &ModelConfig,
    instances: &[WordInstance],
    mut progress: impl FnMut(&EpochStats),
) -> Result<(NetworkParams<f32>, TrainReport)> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::validation("instances", "training set is empty"));
    }
    let layout = cfg.layout()?;
    for inst in instances {
        let (b, e) = layout.block(inst.language_id)?;
        if inst.word_id < b || inst.word_id >= e {
            return Err(Error::validation(
                "word_id",
                format!(
                    "word {} is outside the block [{b}, {e}) of language {}",
                    inst.word_id, inst.language_id
                ),
            ));
        }
    }
    let segments: Vec<FeatureSequence> = instances
        .iter()
        .map(|i| match cfg.segment_frames {
            Some(w) => pad_or_clip(&i.features, w),
            None => Ok(i.features.clone()),
        })
        .collect::<Result<_>>()?;
    let pairs = PairIndex::new(instances);
    if pairs.anchors().len() < instances.len() {
        warn!(
            "{} training instances have no other-speaker partner; they are paired with themselves",
            instances.len() - pairs.anchors().len()
        );
    }

    let mut params = build_network(cfg)?;
    let mut velocity: Vec<Tensor<f32>> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut lr = cfg.lr0;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut report = TrainReport::default();
    let alpha = cfg.alpha as f32;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_ce, mut sum_mse, mut hits) = (0.0, 0.0, 0.0, 0usize);
        for (batch_no, anchors) in order.chunks(cfg.batch_size).enumerate() {
            let partners: Vec<usize> = anchors
                .iter()
                .map(|&a| pairs.partner(instances, a, &mut rng).unwrap_or(a))
                .collect();
            let targets = |idx: &[usize]| idx.iter().map(|&i| instances[i].word_id).collect::<Vec<_>>();
            let (ta, tp) = (targets(anchors), targets(&partners));
            let langs: Vec<usize> = anchors.iter().map(|&i| instances[i].language_id).collect();
            let ranges: Vec<(usize, usize)> = match cfg.softmax_mode {
                SoftmaxMode::One => vec![(0, cfg.num_outputs()); anchors.len()],
                SoftmaxMode::Block => langs.iter().map(|&l| layout.block(l)).collect::<Result<_, _>>()?,
            };
            let block = match cfg.softmax_mode {
                SoftmaxMode::One => None,
                SoftmaxMode::Block => Some((&layout, langs.as_slice())),
            };

            let mut g = Graph::<f32>::new();
            let vars: Vec<Var> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
            let side = |g: &mut Graph<f32>, idx: &[usize]| {
                let seqs: Vec<&FeatureSequence> = idx.iter().map(|&i| &segments[i]).collect();
                let (x, lens) = pack_batch::<f32>(cfg, &seqs)?;
                let x = g.constant(x);
                forward(g, cfg, &vars, x, &lens)
            };
            let fa = side(&mut g, anchors)?;
            let fp = side(&mut g, &partners)?;
            let terms = total_loss(&mut g, &fa, &fp, &ta, &tp, alpha, block).map_err(non_finite(epoch, batch_no))?;
            let total = g.value(terms.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
            g.backward(terms.total)
                .map_err(|e| non_finite(epoch, batch_no)(e.into()))?;

            let n = anchors.len() as f64;
            sum_total += total * n;
            sum_ce += (g.value(terms.ce_anchor).item() + g.value(terms.ce_partner).item()) as f64 * n;
            sum_mse += g.value(terms.mse).item() as f64 * n;
            hits += argmax_hits(g.value(fa.logits), &ta, &ranges) + argmax_hits(g.value(fp.logits), &tp, &ranges);

            let mut grads: Vec<Tensor<f32>> = vars
                .iter()
                .zip(&params.tensors)
                .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            if let Some(max_norm) = cfg.grad_clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            sgd_nesterov_step(
                &mut params.tensors,
                &grads,
                &mut velocity,
                lr as f32,
                cfg.momentum as f32,
            )?;
        }

        let n = instances.len() as f64;
        let stats = EpochStats {
            epoch,
            total_loss: sum_total / n,
            ce_loss: sum_ce / n,
            mse_loss: sum_mse / n,
            accuracy: hits as f64 / (2.0 * n),
            lr,
        };
        info!(
            "epoch {epoch}: loss {:.4} (ce {:.4}, mse {:.4}) acc {:.3} lr {lr}",
            stats.total_loss, stats.ce_loss, stats.mse_loss, stats.accuracy
        );
        progress(&stats);
        if stats.total_loss < best {
            best = stats.total_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.lr_patience {
                lr = (lr * cfg.lr_factor).max(cfg.min_lr.min(lr));
                stale = 0;
            }
        }
        report.epochs.push(stats);
    }
    Ok((params, report))
}
