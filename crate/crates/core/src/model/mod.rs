//! Acoustic word embedding network, joint training objective and model files.

mod config;
mod io;
mod network;
mod train;

use awe_tensorkit::{grad_check, BlockLayout, GradCheckReport, Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, SoftmaxMode};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{build_network, forward, pack_batch, param_specs, Forward, NetworkParams, ParamSpec, MIN_FRAMES};
pub use train::{clip_global_norm, train, train_with_progress, EpochStats, TrainReport};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// Pooled network output for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// `ce1 + ce2 + alpha · mse`.
pub fn combine_losses(ce1: f64, ce2: f64, mse: f64, alpha: f64) -> f64 {
    ce1 + ce2 + alpha * mse
}

pub struct LossTerms {
    pub total: Var,
    pub ce_anchor: Var,
    pub ce_partner: Var,
    pub mse: Var,
}

/// Records the joint objective for a batch of (anchor, partner) pairs:
/// cross-entropy of each side plus `alpha` times the embedding MSE. With a
/// layout, `langs` gives each pair's language and both sides are
/// normalized over that language's block only.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    anchor: &Forward,
    partner: &Forward,
    anchor_targets: &[usize],
    partner_targets: &[usize],
    alpha: T,
    block: Option<(&BlockLayout, &[usize])>,
) -> Result<LossTerms> {
    let ce_anchor = g.cross_entropy(anchor.logits, anchor_targets, block)?;
    let ce_partner = g.cross_entropy(partner.logits, partner_targets, block)?;
    let mse = g.mse(anchor.embeddings, partner.embeddings)?;
    let ce = g.add(ce_anchor, ce_partner)?;
    let weighted = g.scale(mse, alpha);
    let total = g.add(ce, weighted)?;
    Ok(LossTerms {
        total,
        ce_anchor,
        ce_partner,
        mse,
    })
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AweModel {
    pub config: ModelConfig,
    pub params: NetworkParams<f32>,
}

/// Segments embedded per forward pass by [`AweModel::embed_all`].
pub const EMBED_CHUNK: usize = 32;

impl AweModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = build_network(&config)?;
        Ok(Self { config, params })
    }

    /// Inference forward: embeddings and classifier activations.
    pub fn forward_batch(&self, seqs: &[&FeatureSequence]) -> Result<(Vec<Embedding>, Tensor<f32>)> {
        let (x, lens) = pack_batch::<f32>(&self.config, seqs)?;
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.tensors.iter().map(|t| g.constant(t.clone())).collect();
        let input = g.constant(x);
        let out = forward(&mut g, &self.config, &vars, input, &lens)?;
        let emb = g.value(out.embeddings);
        let d = self.params.embedding_dim;
        let embeddings = (0..seqs.len())
            .map(|b| Embedding(emb.data()[b * d..(b + 1) * d].to_vec()))
            .collect();
        Ok((embeddings, g.value(out.logits).clone()))
    }

    /// Embedding of a single segment.
    pub fn extract_embedding(&self, seq: &FeatureSequence) -> Result<Embedding> {
        let (mut e, _) = self.forward_batch(&[seq])?;
        Ok(e.pop().expect("one item"))
    }

    /// Embeds many segments in fixed-size chunks.
    pub fn embed_all(&self, seqs: &[FeatureSequence]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EMBED_CHUNK) {
            let refs: Vec<&FeatureSequence> = chunk.iter().collect();
            out.extend(self.forward_batch(&refs)?.0);
        }
        Ok(out)
    }
}

/// One side of a gradient-check batch: segments with their word targets.
pub struct CheckBatch<'a> {
    pub anchors: &'a [&'a FeatureSequence],
    pub partners: &'a [&'a FeatureSequence],
    pub anchor_targets: &'a [usize],
    pub partner_targets: &'a [usize],
    /// Per-pair language, used in block softmax mode.
    pub langs: &'a [usize],
}

/// Central-difference check of the joint objective's gradient with
/// respect to every network parameter, in 64-bit arithmetic.
pub fn gradient_check(
    cfg: &ModelConfig,
    params: &NetworkParams<f32>,
    batch: &CheckBatch<'_>,
    h: f64,
) -> Result<GradCheckReport> {
    let params64 = params.cast::<f64>();
    let (xa, la) = pack_batch::<f64>(cfg, batch.anchors)?;
    let (xp, lp) = pack_batch::<f64>(cfg, batch.partners)?;
    let layout = cfg.layout()?;
    let block = match cfg.softmax_mode {
        SoftmaxMode::One => None,
        SoftmaxMode::Block => Some((&layout, batch.langs)),
    };
    let mut failure = None;
    let report = grad_check(&params64.tensors, None, h, |g, vars| {
        let a = g.constant(xa.clone());
        let p = g.constant(xp.clone());
        let run = |g: &mut Graph<f64>| -> Result<Var> {
            let fa = forward(g, cfg, vars, a, &la)?;
            let fp = forward(g, cfg, vars, p, &lp)?;
            Ok(total_loss(
                g,
                &fa,
                &fp,
                batch.anchor_targets,
                batch.partner_targets,
                cfg.alpha,
                block,
            )?
            .total)
        };
        run(g).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            awe_tensorkit::TensorError::Invalid {
                op: "gradient_check",
                msg,
            }
        })
    });
    match (report, failure) {
        (Ok(r), _) => Ok(r),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(Error::from(e)),
    }
}
