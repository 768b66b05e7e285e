//! Residual embedding network: a 7×7 stride-2 stem with 2×2 max pooling,
//! four residual stages, length-masked global average pooling (the
//! embedding) and a fully connected word classifier.
//!
//! Residual blocks are `conv3×3 → ReLU → conv3×3`, added to the identity
//! (or a strided 1×1 projection when the shape changes) and followed by
//! ReLU. There is no normalization layer. After every layer, time steps past
//! an item's valid length are zeroed so that padding never leaks into the
//! pooled embedding.

use awe_tensorkit::{pooled_extent, Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

const STEM_KERNEL: usize = 7;

/// Shortest input (in frames) the network accepts. Every strided layer
/// rounds its output length up, so a single frame survives the whole stack.
pub const MIN_FRAMES: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// He-uniform fan-in; zero marks a bias.
    pub fan_in: usize,
}

/// Learnable tensors in a fixed order derived from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    pub embedding_dim: usize,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            embedding_dim: self.embedding_dim,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

fn conv_spec(specs: &mut Vec<ParamSpec>, name: &str, out: usize, inp: usize, k: usize) {
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![out, inp, k, k],
        fan_in: inp * k * k,
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![out],
        fan_in: 0,
    });
}

struct BlockPlan {
    stride: usize,
    projection: bool,
}

fn block_plans(cfg: &ModelConfig) -> Vec<(usize, Vec<BlockPlan>)> {
    let mut in_ch = cfg.stage_channels[0];
    (0..4)
        .map(|s| {
            let out = cfg.stage_channels[s];
            let blocks = (0..cfg.stage_blocks[s])
                .map(|b| {
                    let stride = if b == 0 && cfg.stage_downsample[s] { 2 } else { 1 };
                    let plan = BlockPlan {
                        stride,
                        projection: stride != 1 || in_ch != out,
                    };
                    in_ch = out;
                    plan
                })
                .collect();
            (out, blocks)
        })
        .collect()
}

/// Parameter names and shapes, in the order [`forward`] consumes them.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    conv_spec(&mut specs, "conv1", cfg.stage_channels[0], 1, STEM_KERNEL);
    let mut in_ch = cfg.stage_channels[0];
    for (s, (out, blocks)) in block_plans(cfg).into_iter().enumerate() {
        for (b, plan) in blocks.iter().enumerate() {
            let prefix = format!("res{}.{b}", s + 1);
            conv_spec(&mut specs, &format!("{prefix}.conv_a"), out, in_ch, 3);
            conv_spec(&mut specs, &format!("{prefix}.conv_b"), out, out, 3);
            if plan.projection {
                conv_spec(&mut specs, &format!("{prefix}.proj"), out, in_ch, 1);
            }
            in_ch = out;
        }
    }
    let d = cfg.embedding_dim();
    specs.push(ParamSpec {
        name: "fc.weight".into(),
        shape: vec![cfg.num_outputs(), d],
        fan_in: d,
    });
    specs.push(ParamSpec {
        name: "fc.bias".into(),
        shape: vec![cfg.num_outputs()],
        fan_in: 0,
    });
    specs
}

/// He-uniform weights, zero biases; deterministic in `cfg.seed`.
pub fn build_network(cfg: &ModelConfig) -> Result<NetworkParams<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs = param_specs(cfg);
    let tensors = specs
        .iter()
        .map(|s| {
            let n = s.shape.iter().product();
            let zeroed = cfg.zero_init_residual && s.name.ends_with("conv_b.weight");
            let data = if s.fan_in == 0 || zeroed {
                vec![0.0; n]
            } else {
                let bound = (6.0 / s.fan_in as f64).sqrt() as f32;
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            Tensor::from_vec(s.shape.clone(), data).map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkParams {
        names: specs.into_iter().map(|s| s.name).collect(),
        tensors,
        embedding_dim: cfg.embedding_dim(),
    })
}

/// Packs sequences into a zero-padded `[B, 1, D, T_max]` tensor (frequency
/// on the third axis, time last) plus the valid length of each item.
pub fn pack_batch<T: Scalar>(cfg: &ModelConfig, seqs: &[&FeatureSequence]) -> Result<(Tensor<T>, Vec<usize>)> {
    if seqs.is_empty() {
        return Err(Error::validation("batch", "empty batch"));
    }
    let d = cfg.input_dim;
    let lens: Vec<usize> = seqs.iter().map(|s| s.num_frames()).collect();
    let t_max = *lens.iter().max().expect("non-empty");
    let mut data = vec![T::zero(); seqs.len() * d * t_max];
    for (b, seq) in seqs.iter().enumerate() {
        if seq.dim() != d {
            return Err(Error::validation(
                "features",
                format!("item {b} has dimension {}, model expects {d}", seq.dim()),
            ));
        }
        if seq.num_frames() < MIN_FRAMES {
            return Err(Error::TooShort {
                got: seq.num_frames(),
                min: MIN_FRAMES,
            });
        }
        let normalized;
        let seq = if cfg.input_mean_norm {
            normalized = seq.mean_normalized();
            &normalized
        } else {
            *seq
        };
        let item = &mut data[b * d * t_max..(b + 1) * d * t_max];
        for (t, frame) in seq.frames().enumerate() {
            for (f, &v) in frame.iter().enumerate() {
                item[f * t_max + t] = T::from_f64_lossy(v as f64);
            }
        }
    }
    Ok((Tensor::from_vec(vec![seqs.len(), 1, d, t_max], data)?, lens))
}

fn strided(lens: &[usize], stride: usize) -> Vec<usize> {
    lens.iter().map(|&l| l.div_ceil(stride)).collect()
}

pub struct Forward {
    /// `[B, d]` pooled embeddings.
    pub embeddings: Var,
    /// `[B, N]` classifier activations.
    pub logits: Var,
}

/// Records the network on `g`. `params` are the graph vars of the tensors
/// listed by [`param_specs`], in order.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    params: &[Var],
    input: Var,
    lens: &[usize],
) -> Result<Forward> {
    let mut next = params.iter().copied();
    let mut take = || {
        next.next()
            .ok_or_else(|| Error::Incompatible("too few parameters".into()))
    };

    let pad = STEM_KERNEL / 2;
    let (w, b) = (take()?, take()?);
    let x = g.conv2d(input, w, Some(b), (2, 2), (pad, pad))?;
    let mut lens = strided(lens, 2);
    let x = g.relu(x);
    let x = g.mask_time(x, &lens)?;
    let x = g.max_pool2d(x, (2, 2), (2, 2))?;
    lens = lens.iter().map(|&l| pooled_extent(l, 2, 2)).collect();
    let mut x = g.mask_time(x, &lens)?;

    for (_, blocks) in block_plans(cfg) {
        for plan in blocks {
            let s = plan.stride;
            let (wa, ba, wb, bb) = (take()?, take()?, take()?, take()?);
            let out_lens = strided(&lens, s);
            let h = g.conv2d(x, wa, Some(ba), (s, s), (1, 1))?;
            let h = g.relu(h);
            let h = g.mask_time(h, &out_lens)?;
            let h = g.conv2d(h, wb, Some(bb), (1, 1), (1, 1))?;
            let skip = if plan.projection {
                let (wp, bp) = (take()?, take()?);
                g.conv2d(x, wp, Some(bp), (s, s), (0, 0))?
            } else {
                x
            };
            let y = g.add(h, skip)?;
            let y = g.relu(y);
            lens = out_lens;
            x = g.mask_time(y, &lens)?;
        }
    }

    let embeddings = g.gap_masked(x, &lens)?;
    let (w, b) = (take()?, take()?);
    let logits = g.linear(embeddings, w, Some(b))?;
    Ok(Forward { embeddings, logits })
}
