//! Embedding search: sliding windows over each utterance, cosine cost
//! against a fused keyword embedding, trailing moving-average smoothing and
//! per-keyword ranking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::features::{pad_or_clip, FeatureSequence};
use crate::model::{AweModel, Embedding};
use crate::ranking::{RankEntry, RankedList};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub stride_frames: usize,
    pub sma_len: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_seconds: 0.8,
            stride_frames: 5,
            sma_len: 5,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return Err(Error::validation("window_seconds", "must be positive"));
        }
        if self.stride_frames == 0 {
            return Err(Error::validation("stride_frames", "must be at least 1"));
        }
        if self.sma_len == 0 {
            return Err(Error::validation("sma_len", "must be at least 1"));
        }
        Ok(())
    }

    /// Window length in frames for the given frame shift.
    pub fn window_frames(&self, frame_shift: f64) -> Result<usize> {
        self.validate()?;
        let w = (self.window_seconds / frame_shift).round();
        if w.is_nan() || w < 1.0 {
            return Err(Error::validation(
                "window_seconds",
                format!("{} s at shift {frame_shift} s gives no frames", self.window_seconds),
            ));
        }
        Ok(w as usize)
    }
}

/// Windows of `W` frames starting at `0, s, 2s, …` while the start lies
/// inside the sequence; windows running past the end are zero-padded.
pub fn window_segments(seq: &FeatureSequence, cfg: &WindowConfig) -> Result<Vec<(usize, FeatureSequence)>> {
    let w = cfg.window_frames(seq.frame_shift)?;
    let t = seq.num_frames();
    if t == 0 {
        return Err(Error::validation("sequence", "empty"));
    }
    (0..t)
        .step_by(cfg.stride_frames)
        .map(|start| {
            let part = seq.slice(start, (start + w).min(t))?;
            Ok((start, pad_or_clip(&part, w)?))
        })
        .collect()
}

/// `1 − cos(a, b)`; a zero-norm side gives 1.0 and `true`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> (f64, bool) {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return (1.0, true);
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt()), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatch {
    pub min_cost: f64,
    pub argmin: usize,
    pub trace: Vec<f64>,
    /// Positions where a zero-norm vector made the cosine undefined.
    pub degenerate: Vec<usize>,
}

/// Cost of `x` against every `ys[i]`, with the minimum (first on ties).
pub fn cosine_cost(x: &Embedding, ys: &[Embedding]) -> Result<CosineMatch> {
    if ys.is_empty() {
        return Err(Error::validation("ys", "no embeddings to compare against"));
    }
    let mut trace = Vec::with_capacity(ys.len());
    let mut degenerate = Vec::new();
    for (i, y) in ys.iter().enumerate() {
        if y.dim() != x.dim() {
            return Err(Error::validation(
                "embedding",
                format!("dim {} vs {}", y.dim(), x.dim()),
            ));
        }
        let (c, flag) = cosine_distance(x.as_slice(), y.as_slice());
        if flag {
            degenerate.push(i);
        }
        trace.push(c);
    }
    let (argmin, min_cost) = argmin(&trace);
    Ok(CosineMatch {
        min_cost,
        argmin,
        trace,
        degenerate,
    })
}

fn argmin(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Trailing simple moving average; the first `k − 1` outputs average over
/// the frames seen so far.
pub fn sma(trace: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..trace.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(k);
            trace[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Coordinate-wise mean of the templates.
pub fn fuse_templates_mean(embs: &[Embedding]) -> Result<Embedding> {
    let first = embs
        .first()
        .ok_or_else(|| Error::validation("templates", "empty list"))?;
    let d = first.dim();
    let mut acc = vec![0.0f64; d];
    for e in embs {
        if e.dim() != d {
            return Err(Error::validation("templates", format!("dim {} vs {d}", e.dim())));
        }
        for (a, &v) in acc.iter_mut().zip(e.as_slice()) {
            *a += v as f64;
        }
    }
    let n = embs.len() as f64;
    Ok(Embedding(acc.into_iter().map(|a| (a / n) as f32).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordQuery {
    pub keyword_id: usize,
    pub templates: Vec<Embedding>,
    pub fused: Embedding,
}

impl KeywordQuery {
    pub fn new(keyword_id: usize, templates: Vec<Embedding>) -> Result<Self> {
        let fused = fuse_templates_mean(&templates)?;
        Ok(Self {
            keyword_id,
            templates,
            fused,
        })
    }

    /// Embeds each template after padding or clipping it to the window
    /// length, then fuses.
    pub fn from_templates(
        model: &AweModel,
        keyword_id: usize,
        templates: &[FeatureSequence],
        cfg: &WindowConfig,
    ) -> Result<Self> {
        let fitted = templates
            .iter()
            .map(|t| pad_or_clip(t, cfg.window_frames(t.frame_shift)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(keyword_id, model.embed_all(&fitted)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrace {
    pub keyword_id: usize,
    pub utterance_id: usize,
    /// Raw cosine cost per window position.
    pub costs: Vec<f64>,
    pub starts: Vec<usize>,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    /// One list per query, in query order.
    pub rankings: Vec<RankedList>,
    /// Keyword-major, utterances in input order.
    pub traces: Vec<ScoreTrace>,
}

struct UtteranceHits {
    entries: Vec<RankEntry>,
    traces: Vec<ScoreTrace>,
}

fn search_utterance(
    model: &AweModel,
    queries: &[KeywordQuery],
    utt: &Utterance,
    cfg: &WindowConfig,
) -> Result<UtteranceHits> {
    let windows = window_segments(&utt.features, cfg)?;
    let (starts, segs): (Vec<usize>, Vec<FeatureSequence>) = windows.into_iter().unzip();
    let embs = model.embed_all(&segs)?;
    let mut entries = Vec::with_capacity(queries.len());
    let mut traces = Vec::with_capacity(queries.len());
    for q in queries {
        let m = cosine_cost(&q.fused, &embs)?;
        if !m.degenerate.is_empty() {
            log::warn!(
                "utterance {}: {} zero-norm window embeddings scored as 1.0",
                utt.utterance_id,
                m.degenerate.len()
            );
        }
        let smooth = sma(&m.trace, cfg.sma_len);
        let (best, score) = argmin(&smooth);
        entries.push(RankEntry {
            utterance_id: utt.utterance_id,
            score,
            best_start_frame: starts[best],
        });
        traces.push(ScoreTrace {
            keyword_id: q.keyword_id,
            utterance_id: utt.utterance_id,
            costs: m.trace,
            starts: starts.clone(),
            degenerate: m.degenerate.len(),
        });
    }
    Ok(UtteranceHits { entries, traces })
}

/// Scores every utterance against every query. Utterances are processed
/// in parallel and merged in input order.
pub fn search(
    model: &AweModel,
    queries: &[KeywordQuery],
    utterances: &[Utterance],
    cfg: &WindowConfig,
) -> Result<SearchOutput> {
    cfg.validate()?;
    let dim = model.params.embedding_dim;
    if let Some(q) = queries.iter().find(|q| q.fused.dim() != dim) {
        return Err(Error::validation(
            "query",
            format!(
                "keyword {} embedding dim {} but model gives {dim}",
                q.keyword_id,
                q.fused.dim()
            ),
        ));
    }
    let per_utt: Vec<UtteranceHits> = utterances
        .par_iter()
        .map(|u| search_utterance(model, queries, u, cfg))
        .collect::<Result<_>>()?;

    let mut rankings = Vec::with_capacity(queries.len());
    let mut traces = Vec::with_capacity(queries.len() * utterances.len());
    for (qi, q) in queries.iter().enumerate() {
        let entries = per_utt.iter().map(|h| h.entries[qi]).collect();
        rankings.push(RankedList::new(q.keyword_id, entries)?);
        traces.extend(per_utt.iter().map(|h| h.traces[qi].clone()));
    }
    Ok(SearchOutput { rankings, traces })
}
