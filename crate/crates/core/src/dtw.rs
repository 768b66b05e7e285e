//! Frame-level template matching: global DTW, subsequence DTW, DTW-based
//! template fusion and an S-DTW ranked search.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{KeywordTemplates, Utterance};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matcher::cosine_distance;
use crate::ranking::{RankEntry, RankedList};

/// Alignment result. `path` holds 0-based `(query, content)` index pairs;
/// `span` is the matched content range `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    pub path: Vec<(usize, usize)>,
    pub span: (usize, usize),
}

impl DtwResult {
    /// Cost divided by the number of query frames.
    pub fn normalized_cost(&self) -> f64 {
        let tq = self.path.last().map_or(1, |&(i, _)| i + 1);
        self.cost / tq as f64
    }
}

/// Cosine distance between two frames (1.0 if either has zero norm).
pub fn local_cost(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation("frame", format!("dim {} vs {}", a.len(), b.len())));
    }
    Ok(cosine_distance(a, b).0)
}

/// Pairwise local costs, row-major `[ta][tb]`.
pub fn cost_matrix(a: &FeatureSequence, b: &FeatureSequence) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::validation("features", format!("dim {} vs {}", a.dim(), b.dim())));
    }
    let sq = |s: &FeatureSequence| -> Vec<f64> {
        s.frames()
            .map(|f| f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
            .collect()
    };
    let (na, nb) = (sq(a), sq(b));
    let mut out = Vec::with_capacity(a.num_frames() * b.num_frames());
    for (fa, &ea) in a.frames().zip(&na) {
        for (fb, &eb) in b.frames().zip(&nb) {
            if ea == 0.0 || eb == 0.0 {
                out.push(1.0);
                continue;
            }
            let dot: f64 = fa.iter().zip(fb).map(|(&x, &y)| x as f64 * y as f64).sum();
            out.push(1.0 - dot / (ea.sqrt() * eb.sqrt()));
        }
    }
    Ok(out)
}

/// Accumulated-cost DP over a `(ta+1) × (tb+1)` table. With `free_start`,
/// row 0 is all zeros so a path may begin at any column.
fn accumulate(ta: usize, tb: usize, cost: &impl Fn(usize, usize) -> f64, free_start: bool) -> Vec<f64> {
    let w = tb + 1;
    let mut d = vec![f64::INFINITY; (ta + 1) * w];
    if free_start {
        d[..w].fill(0.0);
    } else {
        d[0] = 0.0;
    }
    for i in 1..=ta {
        for j in 1..=tb {
            let best = d[(i - 1) * w + j - 1].min(d[(i - 1) * w + j]).min(d[i * w + j - 1]);
            d[i * w + j] = cost(i - 1, j - 1) + best;
        }
    }
    d
}

/// Walks back from `(ta, end)` preferring the diagonal, then a query step,
/// then a content step when predecessors tie.
fn backtrace(d: &[f64], tb: usize, ta: usize, end: usize) -> Vec<(usize, usize)> {
    let w = tb + 1;
    let (mut i, mut j) = (ta, end);
    let mut path = vec![(i - 1, j - 1)];
    loop {
        let diag = d[(i - 1) * w + j - 1];
        let up = d[(i - 1) * w + j];
        let left = d[i * w + j - 1];
        if i == 1 && (diag <= left || up <= left) {
            break;
        }
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        if i == 0 || j == 0 {
            break;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    path
}

/// Global DTW with an arbitrary local cost over index pairs.
pub fn dtw_with(ta: usize, tb: usize, cost: impl Fn(usize, usize) -> f64) -> Result<DtwResult> {
    if ta == 0 || tb == 0 {
        return Err(Error::validation("sequence", "empty"));
    }
    let d = accumulate(ta, tb, &cost, false);
    let path = global_backtrace(&d, ta, tb);
    Ok(DtwResult {
        cost: d[ta * (tb + 1) + tb],
        path,
        span: (0, tb),
    })
}

/// Global alignment must end at `(0, 0)`, so row 0 is never a shortcut.
fn global_backtrace(d: &[f64], ta: usize, tb: usize) -> Vec<(usize, usize)> {
    let w = tb + 1;
    let (mut i, mut j) = (ta, tb);
    let mut path = vec![(i - 1, j - 1)];
    while (i, j) != (1, 1) {
        let diag = d[(i - 1) * w + j - 1];
        let up = d[(i - 1) * w + j];
        let left = d[i * w + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    path
}

/// Subsequence DTW with free start and end on the content axis. The end
/// column is the first minimum of the last query row.
pub fn sdtw_with(tq: usize, tc: usize, cost: impl Fn(usize, usize) -> f64) -> Result<DtwResult> {
    if tq == 0 || tc == 0 {
        return Err(Error::validation("sequence", "empty"));
    }
    let d = accumulate(tq, tc, &cost, true);
    let last = &d[tq * (tc + 1)..];
    let mut end = 1;
    for j in 2..=tc {
        if last[j] < last[end] {
            end = j;
        }
    }
    let path = backtrace(&d, tc, tq, end);
    let start = path[0].1;
    Ok(DtwResult {
        cost: last[end],
        span: (start, end),
        path,
    })
}

pub fn dtw(a: &FeatureSequence, b: &FeatureSequence) -> Result<DtwResult> {
    let c = cost_matrix(a, b)?;
    let tb = b.num_frames();
    dtw_with(a.num_frames(), tb, |i, j| c[i * tb + j])
}

pub fn sdtw(query: &FeatureSequence, content: &FeatureSequence) -> Result<DtwResult> {
    let c = cost_matrix(query, content)?;
    let tc = content.num_frames();
    sdtw_with(query.num_frames(), tc, |i, j| c[i * tc + j])
}

/// Averages every template onto the time axis of `templates[main_index]`:
/// output frame `t` is the mean of the main frame and all frames aligned
/// to it by DTW.
pub fn fuse_templates_dtw(templates: &[FeatureSequence], main_index: usize) -> Result<FeatureSequence> {
    let main = templates
        .get(main_index)
        .ok_or_else(|| Error::validation("main_index", format!("{main_index} of {} templates", templates.len())))?;
    let (t, d) = (main.num_frames(), main.dim());
    let mut sum: Vec<f64> = main.as_slice().iter().map(|&v| v as f64).collect();
    let mut count = vec![1usize; t];
    for (k, other) in templates.iter().enumerate() {
        if k == main_index {
            continue;
        }
        let r = dtw(main, other)?;
        for &(i, j) in &r.path {
            for (s, &v) in sum[i * d..(i + 1) * d].iter_mut().zip(other.frame(j)) {
                *s += v as f64;
            }
            count[i] += 1;
        }
    }
    let frames = sum
        .chunks(d)
        .zip(&count)
        .flat_map(|(row, &n)| row.iter().map(move |&s| (s / n as f64) as f32))
        .collect();
    Ok(FeatureSequence::new(frames, t, d)?.with_timing(main.frame_shift, main.frame_length))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Score with every template and keep the best.
    #[default]
    None,
    /// Fuse into one template aligned to the first.
    Dtw,
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fusion::None),
            "dtw" => Ok(Fusion::Dtw),
            _ => Err(Error::Unknown {
                kind: "fusion mode",
                name: s.to_string(),
                available: "none, dtw".into(),
            }),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::None => "none",
            Fusion::Dtw => "dtw",
        })
    }
}

fn best_match(queries: &[FeatureSequence], content: &FeatureSequence) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for q in queries {
        let r = sdtw(q, content)?;
        let s = r.normalized_cost();
        if best.is_none_or(|b| s < b.0) {
            best = Some((s, r.span.0));
        }
    }
    best.ok_or_else(|| Error::validation("templates", "keyword has no templates"))
}

/// Ranks utterances per keyword by normalized S-DTW cost.
pub fn sdtw_search(keywords: &[KeywordTemplates], utterances: &[Utterance], fusion: Fusion) -> Result<Vec<RankedList>> {
    let queries: Vec<Vec<FeatureSequence>> = keywords
        .iter()
        .map(|k| match fusion {
            Fusion::None => Ok(k.templates.clone()),
            Fusion::Dtw => Ok(vec![fuse_templates_dtw(&k.templates, 0)?]),
        })
        .collect::<Result<_>>()?;
    let per_utt: Vec<Vec<RankEntry>> = utterances
        .par_iter()
        .map(|u| {
            queries
                .iter()
                .map(|q| {
                    let (score, start) = best_match(q, &u.features)?;
                    Ok(RankEntry {
                        utterance_id: u.utterance_id,
                        score,
                        best_start_frame: start,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    keywords
        .iter()
        .enumerate()
        .map(|(k, kw)| RankedList::new(kw.keyword_id, per_utt.iter().map(|e| e[k]).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: &[f64], b: &[f64]) -> impl Fn(usize, usize) -> f64 {
        let (a, b) = (a.to_vec(), b.to_vec());
        move |i, j| (a[i] - b[j]).abs()
    }

    #[test]
    fn scalar_hand_case() {
        let r = dtw_with(2, 3, scalar(&[0.0, 3.0], &[0.0, 1.0, 3.0])).unwrap();
        assert_eq!(r.cost, 1.0);
        assert_eq!(r.path, vec![(0, 0), (0, 1), (1, 2)]);
    }

    #[test]
    fn identical_sequences_align_diagonally() {
        let s = FeatureSequence::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let r = dtw(&s, &s).unwrap();
        assert!(r.cost.abs() < 1e-12);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn local_cost_cases() {
        assert!(local_cost(&[2.0, 1.0], &[2.0, 1.0]).unwrap().abs() < 1e-12);
        assert_eq!(local_cost(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((local_cost(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.29289).abs() < 1e-5);
        assert!(local_cost(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn verbatim_query_found() {
        let rows: Vec<Vec<f32>> = (0..12)
            .map(|t| vec![(t as f32).sin(), (t as f32 * 0.7).cos(), 1.0])
            .collect();
        let content = FeatureSequence::from_rows(&rows).unwrap();
        let query = content.slice(4, 8).unwrap();
        let r = sdtw(&query, &content).unwrap();
        assert!(r.cost < 1e-12);
        assert_eq!(r.span, (4, 8));
    }

    #[test]
    fn empty_rejected() {
        assert!(dtw_with(0, 2, |_, _| 0.0).is_err());
        assert!(sdtw_with(2, 0, |_, _| 0.0).is_err());
    }

    #[test]
    fn fusion_parses() {
        assert_eq!("dtw".parse::<Fusion>().unwrap(), Fusion::Dtw);
        assert_eq!(Fusion::None.to_string(), "none");
        assert!("avg".parse::<Fusion>().is_err());
    }
}
