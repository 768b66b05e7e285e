//! Exhaustive reference implementations, independent of the library's
//! dynamic programs.

#![allow(dead_code)]

use std::collections::BTreeSet;

/// Minimum cost over every monotone path from `(0,0)` to `(ta-1,tb-1)`
/// with steps (1,0), (0,1), (1,1).
pub fn brute_dtw(ta: usize, tb: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn walk(i: usize, j: usize, ta: usize, tb: usize, acc: f64, cost: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        let acc = acc + cost(i, j);
        if (i, j) == (ta - 1, tb - 1) {
            *best = best.min(acc);
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            if i + di < ta && j + dj < tb {
                walk(i + di, j + dj, ta, tb, acc, cost, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, ta, tb, 0.0, cost, &mut best);
    best
}

/// Minimum over content spans `[s, e]` of the global DTW cost.
pub fn brute_sdtw(tq: usize, tc: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for s in 0..tc {
        for e in s..tc {
            best = best.min(brute_dtw(tq, e - s + 1, &|i, j| cost(i, s + j)));
        }
    }
    best
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Utterance ids by ascending score, ties by id.
pub fn rank(scores: &[(usize, f64)]) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().map(|(u, _)| u).collect()
}

/// Average precision from first principles: for each relevant item,
/// count relevant items ranked at or above it.
pub fn ap(order: &[usize], relevant: &BTreeSet<usize>) -> f64 {
    let mut total = 0.0;
    for (r, u) in order.iter().enumerate() {
        if relevant.contains(u) {
            let above = order[..=r].iter().filter(|x| relevant.contains(x)).count();
            total += above as f64 / (r + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn precision(order: &[usize], relevant: &BTreeSet<usize>, k: usize) -> f64 {
    let mut hits = 0;
    for (r, u) in order.iter().enumerate() {
        if r < k && relevant.contains(u) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}
