//! Retrieval metrics: average precision, precision at k, and per-keyword
//! and per-language reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Occurrence;
use crate::error::{Error, Result};
use crate::ranking::RankedList;

/// Keyword id → utterances containing it at least once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Relevance(pub BTreeMap<usize, BTreeSet<usize>>);

impl Relevance {
    pub fn from_ground_truth(occ: &[Occurrence]) -> Self {
        let mut m: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for o in occ {
            m.entry(o.word_id).or_default().insert(o.utterance_id);
        }
        Relevance(m)
    }

    pub fn get(&self, keyword_id: usize) -> Option<&BTreeSet<usize>> {
        self.0.get(&keyword_id)
    }
}

fn hits(ranked: &RankedList, relevant: &BTreeSet<usize>) -> Vec<bool> {
    ranked.utterance_ids().map(|u| relevant.contains(&u)).collect()
}

/// Mean over relevant utterances of the precision at each one's rank.
pub fn average_precision(ranked: &RankedList, relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::validation(
            "relevant",
            format!("keyword {} has no relevant utterances", ranked.keyword_id),
        ));
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (r, hit) in hits(ranked, relevant).into_iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Relevant hits among the top `k`, divided by `k` even when the list is
/// shorter than `k`.
pub fn precision_at_k(ranked: &RankedList, relevant: &BTreeSet<usize>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::validation("k", "must be at least 1"));
    }
    let n = hits(ranked, relevant).into_iter().take(k).filter(|&h| h).count();
    Ok(n as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordMetrics {
    pub keyword_id: usize,
    pub language_id: Option<usize>,
    pub ap: f64,
    pub p_at_5: f64,
    pub p_at_n: f64,
    /// N, the number of utterances containing the keyword.
    pub n_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub keywords: usize,
    pub map: f64,
    pub p_at_5: f64,
    pub p_at_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub keywords: Vec<KeywordMetrics>,
    pub map: f64,
    pub mean_p_at_5: f64,
    pub mean_p_at_n: f64,
    pub num_keywords: usize,
    pub num_utterances: usize,
    /// Unweighted means per keyword language, then the overall row.
    pub groups: Vec<GroupMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn group(name: String, ks: &[&KeywordMetrics]) -> GroupMetrics {
    GroupMetrics {
        group: name,
        keywords: ks.len(),
        map: mean(ks.iter().map(|k| k.ap)),
        p_at_5: mean(ks.iter().map(|k| k.p_at_5)),
        p_at_n: mean(ks.iter().map(|k| k.p_at_n)),
    }
}

/// Metrics for every ranked keyword. `languages` maps keyword ids to a
/// language for the grouped rows; keywords absent from it are only counted
/// in the overall row.
pub fn evaluate(
    rankings: &[RankedList],
    relevance: &Relevance,
    languages: &BTreeMap<usize, usize>,
) -> Result<MetricsReport> {
    let mut keywords = Vec::with_capacity(rankings.len());
    let mut utterances = BTreeSet::new();
    for list in rankings {
        if !list.is_sorted() {
            return Err(Error::validation(
                "ranking",
                format!("keyword {} is not in canonical order", list.keyword_id),
            ));
        }
        let relevant = relevance.get(list.keyword_id).ok_or_else(|| {
            Error::validation(
                "relevance",
                format!("no relevance judgements for keyword {}", list.keyword_id),
            )
        })?;
        let listed: BTreeSet<usize> = list.utterance_ids().collect();
        if let Some(u) = relevant.iter().find(|u| !listed.contains(u)) {
            return Err(Error::validation(
                "ranking",
                format!("keyword {} ranking omits relevant utterance {u}", list.keyword_id),
            ));
        }
        utterances.extend(listed);
        keywords.push(KeywordMetrics {
            keyword_id: list.keyword_id,
            language_id: languages.get(&list.keyword_id).copied(),
            ap: average_precision(list, relevant)?,
            p_at_5: precision_at_k(list, relevant, 5)?,
            p_at_n: precision_at_k(list, relevant, relevant.len())?,
            n_relevant: relevant.len(),
        });
    }
    let mut by_lang: BTreeMap<usize, Vec<&KeywordMetrics>> = BTreeMap::new();
    for k in &keywords {
        if let Some(l) = k.language_id {
            by_lang.entry(l).or_default().push(k);
        }
    }
    let mut groups: Vec<GroupMetrics> = by_lang
        .into_iter()
        .map(|(l, ks)| group(format!("lang{l}"), &ks))
        .collect();
    let all: Vec<&KeywordMetrics> = keywords.iter().collect();
    let overall = group("all".into(), &all);
    groups.push(overall.clone());
    Ok(MetricsReport {
        map: overall.map,
        mean_p_at_5: overall.p_at_5,
        mean_p_at_n: overall.p_at_n,
        num_keywords: keywords.len(),
        num_utterances: utterances.len(),
        keywords,
        groups,
    })
}

impl MetricsReport {
    /// Aligned text table, one row per keyword-language group.
    pub fn table(&self, system: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:>4} {:>7} {:>7} {:>7}",
            "system", "group", "kw", "MAP", "P@5", "P@N"
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:<8} {:<8} {:>4} {:>7.3} {:>7.3} {:>7.3}",
                system, g.group, g.keywords, g.map, g.p_at_5, g.p_at_n
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::RankEntry;

    fn list(order: &[usize]) -> RankedList {
        RankedList::new(
            0,
            order
                .iter()
                .enumerate()
                .map(|(r, &u)| RankEntry {
                    utterance_id: u,
                    score: r as f64,
                    best_start_frame: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&list(&[1, 2, 0, 3]), &set(&[1, 2])).unwrap(), 1.0);
        let ap = average_precision(&list(&[7, 8, 9]), &set(&[7, 9])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&list(&[0, 1, 2, 3]), &set(&[3])).unwrap(), 0.25);
        assert!(average_precision(&list(&[0]), &set(&[])).is_err());
    }

    #[test]
    fn precision_hand_cases() {
        assert_eq!(
            precision_at_k(&list(&[0, 1, 2, 3, 4, 5]), &set(&[0, 1, 2, 3, 4]), 5).unwrap(),
            1.0
        );
        let r = list(&[0, 5, 1, 2]);
        assert!((precision_at_k(&r, &set(&[0, 1, 2]), 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&r, &set(&[0]), 1).unwrap(), 1.0);
        // Fixed denominator with fewer than k utterances.
        assert_eq!(precision_at_k(&list(&[0, 1]), &set(&[0, 1]), 5).unwrap(), 0.4);
        assert!(precision_at_k(&r, &set(&[0]), 0).is_err());
    }

    #[test]
    fn single_keyword_map_is_its_ap() {
        let rel = Relevance(BTreeMap::from([(0, set(&[7, 9]))]));
        let rep = evaluate(&[list(&[7, 8, 9])], &rel, &BTreeMap::from([(0, 1)])).unwrap();
        assert_eq!(rep.map, rep.keywords[0].ap);
        assert_eq!(rep.groups.len(), 2);
        assert_eq!(rep.groups[0].group, "lang1");
        assert!(rep.table("awe").contains("lang1"));
    }

    #[test]
    fn missing_relevance_names_keyword() {
        let err = evaluate(&[list(&[0])], &Relevance::default(), &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("keyword 0"), "{err}");
    }
}
