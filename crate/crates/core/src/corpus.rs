//! Synthetic two-language code-switching corpus and its on-disk manifest.
//!
//! Each word has a smooth prototype trajectory in feature space; a speaker
//! applies a per-dimension gain and bias plus a global linear time warp.
//! Search utterances alternate silence and words of both languages, with
//! exact ground-truth spans. The last quarter of the speakers (rounded up)
//! never appears in the training split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// Standard deviation of one step of a prototype random walk.
pub const PROTOTYPE_STEP: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub num_words_lang_a: usize,
    pub num_words_lang_b: usize,
    pub num_speakers: usize,
    pub instances_per_word_per_speaker: usize,
    pub feature_dim: usize,
    pub word_len_frames: (usize, usize),
    pub speaker_gain_spread: f64,
    pub speaker_bias_spread: f64,
    pub noise_sigma: f64,
    pub time_warp_spread: f64,
    pub num_search_utterances: usize,
    pub words_per_utterance: (usize, usize),
    pub silence_len_frames: (usize, usize),
    pub seed: u64,
}

impl Default for CorpusSpec {
    /// The desk-scale corpus: 20 words, 8 speakers, 5 instances each.
    fn default() -> Self {
        Self {
            num_words_lang_a: 10,
            num_words_lang_b: 10,
            num_speakers: 8,
            instances_per_word_per_speaker: 5,
            feature_dim: 64,
            word_len_frames: (30, 60),
            speaker_gain_spread: 0.2,
            speaker_bias_spread: 0.3,
            noise_sigma: 0.05,
            time_warp_spread: 0.15,
            num_search_utterances: 40,
            words_per_utterance: (2, 4),
            silence_len_frames: (20, 40),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_words_lang_a", self.num_words_lang_a),
            ("num_words_lang_b", self.num_words_lang_b),
            ("instances_per_word_per_speaker", self.instances_per_word_per_speaker),
            ("feature_dim", self.feature_dim),
            ("num_search_utterances", self.num_search_utterances),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::validation(field, "must be at least 1"));
            }
        }
        if self.num_speakers < 2 {
            return Err(Error::validation(
                "num_speakers",
                "at least 2 are needed to hold out evaluation speakers",
            ));
        }
        for (field, (lo, hi)) in [
            ("word_len_frames", self.word_len_frames),
            ("words_per_utterance", self.words_per_utterance),
            ("silence_len_frames", self.silence_len_frames),
        ] {
            if lo > hi {
                return Err(Error::validation(field, format!("min {lo} exceeds max {hi}")));
            }
        }
        if self.word_len_frames.0 == 0 {
            return Err(Error::validation("word_len_frames", "min must be at least 1"));
        }
        if self.words_per_utterance.0 == 0 {
            return Err(Error::validation("words_per_utterance", "min must be at least 1"));
        }
        for (field, v) in [
            ("speaker_gain_spread", self.speaker_gain_spread),
            ("speaker_bias_spread", self.speaker_bias_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    field,
                    format!("{v} must be a finite non-negative number"),
                ));
            }
        }
        if !(0.0..0.5).contains(&self.time_warp_spread) {
            return Err(Error::validation("time_warp_spread", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn num_words(&self) -> usize {
        self.num_words_lang_a + self.num_words_lang_b
    }

    /// Speaker ids reserved for templates and search utterances.
    pub fn heldout_speakers(&self) -> std::ops::Range<usize> {
        let held = self.num_speakers.div_ceil(4);
        self.num_speakers - held..self.num_speakers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEntry {
    pub word_id: usize,
    pub language_id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordInstance {
    pub word_id: usize,
    pub speaker_id: usize,
    pub language_id: usize,
    pub features: FeatureSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: usize,
    pub speaker_id: usize,
    pub features: FeatureSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub utterance_id: usize,
    pub word_id: usize,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    /// Generator settings, absent for ingested real data.
    pub spec: Option<CorpusSpec>,
    pub vocabulary: Vec<WordEntry>,
    pub train_instances: Vec<WordInstance>,
    pub template_instances: Vec<WordInstance>,
    pub utterances: Vec<Utterance>,
    pub ground_truth: Vec<Occurrence>,
}

// ---------------------------------------------------------------------------
// Generation

struct Speaker {
    gain: Vec<f64>,
    bias: Vec<f64>,
    warp: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

fn range_draw(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Cumulative sum of Gaussian steps, then a centered 3-frame moving average.
fn prototype(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut walk = Vec::with_capacity(len);
    let mut cur: Vec<f64> = (0..dim).map(|_| gaussian(rng, 1.0)).collect();
    for _ in 0..len {
        walk.push(cur.clone());
        for c in cur.iter_mut() {
            *c += gaussian(rng, PROTOTYPE_STEP);
        }
    }
    (0..len)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(1), (t + 1).min(len - 1));
            let n = (hi - lo + 1) as f64;
            (0..dim)
                .map(|d| (lo..=hi).map(|s| walk[s][d]).sum::<f64>() / n)
                .collect()
        })
        .collect()
}

/// Linear interpolation of `proto` onto `round(len · warp)` frames.
fn time_warp(proto: &[Vec<f64>], warp: f64) -> Vec<Vec<f64>> {
    let len = proto.len();
    let out_len = ((len as f64 * warp).round() as usize).max(1);
    if out_len == len {
        return proto.to_vec();
    }
    (0..out_len)
        .map(|t| {
            let src = if out_len == 1 {
                0.0
            } else {
                t as f64 * (len - 1) as f64 / (out_len - 1) as f64
            };
            let i = (src.floor() as usize).min(len - 1);
            let j = (i + 1).min(len - 1);
            let frac = src - i as f64;
            proto[i]
                .iter()
                .zip(&proto[j])
                .map(|(a, b)| a + frac * (b - a))
                .collect()
        })
        .collect()
}

fn render(rows: Vec<Vec<f64>>, dim: usize) -> FeatureSequence {
    let n = rows.len();
    let data = rows.into_iter().flatten().map(|v| v as f32).collect();
    FeatureSequence::new(data, n, dim).expect("generator emits non-empty finite rows")
}

fn speak(rng: &mut ChaCha8Rng, proto: &[Vec<f64>], spk: &Speaker, noise: f64) -> FeatureSequence {
    let dim = spk.gain.len();
    let rows = time_warp(proto, spk.warp)
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&spk.gain)
                .zip(&spk.bias)
                .map(|((v, g), b)| v * g + b + gaussian(rng, noise))
                .collect()
        })
        .collect();
    render(rows, dim)
}

fn silence(rng: &mut ChaCha8Rng, len: usize, dim: usize, noise: f64) -> FeatureSequence {
    render(
        (0..len)
            .map(|_| (0..dim).map(|_| gaussian(rng, noise)).collect())
            .collect(),
        dim,
    )
}

/// Deterministic corpus for a given spec (including its seed).
pub fn synth_corpus(spec: &CorpusSpec) -> Result<CorpusBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;

    let vocabulary: Vec<WordEntry> = (0..spec.num_words())
        .map(|w| {
            let (lang, local) = if w < spec.num_words_lang_a {
                (0, w)
            } else {
                (1, w - spec.num_words_lang_a)
            };
            WordEntry {
                word_id: w,
                language_id: lang,
                name: format!("{}{local:03}", if lang == 0 { "a" } else { "b" }),
            }
        })
        .collect();

    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.num_words())
        .map(|_| {
            let len = range_draw(&mut rng, spec.word_len_frames);
            prototype(&mut rng, len, dim)
        })
        .collect();

    let speakers: Vec<Speaker> = (0..spec.num_speakers)
        .map(|_| Speaker {
            gain: (0..dim)
                .map(|_| (1.0 + gaussian(&mut rng, spec.speaker_gain_spread)).max(0.1))
                .collect(),
            bias: (0..dim).map(|_| gaussian(&mut rng, spec.speaker_bias_spread)).collect(),
            warp: 1.0 + spec.time_warp_spread * (2.0 * rng.random::<f64>() - 1.0),
        })
        .collect();

    let heldout = spec.heldout_speakers();
    let mut train_instances = Vec::new();
    let mut template_instances = Vec::new();
    for word in &vocabulary {
        for (s, spk) in speakers.iter().enumerate() {
            for _ in 0..spec.instances_per_word_per_speaker {
                let inst = WordInstance {
                    word_id: word.word_id,
                    speaker_id: s,
                    language_id: word.language_id,
                    features: speak(&mut rng, &prototypes[word.word_id], spk, spec.noise_sigma),
                };
                if heldout.contains(&s) {
                    template_instances.push(inst);
                } else {
                    train_instances.push(inst);
                }
            }
        }
    }

    let by_lang: [Vec<usize>; 2] = [
        (0..spec.num_words_lang_a).collect(),
        (spec.num_words_lang_a..spec.num_words()).collect(),
    ];
    let heldout_ids: Vec<usize> = heldout.collect();
    let mut utterances = Vec::with_capacity(spec.num_search_utterances);
    let mut ground_truth = Vec::new();
    for u in 0..spec.num_search_utterances {
        let s = *heldout_ids.choose(&mut rng).expect("at least one held-out speaker");
        let n_words = range_draw(&mut rng, spec.words_per_utterance);
        let mut lang = rng.random_range(0..2usize);
        let lead = range_draw(&mut rng, spec.silence_len_frames).max(1);
        let mut feats = silence(&mut rng, lead, dim, spec.noise_sigma);
        for _ in 0..n_words {
            let w = *by_lang[lang].choose(&mut rng).expect("non-empty language");
            let spoken = speak(&mut rng, &prototypes[w], &speakers[s], spec.noise_sigma);
            ground_truth.push(Occurrence {
                utterance_id: u,
                word_id: w,
                start_frame: feats.num_frames(),
                end_frame: feats.num_frames() + spoken.num_frames(),
            });
            feats = feats.concat(&spoken)?;
            let gap = range_draw(&mut rng, spec.silence_len_frames);
            if gap > 0 {
                feats = feats.concat(&silence(&mut rng, gap, dim, spec.noise_sigma))?;
            }
            lang = 1 - lang;
        }
        utterances.push(Utterance {
            utterance_id: u,
            speaker_id: s,
            features: feats,
        });
    }

    Ok(CorpusBundle {
        spec: Some(spec.clone()),
        vocabulary,
        train_instances,
        template_instances,
        utterances,
        ground_truth,
    })
}

// ---------------------------------------------------------------------------
// Variability-invariant pairs

/// Index of same-word instances grouped by speaker, for partner sampling.
pub struct PairIndex {
    /// word_id → (speaker_id → instance indices)
    by_word: BTreeMap<usize, BTreeMap<usize, Vec<usize>>>,
    /// Instances that have at least one same-word, other-speaker partner.
    anchors: Vec<usize>,
}

impl PairIndex {
    pub fn new(instances: &[WordInstance]) -> Self {
        let mut by_word: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
        for (i, inst) in instances.iter().enumerate() {
            by_word
                .entry(inst.word_id)
                .or_default()
                .entry(inst.speaker_id)
                .or_default()
                .push(i);
        }
        let anchors = instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| by_word[&inst.word_id].len() >= 2)
            .map(|(i, _)| i)
            .collect();
        Self { by_word, anchors }
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    /// Uniform draw among instances of the anchor's word spoken by any
    /// other speaker; `None` when the word has a single speaker.
    pub fn partner(&self, instances: &[WordInstance], anchor: usize, rng: &mut impl Rng) -> Option<usize> {
        let a = &instances[anchor];
        let speakers = self.by_word.get(&a.word_id)?;
        let total: usize = speakers
            .iter()
            .filter(|(&s, _)| s != a.speaker_id)
            .map(|(_, v)| v.len())
            .sum();
        if total == 0 {
            return None;
        }
        let mut k = rng.random_range(0..total);
        for (&s, idx) in speakers {
            if s == a.speaker_id {
                continue;
            }
            if k < idx.len() {
                return Some(idx[k]);
            }
            k -= idx.len();
        }
        unreachable!("k < total")
    }
}

/// Draws `(I_{w,p1}, I_{w,p2})`: the anchor uniformly among instances that
/// have a valid partner, the partner uniformly among same-word instances of
/// other speakers.
pub fn sample_vi_pair<'a>(
    instances: &'a [WordInstance],
    rng: &mut impl Rng,
) -> Result<(&'a WordInstance, &'a WordInstance)> {
    let index = PairIndex::new(instances);
    let &anchor = index.anchors().choose(rng).ok_or(Error::NoPairAvailable)?;
    let partner = index.partner(instances, anchor, rng).ok_or(Error::NoPairAvailable)?;
    Ok((&instances[anchor], &instances[partner]))
}

// ---------------------------------------------------------------------------
// Manifest

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub blob: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
    pub frame_shift: f64,
    pub frame_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub split: Split,
    pub word_id: usize,
    pub speaker_id: usize,
    pub language_id: usize,
    #[serde(flatten)]
    pub data: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub utterance_id: usize,
    pub speaker_id: usize,
    #[serde(flatten)]
    pub data: BlobRef,
}

/// JSON index of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: Option<CorpusSpec>,
    pub vocabulary: Vec<WordEntry>,
    pub train_speakers: Vec<usize>,
    pub heldout_speakers: Vec<usize>,
    pub instances: Vec<InstanceEntry>,
    pub utterances: Vec<UtteranceEntry>,
    pub ground_truth: Vec<Occurrence>,
}

fn blob_ref(name: String, f: &FeatureSequence) -> BlobRef {
    let bytes = blob::encode(f.num_frames(), f.dim(), f.as_slice());
    BlobRef {
        blob: name,
        rows: f.num_frames(),
        cols: f.dim(),
        sha256: blob::sha256_hex(&bytes),
        frame_shift: f.frame_shift,
        frame_length: f.frame_length,
    }
}

impl CorpusBundle {
    pub fn manifest(&self) -> Manifest {
        let speakers = |xs: &[WordInstance]| -> Vec<usize> {
            xs.iter()
                .map(|i| i.speaker_id)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let mut heldout: BTreeSet<usize> = speakers(&self.template_instances).into_iter().collect();
        heldout.extend(self.utterances.iter().map(|u| u.speaker_id));
        let entry = |split: Split, (i, inst): (usize, &WordInstance)| InstanceEntry {
            split,
            word_id: inst.word_id,
            speaker_id: inst.speaker_id,
            language_id: inst.language_id,
            data: blob_ref(
                format!(
                    "instances/{}_{i:05}.awef",
                    if split == Split::Train { "train" } else { "template" }
                ),
                &inst.features,
            ),
        };
        Manifest {
            format_version: MANIFEST_VERSION,
            spec: self.spec.clone(),
            vocabulary: self.vocabulary.clone(),
            train_speakers: speakers(&self.train_instances),
            heldout_speakers: heldout.into_iter().collect(),
            instances: self
                .train_instances
                .iter()
                .enumerate()
                .map(|x| entry(Split::Train, x))
                .chain(
                    self.template_instances
                        .iter()
                        .enumerate()
                        .map(|x| entry(Split::Template, x)),
                )
                .collect(),
            utterances: self
                .utterances
                .iter()
                .map(|u| UtteranceEntry {
                    utterance_id: u.utterance_id,
                    speaker_id: u.speaker_id,
                    data: blob_ref(format!("utterances/{:05}.awef", u.utterance_id), &u.features),
                })
                .collect(),
            ground_truth: self.ground_truth.clone(),
        }
    }

    pub fn language_of(&self, word_id: usize) -> Option<usize> {
        self.vocabulary.get(word_id).map(|w| w.language_id)
    }

    /// Checks speaker disjointness, vocabulary coverage and that occurrences
    /// tile their utterances in order without overlap.
    pub fn check_invariants(&self) -> Result<()> {
        let train: BTreeSet<usize> = self.train_instances.iter().map(|i| i.speaker_id).collect();
        for s in self
            .template_instances
            .iter()
            .map(|i| i.speaker_id)
            .chain(self.utterances.iter().map(|u| u.speaker_id))
        {
            if train.contains(&s) {
                return Err(Error::validation("speakers", format!("speaker {s} is in both splits")));
            }
        }
        for inst in self.train_instances.iter().chain(&self.template_instances) {
            if self.language_of(inst.word_id) != Some(inst.language_id) {
                return Err(Error::validation(
                    "language_id",
                    format!("word {} tagged with language {}", inst.word_id, inst.language_id),
                ));
            }
        }
        let lens: BTreeMap<usize, usize> = self
            .utterances
            .iter()
            .map(|u| (u.utterance_id, u.features.num_frames()))
            .collect();
        let mut last_end: BTreeMap<usize, usize> = BTreeMap::new();
        for o in &self.ground_truth {
            if o.word_id >= self.vocabulary.len() {
                return Err(Error::validation("ground_truth", format!("unknown word {}", o.word_id)));
            }
            let len = *lens
                .get(&o.utterance_id)
                .ok_or_else(|| Error::validation("ground_truth", format!("unknown utterance {}", o.utterance_id)))?;
            let prev = last_end.entry(o.utterance_id).or_insert(0);
            if o.start_frame >= o.end_frame || o.end_frame > len || o.start_frame < *prev {
                return Err(Error::validation("ground_truth", format!("bad span {o:?}")));
            }
            *prev = o.end_frame;
        }
        Ok(())
    }
}

/// Spoken examples of one keyword.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTemplates {
    pub keyword_id: usize,
    pub language_id: usize,
    pub templates: Vec<FeatureSequence>,
}

impl CorpusBundle {
    /// Word ids with at least one occurrence in the search utterances.
    pub fn searchable_keywords(&self) -> Vec<usize> {
        self.ground_truth
            .iter()
            .map(|o| o.word_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Up to `per_keyword` template instances for every searchable keyword,
    /// dealt round-robin across speakers so that the first `n` of a larger
    /// selection are the selection for `n`.
    pub fn keyword_templates(&self, per_keyword: usize) -> Result<Vec<KeywordTemplates>> {
        if per_keyword == 0 {
            return Err(Error::validation("templates_per_keyword", "must be at least 1"));
        }
        self.searchable_keywords()
            .into_iter()
            .map(|w| {
                let mut by_speaker: BTreeMap<usize, Vec<&WordInstance>> = BTreeMap::new();
                for inst in self.template_instances.iter().filter(|i| i.word_id == w) {
                    by_speaker.entry(inst.speaker_id).or_default().push(inst);
                }
                let mut templates = Vec::with_capacity(per_keyword);
                let mut round = 0;
                while templates.len() < per_keyword {
                    let dealt: Vec<&WordInstance> = by_speaker.values().filter_map(|v| v.get(round).copied()).collect();
                    if dealt.is_empty() {
                        break;
                    }
                    templates.extend(
                        dealt
                            .into_iter()
                            .take(per_keyword - templates.len())
                            .map(|i| i.features.clone()),
                    );
                    round += 1;
                }
                if templates.is_empty() {
                    return Err(Error::validation(
                        "template_instances",
                        format!("keyword {w} has no templates"),
                    ));
                }
                if templates.len() < per_keyword {
                    log::warn!(
                        "keyword {w}: only {} of {per_keyword} templates available",
                        templates.len()
                    );
                }
                Ok(KeywordTemplates {
                    keyword_id: w,
                    language_id: self.language_of(w).unwrap_or(0),
                    templates,
                })
            })
            .collect()
    }
}

fn write_features(dir: &Path, r: &BlobRef, f: &FeatureSequence) -> Result<()> {
    let sha = blob::write(&dir.join(&r.blob), f.num_frames(), f.dim(), f.as_slice())?;
    debug_assert_eq!(sha, r.sha256);
    Ok(())
}

/// Writes `manifest.json` plus one AWEF blob per feature matrix.
pub fn save_manifest(bundle: &CorpusBundle, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = bundle.manifest();
    let instances = bundle.train_instances.iter().chain(&bundle.template_instances);
    for (entry, inst) in manifest.instances.iter().zip(instances) {
        write_features(dir, &entry.data, &inst.features)?;
    }
    for (entry, u) in manifest.utterances.iter().zip(&bundle.utterances) {
        write_features(dir, &entry.data, &u.features)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Integrity {
            name: path.display().to_string(),
            msg: format!("unsupported manifest version {}", m.format_version),
        });
    }
    Ok(m)
}

fn load_features(dir: &Path, r: &BlobRef) -> Result<FeatureSequence> {
    let path = dir.join(&r.blob);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (rows, cols, data) = blob::decode(&r.blob, &bytes)?;
    let integrity = |msg: String| Error::Integrity {
        name: r.blob.clone(),
        msg,
    };
    if (rows, cols) != (r.rows, r.cols) {
        return Err(integrity(format!(
            "shape {rows}x{cols}, index says {}x{}",
            r.rows, r.cols
        )));
    }
    let sha = blob::sha256_hex(&bytes);
    if sha != r.sha256 {
        return Err(integrity(format!("checksum {sha} does not match {}", r.sha256)));
    }
    Ok(FeatureSequence::new(data, rows, cols)
        .map_err(|e| integrity(e.to_string()))?
        .with_timing(r.frame_shift, r.frame_length))
}

pub fn load_manifest(dir: &Path) -> Result<CorpusBundle> {
    let m = read_manifest(dir)?;
    let mut train_instances = Vec::new();
    let mut template_instances = Vec::new();
    for e in &m.instances {
        let inst = WordInstance {
            word_id: e.word_id,
            speaker_id: e.speaker_id,
            language_id: e.language_id,
            features: load_features(dir, &e.data)?,
        };
        match e.split {
            Split::Train => train_instances.push(inst),
            Split::Template => template_instances.push(inst),
        }
    }
    let utterances = m
        .utterances
        .iter()
        .map(|e| {
            Ok(Utterance {
                utterance_id: e.utterance_id,
                speaker_id: e.speaker_id,
                features: load_features(dir, &e.data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusBundle {
        spec: m.spec,
        vocabulary: m.vocabulary,
        train_instances,
        template_instances,
        utterances,
        ground_truth: m.ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> CorpusSpec {
        CorpusSpec {
            num_words_lang_a: 2,
            num_words_lang_b: 2,
            num_speakers: 4,
            instances_per_word_per_speaker: 3,
            feature_dim: 8,
            word_len_frames: (5, 9),
            num_search_utterances: 6,
            silence_len_frames: (3, 6),
            ..Default::default()
        }
    }

    #[test]
    fn instance_count_before_split() {
        let b = synth_corpus(&tiny_spec()).unwrap();
        assert_eq!(b.manifest().instances.len(), 2 * 2 * 4 * 3);
        // ceil(4/4) = 1 held-out speaker
        assert_eq!(b.template_instances.len(), 4 * 3);
        assert_eq!(b.train_instances.len(), 4 * 3 * 3);
        b.check_invariants().unwrap();
    }

    #[test]
    fn noiseless_degenerate_corpus_repeats_each_word() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            time_warp_spread: 0.0,
            speaker_gain_spread: 0.0,
            speaker_bias_spread: 0.0,
            ..tiny_spec()
        };
        let b = synth_corpus(&spec).unwrap();
        let all: Vec<&WordInstance> = b.train_instances.iter().chain(&b.template_instances).collect();
        for w in 0..4 {
            let same: Vec<_> = all.iter().filter(|i| i.word_id == w).collect();
            assert!(same.windows(2).all(|p| p[0].features == p[1].features));
        }
    }

    #[test]
    fn validation_names_the_field() {
        let spec = CorpusSpec {
            word_len_frames: (9, 5),
            ..tiny_spec()
        };
        assert!(matches!(synth_corpus(&spec), Err(Error::Validation { ref field, .. }) if field == "word_len_frames"));
        let spec = CorpusSpec {
            noise_sigma: -1.0,
            ..tiny_spec()
        };
        assert!(matches!(synth_corpus(&spec), Err(Error::Validation { ref field, .. }) if field == "noise_sigma"));
    }

    #[test]
    fn utterances_alternate_languages() {
        let spec = CorpusSpec {
            words_per_utterance: (3, 3),
            ..tiny_spec()
        };
        let b = synth_corpus(&spec).unwrap();
        for u in &b.utterances {
            let langs: Vec<usize> = b
                .ground_truth
                .iter()
                .filter(|o| o.utterance_id == u.utterance_id)
                .map(|o| b.vocabulary[o.word_id].language_id)
                .collect();
            assert_eq!(langs.len(), 3);
            assert!(langs.windows(2).all(|p| p[0] != p[1]));
        }
    }
}
