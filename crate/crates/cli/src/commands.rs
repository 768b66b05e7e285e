use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use awe_qbe::blob;
use awe_qbe::corpus::{load_manifest, save_manifest, synth_corpus, CorpusBundle, MANIFEST_FILE};
use awe_qbe::eval::{evaluate, MetricsReport, Relevance};
use awe_qbe::features::{fbank, read_wav};
use awe_qbe::matcher::window_segments;
use awe_qbe::model::{load_model, save_model, train_with_progress, AweModel, Embedding, EpochStats};
use awe_qbe::ranking::{lists_from_records, read_results, to_records, write_results};
use awe_qbe::registry::{AweSearch, Registry, SystemContext};
use awe_qbe::TOOL_VERSION;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{require, CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: &'static str,
    pub config_hash: String,
    pub tool_version: &'static str,
}

fn provenance(command: &'static str, cfg: &RunConfig) -> Provenance {
    Provenance {
        command,
        config_hash: cfg.hash(),
        tool_version: TOOL_VERSION,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| awe_qbe::Error::io(dir, e))?;
    }
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| awe_qbe::Error::json(path.display().to_string(), e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| awe_qbe::Error::io(path, e).into())
}

fn load_corpus(cfg: &RunConfig) -> Result<CorpusBundle> {
    require(cfg.corpus_dir().join(MANIFEST_FILE), "synth")?;
    Ok(load_manifest(&cfg.corpus_dir())?)
}

fn load_trained(cfg: &RunConfig) -> Result<AweModel> {
    Ok(load_model(&require(cfg.model_path(), "train")?)?)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let bundle = synth_corpus(&cfg.corpus)?;
    bundle.check_invariants()?;
    let dir = cfg.corpus_dir();
    let m = save_manifest(&bundle, &dir)?;
    write_json(&dir.join("provenance.json"), &provenance("synth", cfg))?;
    info!(
        "wrote {} instances, {} utterances, {} occurrences to {}",
        m.instances.len(),
        m.utterances.len(),
        m.ground_truth.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FeatureEntry {
    name: String,
    source: PathBuf,
    blob: String,
    rows: usize,
    cols: usize,
    sha256: String,
    frame_shift: f64,
    frame_length: f64,
}

#[derive(Serialize)]
struct FeatureIndex {
    provenance: Provenance,
    features: awe_qbe::features::FbankConfig,
    entries: Vec<FeatureEntry>,
}

/// Log Mel features for every `.wav` file directly under `wav_dir`.
pub fn cmd_featurize(cfg: &RunConfig, wav_dir: &Path) -> Result<()> {
    let listing = std::fs::read_dir(wav_dir).map_err(|e| awe_qbe::Error::io(wav_dir, e))?;
    let mut wavs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(CliError::Usage(format!("no .wav files in {}", wav_dir.display())));
    }
    let out = cfg.features_dir();
    let mut entries = Vec::with_capacity(wavs.len());
    for path in wavs {
        let f = fbank(&read_wav(&path)?, &cfg.features)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let blob_name = format!("{name}.awef");
        let sha256 = blob::write(&out.join(&blob_name), f.num_frames(), f.dim(), f.as_slice())?;
        entries.push(FeatureEntry {
            name,
            source: path,
            blob: blob_name,
            rows: f.num_frames(),
            cols: f.dim(),
            sha256,
            frame_shift: f.frame_shift,
            frame_length: f.frame_length,
        });
    }
    info!("featurized {} files into {}", entries.len(), out.display());
    write_json(
        &out.join("index.json"),
        &FeatureIndex {
            provenance: provenance("featurize", cfg),
            features: cfg.features.clone(),
            entries,
        },
    )
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    provenance: Provenance,
    model_file: PathBuf,
    final_accuracy: f64,
    epochs: &'a [EpochStats],
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let bundle = load_corpus(cfg)?;
    let mut counts = BTreeMap::<usize, usize>::new();
    for w in &bundle.vocabulary {
        *counts.entry(w.language_id).or_default() += 1;
    }
    let mut mcfg = cfg
        .model
        .clone()
        .with_vocabulary(&counts.values().copied().collect::<Vec<_>>());
    if let Some(first) = bundle.train_instances.first() {
        mcfg.input_dim = first.features.dim();
    }
    let (params, report) = train_with_progress(&mcfg, &bundle.train_instances, |e| {
        info!(
            "epoch {:>3}  loss {:.4}  ce {:.4}  mse {:.4}  acc {:.3}  lr {}",
            e.epoch, e.total_loss, e.ce_loss, e.mse_loss, e.accuracy, e.lr
        )
    })?;
    let path = cfg.model_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| awe_qbe::Error::io(dir, e))?;
    }
    save_model(&AweModel { config: mcfg, params }, &path)?;
    write_json(
        &cfg.models_dir().join("train_report.json"),
        &TrainOutput {
            provenance: provenance("train", cfg),
            model_file: path,
            final_accuracy: report.final_accuracy(),
            epochs: &report.epochs,
        },
    )
}

#[derive(Serialize)]
struct KeywordEmbeddings {
    keyword_id: usize,
    language_id: usize,
    templates: Vec<Embedding>,
    fused: Embedding,
}

#[derive(Serialize)]
struct WindowEmbeddings {
    utterance_id: usize,
    starts: Vec<usize>,
    embeddings: Vec<Embedding>,
}

#[derive(Serialize)]
struct EmbedOutput {
    provenance: Provenance,
    keywords: Vec<KeywordEmbeddings>,
    utterances: Vec<WindowEmbeddings>,
}

pub fn cmd_embed(cfg: &RunConfig, windows: bool) -> Result<()> {
    let bundle = load_corpus(cfg)?;
    let search = AweSearch::new(SystemContext {
        model: Some(load_trained(cfg)?),
        window: cfg.window.clone(),
        fusion: cfg.fusion,
    })?;
    let kws = bundle.keyword_templates(cfg.templates_per_keyword)?;
    let keywords = search
        .queries(&kws)?
        .into_iter()
        .zip(&kws)
        .map(|(q, k)| KeywordEmbeddings {
            keyword_id: q.keyword_id,
            language_id: k.language_id,
            templates: q.templates,
            fused: q.fused,
        })
        .collect();
    let mut utterances = Vec::new();
    if windows {
        for u in &bundle.utterances {
            let (starts, segs): (Vec<usize>, Vec<_>) = window_segments(&u.features, &cfg.window)?.into_iter().unzip();
            utterances.push(WindowEmbeddings {
                utterance_id: u.utterance_id,
                starts,
                embeddings: search.model.embed_all(&segs)?,
            });
        }
    }
    let path = cfg.results_dir().join("embeddings.json");
    write_json(
        &path,
        &EmbedOutput {
            provenance: provenance("embed", cfg),
            keywords,
            utterances,
        },
    )?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_search(cfg: &RunConfig, traces: bool) -> Result<()> {
    let registry = Registry::with_defaults();
    let model = if cfg.system == "awe" {
        Some(load_trained(cfg)?)
    } else {
        None
    };
    let bundle = load_corpus(cfg)?;
    let system = registry.create(
        &cfg.system,
        SystemContext {
            model,
            window: cfg.window.clone(),
            fusion: cfg.fusion,
        },
    )?;
    let kws = bundle.keyword_templates(cfg.templates_per_keyword)?;
    let out = system.search(&kws, &bundle.utterances)?;
    let records = to_records(system.name(), &out.rankings, &cfg.hash(), TOOL_VERSION);
    let path = cfg.results_path();
    write_results(&path, &records)?;
    info!(
        "{} keywords × {} utterances → {}",
        kws.len(),
        bundle.utterances.len(),
        path.display()
    );
    if traces {
        let dir = cfg.results_dir().join("traces").join(system.name());
        for t in &out.traces {
            let rows: Vec<f32> = t
                .starts
                .iter()
                .zip(&t.costs)
                .flat_map(|(&s, &c)| [s as f32, c as f32])
                .collect();
            let name = format!("k{:04}_u{:05}.awef", t.keyword_id, t.utterance_id);
            blob::write(&dir.join(name), t.costs.len(), 2, &rows)?;
        }
        if out.traces.is_empty() {
            log::warn!("system `{}` keeps no score traces", system.name());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    provenance: Provenance,
    system: &'a str,
    results_file: PathBuf,
    report: &'a MetricsReport,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let results = require(cfg.results_path(), "search")?;
    let bundle = load_corpus(cfg)?;
    let lists = lists_from_records(&read_results(&results)?)?;
    let relevance = Relevance::from_ground_truth(&bundle.ground_truth);
    let langs: BTreeMap<usize, usize> = bundle.vocabulary.iter().map(|w| (w.word_id, w.language_id)).collect();
    let report = evaluate(&lists, &relevance, &langs)?;
    let dir = cfg.reports_dir();
    write_json(
        &dir.join(format!("{}_metrics.json", cfg.system)),
        &EvalOutput {
            provenance: provenance("eval", cfg),
            system: &cfg.system,
            results_file: results,
            report: &report,
        },
    )?;
    let table = report.table(&cfg.system);
    std::fs::write(dir.join(format!("{}_metrics.txt", cfg.system)), &table).map_err(|e| awe_qbe::Error::io(&dir, e))?;
    print!("{table}");
    Ok(report)
}
