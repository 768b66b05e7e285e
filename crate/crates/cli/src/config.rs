use std::path::{Path, PathBuf};

use awe_qbe::blob::sha256_hex;
use awe_qbe::corpus::CorpusSpec;
use awe_qbe::dtw::Fusion;
use awe_qbe::features::FbankConfig;
use awe_qbe::matcher::WindowConfig;
use awe_qbe::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a pipeline run depends on. Loaded from JSON, then overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workdir: PathBuf,
    pub corpus: CorpusSpec,
    pub features: FbankConfig,
    pub model: ModelConfig,
    pub window: WindowConfig,
    /// Registered search system name.
    pub system: String,
    pub fusion: Fusion,
    pub templates_per_keyword: usize,
    /// Defaults to `<workdir>/models/model.awem`.
    pub model_file: Option<PathBuf>,
    /// Defaults to `<workdir>/results/<system>.jsonl`.
    pub results_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("work"),
            corpus: CorpusSpec::default(),
            features: FbankConfig::default(),
            model: ModelConfig::desk(),
            window: WindowConfig::default(),
            system: "awe".into(),
            fusion: Fusion::None,
            templates_per_keyword: 5,
            model_file: None,
            results_file: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = std::fs::read(path).map_err(|e| awe_qbe::Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| awe_qbe::Error::json(path.display().to_string(), e).into())
    }

    /// Sets both the corpus and the model seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.model.seed = seed;
    }

    /// SHA-256 of the canonical JSON form, ignoring where artifacts live.
    pub fn hash(&self) -> String {
        let content = RunConfig {
            workdir: PathBuf::new(),
            model_file: None,
            results_file: None,
            ..self.clone()
        };
        sha256_hex(&serde_json::to_vec(&content).expect("config serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.window.validate()?;
        if self.templates_per_keyword == 0 {
            return Err(CliError::Usage("templates_per_keyword must be at least 1".into()));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.workdir.join("corpus")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.workdir.join("features")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.workdir.join("models")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.workdir.join("results")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.workdir.join("reports")
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_file
            .clone()
            .unwrap_or_else(|| self.models_dir().join("model.awem"))
    }

    pub fn results_path(&self) -> PathBuf {
        self.results_file
            .clone()
            .unwrap_or_else(|| self.results_dir().join(format!("{}.jsonl", self.system)))
    }
}
