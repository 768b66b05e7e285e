//! Search systems selectable by name.

use std::collections::BTreeMap;

use crate::corpus::{KeywordTemplates, Utterance};
use crate::dtw::{sdtw_search, Fusion};
use crate::error::{Error, Result};
use crate::matcher::{search, KeywordQuery, SearchOutput, WindowConfig};
use crate::model::AweModel;

pub trait SearchSystem: Send + Sync {
    fn name(&self) -> &'static str;

    /// One ranked list per keyword, in keyword order. Systems that keep
    /// per-window score traces return them too.
    fn search(&self, keywords: &[KeywordTemplates], utterances: &[Utterance]) -> Result<SearchOutput>;
}

/// Everything a factory may need to build a system.
#[derive(Debug, Clone, Default)]
pub struct SystemContext {
    pub model: Option<AweModel>,
    pub window: WindowConfig,
    pub fusion: Fusion,
}

pub type Factory = fn(SystemContext) -> Result<Box<dyn SearchSystem>>;

pub struct Registry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `awe` and `sdtw`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("awe", |ctx| Ok(Box::new(AweSearch::new(ctx)?)));
        r.register("sdtw", |ctx| Ok(Box::new(SdtwSearch { fusion: ctx.fusion })));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, ctx: SystemContext) -> Result<Box<dyn SearchSystem>> {
        let f = self.factories.get(name).ok_or_else(|| Error::Unknown {
            kind: "search system",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        f(ctx)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

/// Sliding-window embedding search against mean-fused templates.
pub struct AweSearch {
    pub model: AweModel,
    pub window: WindowConfig,
}

impl AweSearch {
    pub fn new(ctx: SystemContext) -> Result<Self> {
        let model = ctx
            .model
            .ok_or_else(|| Error::validation("model", "the awe system needs a trained model"))?;
        ctx.window.validate()?;
        Ok(Self {
            model,
            window: ctx.window,
        })
    }

    pub fn queries(&self, keywords: &[KeywordTemplates]) -> Result<Vec<KeywordQuery>> {
        keywords
            .iter()
            .map(|k| KeywordQuery::from_templates(&self.model, k.keyword_id, &k.templates, &self.window))
            .collect()
    }
}

impl SearchSystem for AweSearch {
    fn name(&self) -> &'static str {
        "awe"
    }

    fn search(&self, keywords: &[KeywordTemplates], utterances: &[Utterance]) -> Result<SearchOutput> {
        search(&self.model, &self.queries(keywords)?, utterances, &self.window)
    }
}

/// Subsequence DTW over frame features.
pub struct SdtwSearch {
    pub fusion: Fusion,
}

impl SearchSystem for SdtwSearch {
    fn name(&self) -> &'static str {
        "sdtw"
    }

    fn search(&self, keywords: &[KeywordTemplates], utterances: &[Utterance]) -> Result<SearchOutput> {
        Ok(SearchOutput {
            rankings: sdtw_search(keywords, utterances, self.fusion)?,
            traces: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_registered() {
        let r = Registry::with_defaults();
        assert_eq!(r.names(), vec!["awe", "sdtw"]);
        assert_eq!(r.create("sdtw", SystemContext::default()).unwrap().name(), "sdtw");
    }

    #[test]
    fn unknown_name_lists_choices() {
        let err = Registry::with_defaults()
            .create("ppp", SystemContext::default())
            .err()
            .unwrap();
        assert!(err.to_string().contains("awe, sdtw"), "{err}");
    }

    #[test]
    fn awe_needs_model() {
        assert!(Registry::with_defaults()
            .create("awe", SystemContext::default())
            .is_err());
    }
}
