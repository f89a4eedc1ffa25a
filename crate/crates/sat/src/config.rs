//! Run configuration: model, training and split settings, loaded from JSON
//! and adjusted with `key=value` overrides.

use std::path::Path;

use sat_core::data::{self, Dataset};
use sat_core::posenc::PeKind;
use sat_core::train::TrainConfig;
use sat_core::{Readout, SatConfig, SatModel, Task};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    /// Stratify by class; `None` stratifies exactly for graph classification.
    pub stratify: Option<bool>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fractions: [0.8, 0.1, 0.1], stratify: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: SatConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

const SECTIONS: [&str; 3] = ["model", "train", "split"];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// JSON with sorted keys and no whitespace.
    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    /// Applies `key=value` overrides in order. Keys are dotted paths
    /// (`model.k`) or bare field names found in exactly one section (`k`).
    /// Values are JSON, or plain strings when they do not parse as JSON.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        for item in overrides {
            let item = item.as_ref();
            let bad = |msg: String| Error::Override(item.to_owned(), msg);
            let (key, raw) = item.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
            let path = resolve_key(&tree, key.trim()).map_err(bad)?;
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_owned()));
            let mut slot = &mut tree;
            for part in &path {
                slot = slot.get_mut(part.as_str()).expect("resolved path exists");
            }
            *slot = value;
            serde_json::from_value::<RunConfig>(tree.clone()).map_err(|e| bad(e.to_string()))?;
        }
        *self = serde_json::from_value(tree)?;
        Ok(())
    }

    /// Fills in the data-dependent model fields from `dataset`.
    pub fn resolve_for(&mut self, dataset: &Dataset) {
        let m = &mut self.model;
        m.input_dim = dataset.feat_dim();
        m.edge_dim = dataset.edge_dim();
        m.output_dim = dataset.output_dim();
        m.task = dataset.task();
        if m.task == Task::NodeClass {
            m.readout = Readout::None;
        } else if m.readout == Readout::None {
            m.readout = Readout::Mean;
        }
        if m.pe == PeKind::None {
            m.pe_dim = 0;
        }
        self.train.loss = TrainConfig::loss_for(m.task);
    }

    /// Checks both sections and builds the parameter layout.
    pub fn build_model(&self) -> Result<SatModel> {
        self.train.validate()?;
        Ok(SatModel::new(self.model.clone(), self.train.seed)?.0)
    }

    /// Splits `dataset` with the configured fractions, seeded by the
    /// training seed.
    pub fn split(&self, dataset: Dataset) -> Result<Dataset> {
        let stratify = self.split.stratify.unwrap_or(dataset.task() == Task::GraphClass);
        Ok(data::split(dataset, self.split.fractions, self.train.seed, stratify)?)
    }
}

fn resolve_key(tree: &Value, key: &str) -> std::result::Result<Vec<String>, String> {
    if key.is_empty() {
        return Err("empty key".into());
    }
    let parts: Vec<String> = key.split('.').map(str::to_owned).collect();
    if parts.len() > 1 {
        let mut node = tree;
        for p in &parts {
            node = node.get(p.as_str()).ok_or_else(|| format!("unknown key `{key}`"))?;
        }
        return Ok(parts);
    }
    let hits: Vec<&str> = SECTIONS.iter().copied().filter(|s| tree[s].get(key).is_some()).collect();
    match hits.as_slice() {
        [one] => Ok(vec![(*one).to_owned(), key.to_owned()]),
        [] => Err(format!("unknown key `{key}`")),
        many => Err(format!("`{key}` is ambiguous between {many:?}; use a dotted path")),
    }
}
