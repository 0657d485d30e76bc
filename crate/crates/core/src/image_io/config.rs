use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub created_by: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_layer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

/// The parts of an image config the analysis needs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImageConfig {
    pub os: String,
    pub architecture: String,
    pub variant: Option<String>,
    pub env: Vec<String>,
    pub labels: BTreeMap<String, String>,
    pub history: Vec<HistoryEntry>,
    pub diff_ids: Vec<Digest>,
}

#[derive(Deserialize)]
struct RawConfig {
    #[serde(default)]
    os: String,
    #[serde(default)]
    architecture: String,
    #[serde(default)]
    variant: Option<String>,
    #[serde(default)]
    config: Option<RawRuntime>,
    rootfs: RawRootfs,
    #[serde(default)]
    history: Vec<HistoryEntry>,
}

#[derive(Deserialize)]
struct RawRuntime {
    #[serde(rename = "Env", default)]
    env: Option<Vec<String>>,
    #[serde(rename = "Labels", default)]
    labels: Option<BTreeMap<String, String>>,
}

#[derive(Deserialize)]
struct RawRootfs {
    #[serde(rename = "type", default)]
    kind: String,
    diff_ids: Vec<Digest>,
}

impl ImageConfig {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let raw: RawConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::MalformedManifest(format!("image config: {e}")))?;
        if !raw.rootfs.kind.is_empty() && raw.rootfs.kind != "layers" {
            return Err(Error::MalformedManifest(format!(
                "unsupported rootfs type {:?}",
                raw.rootfs.kind
            )));
        }
        let runtime = raw.config.unwrap_or(RawRuntime {
            env: None,
            labels: None,
        });
        Ok(ImageConfig {
            os: raw.os,
            architecture: raw.architecture,
            variant: raw.variant,
            env: runtime.env.unwrap_or_default(),
            labels: runtime.labels.unwrap_or_default(),
            history: raw.history,
            diff_ids: raw.rootfs.diff_ids,
        })
    }

    /// Serializes back to the standard config JSON shape.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "architecture": self.architecture,
            "os": self.os,
            "config": { "Env": self.env },
            "rootfs": { "type": "layers", "diff_ids": self.diff_ids },
            "history": self.history,
        });
        if let Some(variant) = &self.variant {
            v["variant"] = serde_json::Value::String(variant.clone());
        }
        if !self.labels.is_empty() {
            v["config"]["Labels"] = serde_json::to_value(&self.labels).expect("string map");
        }
        v
    }
}

/// Maps each layer to the history entry that created it.
///
/// Non-empty history entries are assigned to layers in order. When the
/// number of non-empty entries differs from the layer count (squashing
/// tools, hand-edited configs) no mapping is guessed: every layer maps to
/// `None` and the second return value is `false`.
pub fn align_history(history: &[HistoryEntry], layer_count: usize) -> (Vec<Option<usize>>, bool) {
    let non_empty: Vec<usize> = history
        .iter()
        .enumerate()
        .filter(|(_, h)| !h.empty_layer)
        .map(|(i, _)| i)
        .collect();
    if non_empty.len() == layer_count {
        (non_empty.into_iter().map(Some).collect(), true)
    } else {
        (vec![None; layer_count], false)
    }
}
