//! Run configuration: one JSON document with a section per concern, plus
//! `key=value` overrides addressed by dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::metrics::DistanceBuckets;
use crate::model::FrontEndKind;
use crate::pretrain::PretrainConfig;
use crate::render::ATLAS_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub front_end: FrontEndKind,
    pub encoder: EncoderConfig,
    /// Target BPE vocabulary size for the subword front-end.
    pub vocab_size: usize,
    /// Token window of the subword front-end, separator included.
    pub max_tokens: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            front_end: FrontEndKind::Pixel,
            encoder: EncoderConfig::default(),
            vocab_size: 400,
            max_tokens: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    /// Patch window of the pixel front-end, separator included.
    pub max_patches: usize,
    pub atlas_version: u32,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection { max_patches: 96, atlas_version: ATLAS_VERSION }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub buckets: DistanceBuckets,
    pub perturb_rates: Vec<f64>,
    pub perturb_seed: u64,
    /// Score gold against itself instead of running the model.
    pub gold_debug: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            buckets: DistanceBuckets::default(),
            perturb_rates: vec![0.0],
            perturb_seed: 0,
            gold_debug: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Plain-text pretraining corpus, one example per line.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Checkpoint whose backbone initializes fine-tuning.
    pub pretrained: Option<PathBuf>,
    /// Fine-tuning run directories to evaluate or report on.
    pub runs: Vec<PathBuf>,
    /// Text file for `render`, one image per line.
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub run_name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub render: RenderSection,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Defaults, overlaid by the optional JSON file, then by `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("serializable");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file_value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, file_value, "")?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.encoder.validate()?;
        if self.render.atlas_version != ATLAS_VERSION {
            return Err(Error::Config(format!(
                "render.atlas_version {} is not available (this build ships version {ATLAS_VERSION})",
                self.render.atlas_version
            )));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.eval.buckets.validate()?;
        if let Some(r) = self.eval.perturb_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("eval.perturb_rates entry {r} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn max_len(&self, kind: FrontEndKind) -> usize {
        match kind {
            FrontEndKind::Pixel => self.render.max_patches,
            FrontEndKind::Subword => self.model.max_tokens,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    /// Writes `config.json` into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn run_dir(&self) -> PathBuf {
        if self.paths.run_name.is_empty() {
            self.paths.out.clone()
        } else {
            self.paths.out.join(&self.paths.run_name)
        }
    }
}

fn merge(base: &mut Value, overlay: Value, prefix: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::Config(format!("unknown key '{path}'"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a plain string otherwise.
pub fn apply_override(value: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override '{assignment}' has an empty key")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *value;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?,
            _ => return Err(Error::Config(format!("'{key}' does not name a setting"))),
        };
    }
    *slot = parsed;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::Task;

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "finetune.task=parse".into(),
                "finetune.seeds=[1,2,3]".into(),
                "model.encoder.hidden_dim=32".into(),
                "paths.out=/tmp/x".into(),
                "model.front_end=subword".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.finetune.task, Task::Parse);
        assert_eq!(cfg.finetune.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.model.encoder.hidden_dim, 32);
        assert_eq!(cfg.paths.out, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.model.front_end, FrontEndKind::Subword);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::resolve(None, &["model.depth=3".into()]).is_err());
        assert!(RunConfig::resolve(None, &["nokey".into()]).is_err());
        assert!(RunConfig::resolve(None, &["render.atlas_version=2".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"pretrain": {"steps": 5, "stepz": 1}}"#).unwrap();
        let err = RunConfig::resolve(Some(&p), &[]).unwrap_err().to_string();
        assert!(err.contains("pretrain.stepz"), "{err}");
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::resolve(None, &["pretrain.steps=7".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.write_snapshot(dir.path()).unwrap();
        let back = RunConfig::resolve(Some(&dir.path().join("config.json")), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
