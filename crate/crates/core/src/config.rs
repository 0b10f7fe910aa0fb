//! Run configuration: one TOML file with `[model]`, `[train]`, `[data]` and
//! `[ablation]` sections. Command-line `key.path=value` overrides are applied
//! to the parsed document before it is checked, so unknown keys are rejected
//! wherever they come from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_coco_panoptic, Dataset, SyntheticConfig, SyntheticDataset};
use crate::error::{Error, Result};
use crate::maskgen::Detection;
use crate::model::{DetectorKind, MaskKind, ModelConfig};
use crate::training::{IouKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSplits {
    pub train: SyntheticConfig,
    pub val: SyntheticConfig,
}

impl Default for SyntheticSplits {
    fn default() -> Self {
        Self {
            train: SyntheticConfig::default(),
            val: SyntheticConfig {
                seed: 1,
                num_images: 200,
                ..SyntheticConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoSplit {
    pub json: PathBuf,
    pub panoptic_dir: PathBuf,
    pub image_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default)]
        splits: SyntheticSplits,
    },
    Coco { train: CocoSplit, val: CocoSplit },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            splits: SyntheticSplits::default(),
        }
    }
}

/// One row of an ablation: overrides on top of the base config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    pub shuffle: Option<bool>,
    pub mask_kind: Option<MaskKind>,
    pub detector: Option<DetectorKind>,
    pub n_att: Option<usize>,
    pub c_att: Option<f64>,
    pub iou_kind: Option<IouKind>,
}

impl AblationVariant {
    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) {
        if let Some(v) = self.shuffle {
            model.shuffle = v;
        }
        if let Some(v) = self.mask_kind {
            model.mask_kind = v;
        }
        if let Some(v) = self.detector {
            model.detector = v;
        }
        if let Some(v) = self.n_att {
            model.n_att = v;
        }
        if let Some(v) = self.c_att {
            model.c_att = v;
        }
        if let Some(v) = self.iou_kind {
            train.iou_kind = v;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<AblationVariant>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
}

/// Set `a.b.c = value` inside a TOML table. The value is parsed as TOML and
/// falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        // `[data]` without a kind means the synthetic generator.
        if let Some(toml::Value::Table(data)) = doc.get_mut("data") {
            data.entry("kind").or_insert_with(|| toml::Value::String("synthetic".into()));
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    /// Check value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match &self.data {
            DataConfig::Synthetic { splits } => {
                splits.train.validate()?;
                splits.val.validate()?;
            }
            DataConfig::Coco { train, val } => {
                for split in [train, val] {
                    let paths = [Some(&split.json), Some(&split.panoptic_dir), split.image_dir.as_ref()];
                    for p in paths.into_iter().flatten() {
                        if !p.exists() {
                            return Err(Error::Config(format!("dataset path {} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        for v in &self.ablation.variants {
            let (mut m, mut t) = (self.model.clone(), self.train.clone());
            v.apply(&mut m, &mut t);
            m.validate()
                .map_err(|e| Error::Config(format!("ablation '{}': {e}", v.name)))?;
        }
        Ok(())
    }

    /// Class counts always follow the dataset's label space.
    pub fn adopt_labels(&mut self, labels: &crate::panoptic::LabelSpace) {
        self.model.n_things = labels.num_things();
        self.model.n_stuff = labels.num_stuff();
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn datasets(&self) -> Result<(Box<dyn Dataset>, Box<dyn Dataset>)> {
        Ok(match &self.data {
            DataConfig::Synthetic { splits } => (
                Box::new(SyntheticDataset::new(splits.train.clone())?),
                Box::new(SyntheticDataset::new(splits.val.clone())?),
            ),
            DataConfig::Coco { train, val } => {
                let open = |s: &CocoSplit| load_coco_panoptic(&s.json, &s.panoptic_dir, s.image_dir.as_deref());
                let (t, v) = (open(train)?, open(val)?);
                (Box::new(t), Box::new(v))
            }
        })
    }
}

/// Boxes supplied on the command line: a JSON list of detections.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
