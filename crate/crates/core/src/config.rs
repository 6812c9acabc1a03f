//! Pipeline configuration: a TOML file layered over a named preset, with
//! `section.key=value` overrides applied last.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticCorpusSpec;
use crate::error::{Error, Result};
use crate::eval::{F0Config, VadConfig};
use crate::ipu_classifier::ClassifierConfig;
use crate::ms_dlm::{ModelConfig, TrainConfig};
use crate::u2s::SynthConfig;

/// Keys filled in from other sections or from the data at run time.
const DERIVED_KEYS: [(&str, &str, &str); 7] = [
    ("corpus", "seed", "seeds.corpus"),
    ("classifier", "seed", "seeds.classifier"),
    ("classifier", "vocab_size", "the content unit count of the data"),
    ("model", "seed", "seeds.model"),
    ("pretrain", "seed", "seeds.model"),
    ("train", "seed", "seeds.model"),
    ("synth", "silence_units", "the phoneme map"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Directory holding units.jsonl, phoneme_map.json and pitch_stats.bin;
    /// the corpus directory when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<PathBuf>,
    pub models: PathBuf,
    pub outputs: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub classifier: u64,
    pub kmeans: u64,
    pub model: u64,
    pub sampling: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    pub gap_threshold_s: f64,
    /// Share of the containment-labelled IPUs held out to pick the classifier checkpoint.
    pub validation_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    pub k: usize,
    pub feature_dim: usize,
    pub feature_spread: f64,
    pub feature_jitter: f64,
    /// Frames sampled for the k-means fit; all frames are quantized.
    pub max_fit_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub greedy: bool,
    /// Frame cap for each utterance generated in the TTS setting.
    pub tts_max_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub min_silence_s: f64,
    pub histogram_bins: usize,
    pub histogram_max_s: f64,
    pub vad: VadConfig,
    pub f0: F0Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: String,
    pub paths: Paths,
    pub seeds: Seeds,
    pub corpus: SyntheticCorpusSpec,
    pub prepare: PrepareConfig,
    pub classifier: ClassifierConfig,
    pub units: UnitsConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let (classifier, pretrain, train) = match name {
            "desk" => (
                ClassifierConfig::desk(0),
                TrainConfig { steps: 15_000, batch_size: 4, warmup_steps: 100, max_lr: 3e-3, ..TrainConfig::default() },
                TrainConfig { steps: 8000, batch_size: 4, warmup_steps: 100, max_lr: 2e-3, ..TrainConfig::default() },
            ),
            _ => (
                ClassifierConfig::paper(0),
                TrainConfig { steps: 100_000, batch_size: 32, warmup_steps: 10_000, max_lr: 5e-4, ..TrainConfig::default() },
                TrainConfig { steps: 100_000, batch_size: 32, warmup_steps: 10_000, max_lr: 5e-4, ..TrainConfig::default() },
            ),
        };
        Ok(PipelineConfig {
            preset: name.to_string(),
            paths: Paths {
                corpus: "run/corpus".into(),
                units: None,
                models: "run/models".into(),
                outputs: "run/outputs".into(),
            },
            seeds: Seeds { corpus: 1, classifier: 3, kmeans: 4, model: 5, sampling: 6 },
            corpus: SyntheticCorpusSpec::default(),
            prepare: PrepareConfig { gap_threshold_s: 0.2, validation_fraction: 0.2 },
            classifier,
            units: UnitsConfig { k: 64, feature_dim: 16, feature_spread: 10.0, feature_jitter: 0.05, max_fit_frames: 20_000 },
            dataset: DatasetConfig { augment: true },
            generation: GenerationConfig { greedy: false, tts_max_frames: model.max_generation_frames },
            model,
            pretrain,
            train,
            synth: SynthConfig::default(),
            eval: EvalConfig {
                min_silence_s: crate::eval::MIN_SILENCE_S,
                histogram_bins: 20,
                histogram_max_s: 2.0,
                vad: VadConfig::default(),
                f0: F0Config::default(),
            },
        })
    }

    /// Preset defaults, then the file's values, then `overrides` (`section.key=value`).
    /// The preset comes from the file's top-level `preset` key when
    /// `preset` is `None`, else "desk".
    pub fn build(file: Option<&str>, preset: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut user = match file {
            Some(text) => text.parse::<toml::Table>().map_err(|e| Error::input(format!("config: {e}")))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let name = match (preset, user.get("preset")) {
            (Some(p), _) => p.to_string(),
            (None, Some(toml::Value::String(p))) => p.clone(),
            (None, Some(_)) => return Err(Error::input("config: preset must be a string")),
            (None, None) => "desk".to_string(),
        };
        user.insert("preset".into(), toml::Value::String(name.clone()));
        for (section, key, source) in DERIVED_KEYS {
            if user.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(Error::input(format!("config: {section}.{key} is taken from {source} and cannot be set")));
            }
        }
        let mut base = toml::Table::try_from(Self::preset(&name)?).map_err(|e| Error::input(e.to_string()))?;
        strip_derived(&mut base);
        merge(&mut base, user);
        for (section, key, _) in DERIVED_KEYS {
            if let Some(toml::Value::Table(t)) = base.get_mut(section) {
                let placeholder = match key {
                    "silence_units" => toml::Value::Array(Vec::new()),
                    _ => toml::Value::Integer(0),
                };
                t.insert(key.into(), placeholder);
            }
        }
        let mut cfg: PipelineConfig =
            toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::input(format!("config: {e}")))?;
        cfg.corpus.seed = cfg.seeds.corpus;
        cfg.classifier.seed = cfg.seeds.classifier;
        cfg.model.seed = cfg.seeds.model;
        cfg.pretrain.seed = cfg.seeds.model ^ 0x9e37;
        cfg.train.seed = cfg.seeds.model ^ 0x79b9;
        cfg.synth.silence_units = crate::corpus::PhonemeMap::DEFAULT_SILENCE.to_vec();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::build(Some(&text), None, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.synth.validate()?;
        if !(0.0..1.0).contains(&self.prepare.validation_fraction) {
            return Err(Error::input("prepare.validation_fraction must lie in [0, 1)"));
        }
        if !(self.prepare.gap_threshold_s >= 0.0) || !(self.eval.min_silence_s >= 0.0) {
            return Err(Error::input("silence thresholds must be non-negative"));
        }
        if self.units.k < 2 || self.units.feature_dim == 0 {
            return Err(Error::input("units.k must be >= 2 and units.feature_dim positive"));
        }
        if self.eval.histogram_bins == 0 || !(self.eval.histogram_max_s > 0.0) {
            return Err(Error::input("histograms need at least one bin and a positive range"));
        }
        for (name, t) in [("pretrain", &self.pretrain), ("train", &self.train)] {
            if t.batch_size == 0 {
                return Err(Error::input(format!("{name}.batch_size must be positive")));
            }
        }
        Ok(())
    }

    pub fn units_dir(&self) -> &Path {
        self.paths.units.as_deref().unwrap_or(&self.paths.corpus)
    }

    /// Effective configuration as TOML, derived keys included.
    /// Settable keys only, so the output loads back as a config file.
    pub fn to_toml(&self) -> Result<String> {
        let mut t = toml::Table::try_from(self).map_err(|e| Error::input(e.to_string()))?;
        strip_derived(&mut t);
        toml::to_string(&t).map_err(|e| Error::input(e.to_string()))
    }
}

fn strip_derived(t: &mut toml::Table) {
    for (section, key, _) in DERIVED_KEYS {
        if let Some(toml::Value::Table(s)) = t.get_mut(section) {
            s.remove(key);
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply one `a.b.c=value` override. The value is read as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::input(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::input(format!("override key {key:?} is malformed")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = match entry {
            toml::Value::Table(inner) => inner,
            _ => return Err(Error::input(format!("override key {key:?} descends into a value"))),
        };
    }
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
