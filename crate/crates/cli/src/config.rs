//! Run configuration: a preset, overlaid with a JSON document, overlaid with flags.

use std::path::{Path, PathBuf};

use aoi_core::evalkit::SplitSpec;
use aoi_core::imgsynth::{derive_seed, SynthConfig};
use aoi_core::singen::GanConfig;
use aoi_core::yolite::DetectorConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub params: SynthConfig,
}

/// Which images feed the generative augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentSource {
    /// Only the training split; validation and test stay untouched.
    Train,
    /// Every synthesized image; the augmented set is split afterwards.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub source: AugmentSource,
    /// Source images used for GAN training, in file order among those with defects; 0 means all.
    pub patches: usize,
    /// Side of the square crop around the first defect; 0 trains on the whole image.
    pub crop: usize,
    /// Accepted samples per patch.
    pub count: usize,
    /// A sample is kept when every labelled defect touching the crop keeps at
    /// least this fraction of its source contrast against the surrounding ring.
    pub min_contrast: f64,
    /// Samples drawn per patch before giving up on reaching `count`.
    pub max_attempts: usize,
    /// Parallel GAN trainings.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub split: [f64; 3],
    /// Threshold for PRE/REC/F1 and the confusion counts.
    pub conf_threshold: f64,
    /// IoU for a detection to count as correct.
    pub iou_threshold: f64,
    /// Detections below this confidence are not written; AP uses everything kept.
    pub score_threshold: f64,
    pub nms_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Every section seed is derived from this one.
    pub seed: u64,
    pub synth: SynthSection,
    pub augment: AugmentSection,
    pub gan: GanConfig,
    pub detector: DetectorConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
    pub scada: aoi_scada::ScadaConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self {
                preset: p,
                seed: 7,
                synth: SynthSection { count: 200, params: SynthConfig::default().scaled_to(256) },
                augment: AugmentSection {
                    enabled: true,
                    source: AugmentSource::Train,
                    patches: 4,
                    crop: 63,
                    count: 20,
                    min_contrast: 0.5,
                    max_attempts: 60,
                    workers: 1,
                },
                gan: GanConfig::desk(),
                detector: DetectorConfig::desk(),
                eval: EvalSection { split: [0.8, 0.1, 0.1], conf_threshold: 0.25, iou_threshold: 0.5, score_threshold: 0.01, nms_iou: 0.45 },
                paths: PathsSection { out: PathBuf::from("runs/desk") },
                scada: aoi_scada::ScadaConfig::default(),
            },
            // 35 patches, 20 samples each: 735 images split 588/73/74
            Preset::Paper => Self {
                preset: p,
                synth: SynthSection { count: 35, params: SynthConfig::default() },
                augment: AugmentSection { source: AugmentSource::All, patches: 0, crop: 0, max_attempts: 100, ..Self::preset(Preset::Desk).augment },
                gan: GanConfig::paper(),
                detector: DetectorConfig::paper(),
                paths: PathsSection { out: PathBuf::from("runs/paper") },
                ..Self::preset(Preset::Desk)
            },
        }
    }

    /// Overwrites section seeds with values derived from the top-level seed.
    pub fn derive_seeds(&mut self) {
        self.synth.params.seed = derive_seed(self.seed, 1);
        self.gan.seed = derive_seed(self.seed, 2);
        self.detector.seed = derive_seed(self.seed, 3);
        self.scada.seed = derive_seed(self.seed, 5);
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { fractions: self.eval.split, seed: derive_seed(self.seed, 4) }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.synth.params.validate().map_err(|e| cfg(&e))?;
        self.gan.validate().map_err(|e| cfg(&e))?;
        self.detector.validate().map_err(|e| cfg(&e))?;
        self.scada.validate().map_err(|e| cfg(&e))?;
        if self.synth.count == 0 {
            return Err(CliError::Config("synth.count must be positive".into()));
        }
        let a = &self.augment;
        if a.enabled && (a.count == 0 || a.workers == 0 || a.max_attempts < a.count) {
            return Err(CliError::Config("augment.count and augment.workers must be positive and max_attempts >= count".into()));
        }
        if a.enabled && a.crop != 0 && a.crop < self.gan.base_resolution {
            return Err(CliError::Config(format!("augment.crop {} is below gan.base_resolution {}", a.crop, self.gan.base_resolution)));
        }
        let e = &self.eval;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(e.conf_threshold) && unit(e.iou_threshold) && unit(e.score_threshold) && unit(e.nms_iou)) {
            return Err(CliError::Config("eval thresholds must lie in [0, 1]".into()));
        }
        if e.score_threshold > e.conf_threshold {
            return Err(CliError::Config("eval.score_threshold must not exceed eval.conf_threshold".into()));
        }
        self.split_spec().sizes(self.synth.count.max(3)).map_err(|e| cfg(&e))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Command-line overrides applied after the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Builds the resolved config. The preset comes from the flag, else the
/// document's `preset` key, else `desk`; the document then overrides any field.
pub fn resolve(text: Option<&str>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let doc: Value = match text {
        Some(t) => serde_json::from_str(t)
            .map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?,
        None => Value::Object(Default::default()),
    };
    if !doc.is_object() {
        return Err(CliError::Config("the config document must be a JSON object".into()));
    }
    let preset = match (ov.preset, doc.get("preset")) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone())
            .map_err(|_| CliError::Config(format!("preset: expected \"desk\" or \"paper\", got {v}")))?,
        (None, None) => Preset::Desk,
    };
    let mut merged = serde_json::to_value(RunConfig::preset(preset)).expect("preset serializes");
    merge(&mut merged, doc);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("field `{path}`: {}", e.into_inner()))
    })?;
    cfg.preset = preset;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.paths.out = o.clone();
    }
    cfg.derive_seeds();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            resolve(Some(&text), ov).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => resolve(None, ov),
    }
}
