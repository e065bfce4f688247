use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use aoi_core::detection::{write_predictions, Detection, ImagePredictions};
use aoi_core::evalkit::{evaluate, render_table, split_dataset, DatasetSizes, EvalReport, ReportOptions};
use aoi_core::imgsynth::{gen_dataset, rng_for, ImageBuffer};
use aoi_core::manifest::{Manifest, CLASS_NAMES};
use aoi_core::singen::{train_gan, GanConfig, GanModel};
use aoi_core::yolite::{infer, load_samples, train_detector, Detector};

use crate::augment::{augment_sources, copy_originals, pick_sources, write_logs};
use crate::config::{AugmentSource, RunConfig};
use crate::{io_err, require, write, CliError, Result};

pub const DETECTOR_STEM: &str = "detector";

/// Paths under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }
    pub fn data(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn augment(&self) -> PathBuf {
        self.out.join("augment")
    }
    pub fn detector(&self, variant: Variant) -> PathBuf {
        self.out.join("detector").join(variant.name())
    }
    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }
    /// Directory holding the images and split manifests a variant trains and tests on.
    pub fn dataset(&self, variant: Variant) -> PathBuf {
        match variant {
            Variant::Baseline => self.data(),
            Variant::Augmented => self.augment(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Augmented,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Augmented => "augmented",
        }
    }

    fn producer(self) -> &'static str {
        match self {
            Self::Baseline => "synth",
            Self::Augmented => "augment",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Baseline => "Detector (original data)",
            Self::Augmented => "Detector (augmented data)",
        }
    }
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write(&dir.join("resolved_config.json"), &cfg.to_json())
}

fn write_split(dir: &Path, train: &Manifest, val: &Manifest, test: &Manifest) -> Result<()> {
    for (name, m) in [("train", train), ("val", val), ("test", test)] {
        m.save(&dir.join(format!("{name}.json")))?;
    }
    Ok(())
}

fn load_part(dir: &Path, part: &str, producer: &'static str) -> Result<Manifest> {
    let p = dir.join(format!("{part}.json"));
    require(&p, producer)?;
    Ok(Manifest::load(&p)?)
}

/// Synthesizes the dataset and its train/val/test split.
pub fn synth(cfg: &RunConfig) -> Result<Manifest> {
    let l = Layout::new(&cfg.paths.out);
    let dir = l.data();
    let manifest = gen_dataset(&cfg.synth.params, cfg.synth.count, &dir)?;
    let split = split_dataset(&manifest, &cfg.split_spec())?;
    write_split(&dir, &split.train, &split.val, &split.test)?;
    save_config(&dir, cfg)?;
    save_config(&l.out, cfg)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub sources: usize,
    pub generated: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Trains one GAN per source patch and writes the augmented dataset and its split.
pub fn augment(cfg: &RunConfig) -> Result<AugmentSummary> {
    let l = Layout::new(&cfg.paths.out);
    let data = l.data();
    require(&data.join("manifest.json"), "synth")?;
    let all = Manifest::load(&data.join("manifest.json"))?;
    let dir = l.augment();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    let a = &cfg.augment;
    let pool = match a.source {
        AugmentSource::Train => load_part(&data, "train", "synth")?,
        AugmentSource::All => all.clone(),
    };
    let sources = pick_sources(&pool, a.patches);
    let channels = cfg.synth.params.channels;
    let (generated, logs) = augment_sources(&sources, &data, &images, &dir.join("gan"), a, &cfg.gan, channels)?;
    write_logs(&dir.join("augment_log.json"), &logs)?;

    let originals = copy_originals(&all, &data, &images)?;
    let mut full = Manifest { images: originals, classes: all.classes.clone() };
    full.images.extend(generated.iter().cloned());
    full.save(&dir.join("manifest.json"))?;
    let relabel = |m: Manifest| Manifest {
        images: m.images.into_iter().map(|e| full.images.iter().find(|f| f.file == e.file).cloned().unwrap_or(e)).collect(),
        ..m
    };
    let (train, val, test) = match a.source {
        AugmentSource::Train => {
            let mut train = relabel(load_part(&data, "train", "synth")?);
            train.images.extend(generated.iter().cloned());
            (train, relabel(load_part(&data, "val", "synth")?), relabel(load_part(&data, "test", "synth")?))
        }
        AugmentSource::All => {
            let s = split_dataset(&full, &cfg.split_spec())?;
            (s.train, s.val, s.test)
        }
    };
    write_split(&dir, &train, &val, &test)?;
    save_config(&dir, cfg)?;
    Ok(AugmentSummary { sources: sources.len(), generated: generated.len(), train: train.images.len(), val: val.images.len(), test: test.images.len() })
}

fn image_dir(l: &Layout, variant: Variant) -> PathBuf {
    match variant {
        Variant::Baseline => l.data(),
        Variant::Augmented => l.augment().join("images"),
    }
}

/// Trains the detector for `variant` on its training split (f32).
pub fn train(cfg: &RunConfig, variant: Variant) -> Result<Detector<f32>> {
    let l = Layout::new(&cfg.paths.out);
    let train = load_part(&l.dataset(variant), "train", variant.producer())?;
    let samples = load_samples::<f32>(&train, &image_dir(&l, variant), &cfg.detector.model)?;
    let names = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let (det, log) = train_detector(&samples, &cfg.detector, names)?;
    let dir = l.detector(variant);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    det.save(&dir, DETECTOR_STEM)?;
    let mut text = serde_json::to_string_pretty(&log).expect("train log serializes");
    text.push('\n');
    write(&dir.join("train_log.json"), &text)?;
    save_config(&dir, cfg)?;
    Ok(det)
}

pub fn load_detector(dir: &Path) -> Result<Detector<f32>> {
    require(&dir.join(format!("{DETECTOR_STEM}.json")), "train-detector")?;
    Ok(Detector::load(dir, DETECTOR_STEM)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub model: String,
    pub mean_ms: f64,
    pub images: usize,
}

/// Predictions for every test image: resized to the detector input, detected
/// at the score threshold and mapped back. Also returns the mean median-of-3 time.
pub fn predict(det: &Detector<f32>, test: &Manifest, dir: &Path, score: f64, nms_iou: f64) -> Result<(Vec<ImagePredictions>, f64)> {
    let s = det.spec.input_size;
    let mut preds = Vec::with_capacity(test.images.len());
    let mut total_ms = 0.0;
    for e in &test.images {
        let img = ImageBuffer::<f32>::load_png(&dir.join(&e.file), det.spec.channels)?;
        let (sx, sy) = (img.width() as f64 / s as f64, img.height() as f64 / s as f64);
        let t0 = Instant::now();
        let resized = img.resize(s, s);
        let resize_ms = t0.elapsed().as_secs_f64() * 1e3;
        let (dets, ms) = infer(det, &resized, score, nms_iou)?;
        total_ms += ms + resize_ms;
        let detections = dets.into_iter().map(|d| Detection::new(d.bbox().scaled(sx, sy), d.class, d.confidence)).collect();
        preds.push(ImagePredictions { file: e.file.clone(), detections, ms: None });
    }
    Ok((preds, total_ms / test.images.len().max(1) as f64))
}

/// Evaluates every trained variant on its test split and writes the reports.
pub fn evaluate_all(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let l = Layout::new(&cfg.paths.out);
    let variants: Vec<Variant> =
        [Variant::Baseline, Variant::Augmented].into_iter().filter(|v| l.detector(*v).join(format!("{DETECTOR_STEM}.json")).exists()).collect();
    if variants.is_empty() {
        return Err(CliError::Missing { what: l.out.join("detector"), producer: "train-detector" });
    }
    let dir = l.eval();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let opts = ReportOptions { conf_threshold: cfg.eval.conf_threshold, iou_threshold: cfg.eval.iou_threshold, num_classes: CLASS_NAMES.len() };
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for v in variants {
        let det = load_detector(&l.detector(v))?;
        let ds = l.dataset(v);
        let test = load_part(&ds, "test", v.producer())?;
        let sizes = DatasetSizes {
            train: load_part(&ds, "train", v.producer())?.images.len(),
            val: load_part(&ds, "val", v.producer())?.images.len(),
            test: test.images.len(),
        };
        let (preds, mean_ms) = predict(&det, &test, &image_dir(&l, v), cfg.eval.score_threshold, cfg.eval.nms_iou)?;
        let file = std::fs::File::create(dir.join(format!("predictions_{}.jsonl", v.name()))).map_err(io_err(&dir))?;
        write_predictions(std::io::BufWriter::new(file), &preds).map_err(io_err(&dir))?;
        let mut report = evaluate(v.label(), &test, &preds, &opts)?;
        report.dataset = Some(sizes);
        timings.push(Timing { model: v.label().into(), mean_ms, images: test.images.len() });
        rows.push(report);
    }
    // report.json holds only deterministic numbers; wall times go to timing.json
    let mut text = serde_json::to_string_pretty(&rows).expect("reports serialize");
    text.push('\n');
    write(&dir.join("report.json"), &text)?;
    let mut text = serde_json::to_string_pretty(&timings).expect("timings serialize");
    text.push('\n');
    write(&dir.join("timing.json"), &text)?;
    let timed: Vec<EvalReport> =
        rows.iter().zip(&timings).map(|(r, t)| EvalReport { detection_time_ms: Some(t.mean_ms), ..r.clone() }).collect();
    write(&dir.join("report.md"), &render_table(&timed))?;
    save_config(&dir, cfg)?;
    Ok(timed)
}

/// synth, augment (when enabled), both detectors, evaluation.
pub fn pipeline(cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<Vec<EvalReport>> {
    let t0 = Instant::now();
    let m = synth(cfg)?;
    progress(&format!("synth: {} images, {} defects ({:.0} s)", m.images.len(), m.num_boxes(), t0.elapsed().as_secs_f64()));
    train(cfg, Variant::Baseline)?;
    progress(&format!("baseline detector trained ({:.0} s)", t0.elapsed().as_secs_f64()));
    if cfg.augment.enabled {
        let s = augment(cfg)?;
        progress(&format!(
            "augment: {} sources, {} generated, split {}/{}/{} ({:.0} s)",
            s.sources,
            s.generated,
            s.train,
            s.val,
            s.test,
            t0.elapsed().as_secs_f64()
        ));
        train(cfg, Variant::Augmented)?;
        progress(&format!("augmented detector trained ({:.0} s)", t0.elapsed().as_secs_f64()));
    }
    let rows = evaluate_all(cfg)?;
    progress(&format!("evaluated ({:.0} s)", t0.elapsed().as_secs_f64()));
    Ok(rows)
}

/// Trains a GAN on one image and saves it to `model_dir`.
pub fn train_gan_on(input: &Path, gan: &GanConfig, channels: usize, model_dir: &Path) -> Result<GanModel<f32>> {
    require(input, "synth")?;
    let img = ImageBuffer::<f32>::load_png(input, channels)?;
    let (model, log) = train_gan(&img, gan)?;
    model.save(model_dir)?;
    let mut text = serde_json::to_string_pretty(&log).expect("gan log serializes");
    text.push('\n');
    write(&model_dir.join("gan_log.json"), &text)?;
    Ok(model)
}

/// Writes `count` samples of a saved GAN as `sample_NNN.png`.
pub fn generate(model_dir: &Path, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    require(&model_dir.join("singen.json"), "train-gan")?;
    let model: GanModel<f32> = GanModel::load(model_dir)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rng = rng_for(seed);
    model
        .sample(count, &mut rng)?
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = out.join(format!("sample_{i:03}.png"));
            img.save_png(&p)?;
            Ok(p)
        })
        .collect()
}

/// Detector to serve: the explicit directory, else the augmented, else the baseline checkpoint.
pub fn serving_detector(cfg: &RunConfig, explicit: Option<&Path>) -> Result<Option<Detector<f32>>> {
    if let Some(dir) = explicit {
        return load_detector(dir).map(Some);
    }
    let l = Layout::new(&cfg.paths.out);
    for v in [Variant::Augmented, Variant::Baseline] {
        if l.detector(v).join(format!("{DETECTOR_STEM}.json")).exists() {
            return load_detector(&l.detector(v)).map(Some);
        }
    }
    Ok(None)
}
