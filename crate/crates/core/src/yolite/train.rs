use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    assign_targets, decode, detector_loss, kmeans_anchors, nms, AnchorSet, Detector, LossBreakdown, LossWeights, ModelSpec,
    Result, YoliteError,
};
use crate::bbox::BBox;
use crate::detection::{Detection, LabeledBox};
use crate::imgsynth::{rng_for, ImageBuffer};
use crate::manifest::Manifest;
use crate::ndgrad::{read_archive, write_archive, AdamConfig, AdamState, Graph, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub model: ModelSpec,
    /// Fixed priors; when absent they are clustered from the training boxes.
    pub anchors: Option<AnchorSet>,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Random horizontal and vertical flips.
    pub flip_augment: bool,
    /// Initial objectness logit, so training starts from a low false-positive rate.
    pub obj_bias_init: f64,
    pub log_every: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DetectorConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelSpec::default(),
            anchors: None,
            loss: LossWeights::default(),
            batch_size: 8,
            steps: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            flip_augment: true,
            obj_bias_init: -4.0,
            log_every: 50,
        }
    }

    /// 416 px input, batch 32, learning rate 0.001, 10000 optimizer steps.
    pub fn paper() -> Self {
        Self {
            model: ModelSpec { input_size: 416, ..ModelSpec::default() },
            batch_size: 32,
            steps: 10_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(YoliteError::Config("batch size and learning rate must be positive".into()));
        }
        if let Some(a) = &self.anchors {
            a.validate(self.model.input_size)?;
        }
        Ok(())
    }
}

/// One training image at input resolution with boxes in input pixels.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    pub pixels: Vec<T>,
    pub boxes: Vec<LabeledBox>,
}

/// Reads every manifest image from `dir`, resized to the model input.
pub fn load_samples<T: Scalar>(manifest: &Manifest, dir: &Path, spec: &ModelSpec) -> Result<Vec<TrainSample<T>>> {
    let s = spec.input_size;
    manifest
        .images
        .iter()
        .map(|e| {
            let img = ImageBuffer::<T>::load_png(&dir.join(&e.file), spec.channels).map_err(|err| YoliteError::Data(err.to_string()))?;
            let (sx, sy) = (s as f64 / img.width() as f64, s as f64 / img.height() as f64);
            let pixels = img.resize(s, s).to_tensor(|v| v).into_data();
            let boxes = e.boxes.iter().map(|b| LabeledBox { bbox: b.bbox().scaled(sx, sy), class: b.class }).collect();
            Ok(TrainSample { pixels, boxes })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// The resolved configuration, echoed at the top of the log.
    pub config: DetectorConfig,
    pub num_parameters: usize,
    pub num_samples: usize,
    pub anchors: AnchorSet,
    pub steps: Vec<StepLog>,
    pub collisions: usize,
}

fn flip_plane<T: Copy>(data: &mut [T], c: usize, s: usize, horizontal: bool) {
    for ch in 0..c {
        let plane = &mut data[ch * s * s..(ch + 1) * s * s];
        if horizontal {
            for row in plane.chunks_mut(s) {
                row.reverse();
            }
        } else {
            for y in 0..s / 2 {
                let (top, bottom) = plane.split_at_mut((s - 1 - y) * s);
                top[y * s..(y + 1) * s].swap_with_slice(&mut bottom[..s]);
            }
        }
    }
}

/// Minibatch Adam over [`detector_loss`]. Batches are drawn from seeded epoch shuffles.
pub fn train_detector<T: Scalar>(samples: &[TrainSample<T>], cfg: &DetectorConfig, class_names: Vec<String>) -> Result<(Detector<T>, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(YoliteError::EmptyDataset);
    }
    let spec = &cfg.model;
    let s = spec.input_size;
    let c = spec.channels;
    let anchors = match &cfg.anchors {
        Some(a) => a.clone(),
        None => {
            let shapes: Vec<(f64, f64)> = samples.iter().flat_map(|x| x.boxes.iter().map(|b| (b.bbox.w, b.bbox.h))).collect();
            kmeans_anchors(&shapes, &spec.strides, spec.anchors_per_scale, s, cfg.seed)
        }
    };
    let mut det = Detector::build(spec, anchors.clone(), class_names, cfg.obj_bias_init, cfg.seed)?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, ..AdamConfig::default() };
    let mut opt = AdamState::new(&det.params, adam);
    let mut rng = rng_for(cfg.seed ^ 0x5EED_DE7E);
    let mut order: Vec<usize> = Vec::new();
    let mut log = TrainLog {
        config: cfg.clone(),
        num_parameters: det.num_parameters(),
        num_samples: samples.len(),
        anchors,
        steps: Vec::new(),
        collisions: 0,
    };
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size * c * s * s);
        let mut gts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
            }
            let sample = &samples[order.pop().unwrap()];
            let mut px = sample.pixels.clone();
            let mut boxes = sample.boxes.clone();
            if cfg.flip_augment {
                let side = s as f64;
                if rng.gen_bool(0.5) {
                    flip_plane(&mut px, c, s, true);
                    for b in &mut boxes {
                        b.bbox = BBox::new(side - b.bbox.x - b.bbox.w, b.bbox.y, b.bbox.w, b.bbox.h);
                    }
                }
                if rng.gen_bool(0.5) {
                    flip_plane(&mut px, c, s, false);
                    for b in &mut boxes {
                        b.bbox = BBox::new(b.bbox.x, side - b.bbox.y - b.bbox.h, b.bbox.w, b.bbox.h);
                    }
                }
            }
            batch.extend(px);
            gts.push(boxes);
        }
        let targets = assign_targets(&gts, &det.anchors, s);
        log.collisions += targets.collisions;
        let mut g = Graph::new();
        let vars = det.params.bind(&mut g);
        let x = g.constant(Tensor::new(vec![cfg.batch_size, c, s, s], batch)?);
        let preds = det.forward(&mut g, &vars, x)?;
        let (loss, parts) = detector_loss(&mut g, &preds, &targets, &det.anchors, spec.num_classes, &cfg.loss)?;
        if !parts.total.is_finite() {
            return Err(YoliteError::NonFinite { step, box_term: parts.box_term, obj_term: parts.obj_term, cls_term: parts.cls_term });
        }
        g.backward(loss)?;
        det.params.zero_grads();
        det.params.collect_grads(&g, &vars);
        opt.step(&mut det.params)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log.steps.push(StepLog { step, loss: parts });
        }
    }
    Ok((det, log))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    model: ModelSpec,
    anchors: AnchorSet,
    class_names: Vec<String>,
}

impl<T: Scalar> Detector<T> {
    /// Writes `<stem>.ndg` (weights) and `<stem>.json` (model shape, anchors, classes).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let ck = |p: &Path, m: String| YoliteError::Checkpoint { path: p.display().to_string(), message: m };
        let weights = dir.join(format!("{stem}.ndg"));
        let f = File::create(&weights).map_err(|e| ck(&weights, e.to_string()))?;
        let named: Vec<(String, &Tensor<T>)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        write_archive(BufWriter::new(f), &named)?;
        let meta = dir.join(format!("{stem}.json"));
        let side = Sidecar { model: self.spec.clone(), anchors: self.anchors.clone(), class_names: self.class_names.clone() };
        let mut text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(&meta, text).map_err(|e| ck(&meta, e.to_string()))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let ck = |p: &Path, m: String| YoliteError::Checkpoint { path: p.display().to_string(), message: m };
        let meta = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&meta).map_err(|e| ck(&meta, e.to_string()))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| ck(&meta, e.to_string()))?;
        let mut det = Detector::build(&side.model, side.anchors, side.class_names, 0.0, 0)?;
        let weights = dir.join(format!("{stem}.ndg"));
        let f = File::open(&weights).map_err(|e| ck(&weights, e.to_string()))?;
        let tensors: Vec<(String, Tensor<T>)> = read_archive(BufReader::new(f))?;
        if tensors.len() != det.params.len() {
            return Err(ck(&weights, format!("{} tensors, model needs {}", tensors.len(), det.params.len())));
        }
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            if name != det.params.name(i) || t.shape() != det.params.get(i).shape() {
                return Err(ck(&weights, format!("tensor `{name}` {:?} does not fit `{}`", t.shape(), det.params.name(i))));
            }
            det.params.get_mut(i).data_mut().copy_from_slice(t.data());
        }
        Ok(det)
    }

    /// Forward, decode and NMS for an image already at input resolution.
    pub fn detect_input(&self, image: &ImageBuffer<T>, conf_threshold: f64, iou_threshold: f64) -> Result<Vec<Detection>> {
        let s = self.spec.input_size;
        if image.height() != s || image.width() != s {
            return Err(YoliteError::SizeMismatch { got: image.height(), got_w: image.width(), want: s });
        }
        let input = image.with_channels(self.spec.channels).to_tensor(|v| v);
        let preds = self.predict(input)?;
        let dets = decode(&preds, &self.anchors, s, self.spec.num_classes, conf_threshold);
        Ok(nms(&dets[0], iou_threshold))
    }

    /// Resizes to the input size, detects, and maps boxes back to image pixels.
    pub fn detect(&self, image: &ImageBuffer<T>, conf_threshold: f64, iou_threshold: f64) -> Result<Vec<Detection>> {
        let s = self.spec.input_size;
        let resized = image.resize(s, s);
        let (sx, sy) = (image.width() as f64 / s as f64, image.height() as f64 / s as f64);
        let dets = self.detect_input(&resized, conf_threshold, iou_threshold)?;
        Ok(dets.into_iter().map(|d| Detection::new(d.bbox().scaled(sx, sy), d.class, d.confidence)).collect())
    }
}

/// [`Detector::detect_input`] timed three times; returns the detections and the median milliseconds.
pub fn infer<T: Scalar>(det: &Detector<T>, image: &ImageBuffer<T>, conf_threshold: f64, iou_threshold: f64) -> Result<(Vec<Detection>, f64)> {
    let mut times = Vec::with_capacity(3);
    let mut out = Vec::new();
    for _ in 0..3 {
        let t0 = Instant::now();
        out = det.detect_input(image, conf_threshold, iou_threshold)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok((out, times[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_are_involutions() {
        let data: Vec<u32> = (0..2 * 5 * 5).collect();
        for h in [true, false] {
            let mut d = data.clone();
            flip_plane(&mut d, 2, 5, h);
            assert_ne!(d, data);
            flip_plane(&mut d, 2, 5, h);
            assert_eq!(d, data);
        }
        let mut d: Vec<u32> = (0..4).collect();
        flip_plane(&mut d, 1, 2, false);
        assert_eq!(d, vec![2, 3, 0, 1]);
    }

    #[test]
    fn presets() {
        let p = DetectorConfig::paper();
        assert_eq!((p.batch_size, p.model.input_size, p.learning_rate), (32, 416, 0.001));
        p.validate().unwrap();
        let d = DetectorConfig::desk();
        assert_eq!((d.batch_size, d.model.input_size, d.steps), (8, 256, 2000));
    }
}
