#![allow(dead_code)]

use aoi_core::detection::LabeledBox;
use aoi_core::imgsynth::ImageBuffer;
use aoi_core::yolite::{fallback_anchors, train_detector, Detector, DetectorConfig, ModelSpec, TrainSample};
use aoi_scada::ScadaConfig;

pub const CLASSES: [&str; 2] = ["scratch", "irregular_hole"];

pub fn names() -> Vec<String> {
    CLASSES.iter().map(|s| s.to_string()).collect()
}

/// A short, narrow sheet so every test can run whole sheets quickly.
pub fn small_config(length_mm: f64, width_mm: f64) -> ScadaConfig {
    ScadaConfig { sheet_length_mm: length_mm, sheet_width_mm: width_mm, defects: [0, 2], nominal_holes: [0, 1], ..ScadaConfig::default() }
}

/// All weights zero: every cell predicts its anchor box with objectness
/// `sigmoid(obj_bias)` and both classes at one half.
pub fn constant_detector(input_size: usize, obj_bias: f64) -> Detector<f32> {
    let spec = ModelSpec { input_size, ..ModelSpec::default() };
    let anchors = fallback_anchors(&spec.strides, spec.anchors_per_scale, input_size);
    let mut det = Detector::build(&spec, anchors, names(), obj_bias, 0).unwrap();
    for i in 0..det.params.len() {
        if det.params.name(i).ends_with("weight") {
            det.params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    det
}

pub const BACKGROUND: f32 = 0.5;
pub const DISK_LEVEL: f32 = 0.1;
pub const DISK_RADIUS: f64 = 10.0;

/// Flat background with dark disks; returns the image and the disk boxes.
pub fn disks(height: usize, width: usize, centers: &[(f64, f64)]) -> (ImageBuffer<f32>, Vec<LabeledBox>) {
    let mut img = ImageBuffer::filled(height, width, 1, BACKGROUND);
    for y in 0..height {
        for x in 0..width {
            let inside = centers.iter().any(|&(cx, cy)| (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= DISK_RADIUS);
            if inside {
                img.set(y, x, 0, DISK_LEVEL);
            }
        }
    }
    let boxes = centers
        .iter()
        .map(|&(cx, cy)| LabeledBox {
            bbox: aoi_core::bbox::BBox::from_center(cx, cy, 2.0 * DISK_RADIUS, 2.0 * DISK_RADIUS),
            class: 1,
        })
        .collect();
    (img, boxes)
}

/// A 128 px detector fitted to dark disks on a flat background.
pub fn disk_detector() -> Detector<f32> {
    // a jittered 4 x 4 grid of single disks
    let samples: Vec<TrainSample<f32>> = (0..16)
        .map(|i| {
            let (gx, gy) = ((i % 4) as f64, (i / 4) as f64);
            let c = (14.0 + gx * 33.0 + (i * 7 % 5) as f64, 14.0 + gy * 33.0 + (i * 3 % 7) as f64);
            let (img, boxes) = disks(128, 128, &[c]);
            TrainSample { pixels: img.pixels().to_vec(), boxes }
        })
        .collect();
    let cfg = DetectorConfig {
        model: ModelSpec { input_size: 128, ..ModelSpec::default() },
        batch_size: 4,
        steps: 800,
        log_every: 100,
        ..DetectorConfig::desk()
    };
    train_detector(&samples, &cfg, names()).unwrap().0
}

/// Variance of the 4-neighbour Laplacian over interior pixels.
pub fn laplacian_variance(img: &ImageBuffer<f32>) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let g = |yy: usize, xx: usize| img.get(yy, xx, 0) as f64;
            vals.push(g(y - 1, x) + g(y + 1, x) + g(y, x - 1) + g(y, x + 1) - 4.0 * g(y, x));
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
