//! Generative augmentation: one single-image GAN per source patch, samples
//! pasted back into the source image, labels inherited from the source and
//! kept only when every defect still stands out from its surroundings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use aoi_core::bbox::BBox;
use aoi_core::imgsynth::{derive_seed, rng_for, ImageBuffer};
use aoi_core::manifest::{ImageEntry, Manifest};
use aoi_core::singen::{train_gan, GanConfig, GanLog};

use crate::config::AugmentSection;
use crate::{io_err, write, CliError, Result};

pub const ORIGINAL: &str = "original";

/// Images used as GAN sources: those with defects first, then defect-free
/// ones, each group in file order; `patches == 0` takes all of them.
pub fn pick_sources(manifest: &Manifest, patches: usize) -> Vec<&ImageEntry> {
    let (with, without): (Vec<&ImageEntry>, Vec<&ImageEntry>) = manifest.images.iter().partition(|e| !e.boxes.is_empty());
    let mut all: Vec<&ImageEntry> = with.into_iter().chain(without).collect();
    if patches > 0 {
        all.truncate(patches);
    }
    all
}

/// Top-left corner of a `crop` square centred on the first defect (or the
/// image centre), shifted to stay inside the image.
pub fn crop_origin(entry: &ImageEntry, crop: usize) -> (usize, usize) {
    let (cx, cy) = match entry.boxes.first() {
        Some(b) => b.bbox().center(),
        None => (entry.width as f64 / 2.0, entry.height as f64 / 2.0),
    };
    let place = |c: f64, side: usize| ((c - crop as f64 / 2.0).round().max(0.0) as usize).min(side - crop);
    (place(cy, entry.height), place(cx, entry.width))
}

/// `|mean(box) - mean(ring)|`, the ring being `ring` pixels around the box, clipped to the image.
pub fn box_contrast(img: &ImageBuffer<f32>, b: &BBox<f64>, ring: usize) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let x0 = b.x.floor() as isize;
    let y0 = b.y.floor() as isize;
    let x1 = b.x_max().ceil() as isize;
    let y1 = b.y_max().ceil() as isize;
    let r = ring as isize;
    let (mut inner, mut ni, mut outer, mut no) = (0.0, 0usize, 0.0, 0usize);
    for y in (y0 - r).max(0)..(y1 + r).min(h) {
        for x in (x0 - r).max(0)..(x1 + r).min(w) {
            let v = img.luma(y as usize, x as usize) as f64;
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                inner += v;
                ni += 1;
            } else {
                outer += v;
                no += 1;
            }
        }
    }
    if ni == 0 || no == 0 {
        return 0.0;
    }
    (inner / ni as f64 - outer / no as f64).abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLog {
    pub source: String,
    /// Crop origin `(row, col)` and side.
    pub origin: (usize, usize),
    pub side: (usize, usize),
    pub accepted: usize,
    pub attempts: usize,
    pub gan: GanLog,
}

pub struct PatchResult {
    pub log: PatchLog,
    pub images: Vec<ImageBuffer<f32>>,
}

/// Trains the GAN for one source, then samples until `count` pasted images pass the contrast check.
pub fn augment_one(
    entry: &ImageEntry,
    image: &ImageBuffer<f32>,
    aug: &AugmentSection,
    gan: &GanConfig,
    index: usize,
    model_dir: &Path,
) -> Result<PatchResult> {
    let (rows, cols) = if aug.crop == 0 { (image.height(), image.width()) } else { (aug.crop, aug.crop) };
    if rows > image.height() || cols > image.width() {
        return Err(CliError::Config(format!("augment.crop {} exceeds image {}x{}", aug.crop, image.height(), image.width())));
    }
    let (y0, x0) = if aug.crop == 0 { (0, 0) } else { crop_origin(entry, aug.crop) };
    let patch = image.crop(y0, x0, rows, cols);
    let cfg = GanConfig { seed: derive_seed(gan.seed, index as u64), ..gan.clone() };
    let (model, log) = train_gan(&patch, &cfg)?;
    model.save(model_dir)?;

    let region = BBox::new(x0 as f64, y0 as f64, cols as f64, rows as f64);
    let touched: Vec<(BBox<f64>, f64)> = entry
        .boxes
        .iter()
        .map(|b| b.bbox())
        .filter(|b| b.intersection(&region) > 0.0)
        .map(|b| (b, box_contrast(image, &b, 3)))
        .collect();

    let mut rng = rng_for(derive_seed(cfg.seed, 0x5eed));
    let mut images = Vec::with_capacity(aug.count);
    let mut attempts = 0;
    while images.len() < aug.count && attempts < aug.max_attempts {
        attempts += 1;
        let sample = model.sample(1, &mut rng)?.remove(0);
        let mut out = image.clone();
        let c = out.channels();
        for y in 0..rows {
            for x in 0..cols {
                for ch in 0..c {
                    out.set(y0 + y, x0 + x, ch, sample.get(y, x, ch.min(sample.channels() - 1)));
                }
            }
        }
        if touched.iter().all(|(b, src)| box_contrast(&out, b, 3) >= aug.min_contrast * src) {
            images.push(out);
        }
    }
    let log = PatchLog { source: entry.file.clone(), origin: (y0, x0), side: (rows, cols), accepted: images.len(), attempts, gan: log };
    Ok(PatchResult { log, images })
}

/// Runs [`augment_one`] over `sources` on `workers` threads and writes the
/// generated images into `images_dir`. Returns manifest entries in source order.
pub fn augment_sources(
    sources: &[&ImageEntry],
    data_dir: &Path,
    images_dir: &Path,
    gan_dir: &Path,
    aug: &AugmentSection,
    gan: &GanConfig,
    channels: usize,
) -> Result<(Vec<ImageEntry>, Vec<PatchLog>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(aug.workers)
        .build()
        .map_err(|e| CliError::Config(format!("augment.workers: {e}")))?;
    let results: Vec<Result<PatchResult>> = pool.install(|| {
        use rayon::prelude::*;
        sources
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let img = ImageBuffer::<f32>::load_png(&data_dir.join(&e.file), channels)?;
                augment_one(e, &img, aug, gan, i, &gan_dir.join(stem(&e.file)))
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut logs = Vec::new();
    for (e, r) in sources.iter().zip(results) {
        let r = r?;
        for (k, img) in r.images.iter().enumerate() {
            let file = format!("{}_gen{k:02}.png", stem(&e.file));
            img.save_png(&images_dir.join(&file))?;
            entries.push(ImageEntry {
                file,
                width: img.width(),
                height: img.height(),
                boxes: e.boxes.clone(),
                provenance: Some(format!("generated:{}", e.file)),
            });
        }
        logs.push(r.log);
    }
    Ok((entries, logs))
}

pub fn stem(file: &str) -> &str {
    file.strip_suffix(".png").unwrap_or(file)
}

/// Copies the original images next to the generated ones.
pub fn copy_originals(manifest: &Manifest, from: &Path, to: &Path) -> Result<Vec<ImageEntry>> {
    std::fs::create_dir_all(to).map_err(io_err(to))?;
    manifest
        .images
        .iter()
        .map(|e| {
            let (src, dst) = (from.join(&e.file), to.join(&e.file));
            std::fs::copy(&src, &dst).map_err(io_err(&src))?;
            Ok(ImageEntry { provenance: Some(ORIGINAL.into()), ..e.clone() })
        })
        .collect()
}

pub fn write_logs(path: &Path, logs: &[PatchLog]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(logs).expect("patch logs serialize");
    s.push('\n');
    write(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::manifest::BoxEntry;

    fn entry(file: &str, boxes: Vec<BoxEntry>) -> ImageEntry {
        ImageEntry { file: file.into(), width: 100, height: 80, boxes, provenance: None }
    }

    #[test]
    fn sources_prefer_defects_in_file_order() {
        let b = BoxEntry { x: 1.0, y: 1.0, w: 2.0, h: 2.0, class: 0 };
        let m = Manifest {
            images: vec![entry("a", vec![]), entry("b", vec![b.clone()]), entry("c", vec![]), entry("d", vec![b])],
            ..Manifest::default()
        };
        let names = |v: Vec<&ImageEntry>| v.iter().map(|e| e.file.clone()).collect::<Vec<_>>();
        assert_eq!(names(pick_sources(&m, 3)), ["b", "d", "a"]);
        assert_eq!(names(pick_sources(&m, 0)), ["b", "d", "a", "c"]);
    }

    #[test]
    fn crop_centres_and_clamps() {
        let b = |x, y| BoxEntry { x, y, w: 10.0, h: 10.0, class: 1 };
        assert_eq!(crop_origin(&entry("a", vec![b(45.0, 35.0)]), 20), (30, 40));
        assert_eq!(crop_origin(&entry("a", vec![b(0.0, 0.0)]), 20), (0, 0));
        assert_eq!(crop_origin(&entry("a", vec![b(90.0, 70.0)]), 20), (60, 80));
        assert_eq!(crop_origin(&entry("a", vec![]), 20), (30, 40));
    }

    #[test]
    fn contrast_of_a_flat_square() {
        let mut img = ImageBuffer::filled(20, 20, 1, 0.5f32);
        for y in 5..10 {
            for x in 5..10 {
                img.set(y, x, 0, 0.1);
            }
        }
        let c = box_contrast(&img, &BBox::new(5.0, 5.0, 5.0, 5.0), 3);
        assert!((c - 0.4).abs() < 1e-6, "{c}");
        assert!(box_contrast(&ImageBuffer::filled(20, 20, 1, 0.5f32), &BBox::new(5.0, 5.0, 5.0, 5.0), 3) < 1e-9);
    }
}
