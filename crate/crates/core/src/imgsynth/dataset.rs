use std::fs;
use std::path::Path;

use rand::Rng;

use crate::bbox::BBox;
use crate::manifest::{BoxEntry, ImageEntry, Manifest};
use crate::scalar::Scalar;

use super::defects::{Footprint, HoleShape, ScratchPath, ScratchSpec};
use super::{derive_seed, gen_base_texture, inject_hole, inject_scratch, rng_for, GroundTruthBox, ImageBuffer, SynthConfig, SynthError};

const PLACEMENT_TRIES: usize = 20;

#[derive(Clone, Debug)]
pub struct GeneratedImage<T> {
    pub image: ImageBuffer<T>,
    pub boxes: Vec<GroundTruthBox>,
}

fn overlaps(taken: &[BBox<f64>], b: &BBox<f64>) -> bool {
    let grown = BBox::new(b.x - 2.0, b.y - 2.0, b.w + 4.0, b.h + 4.0);
    taken.iter().any(|t| t.intersection(&grown) > 0.0)
}

enum Shape {
    Scratch(ScratchPath, f64),
    Hole(HoleShape),
}

/// Draws shapes until one does not touch anything already placed.
fn place(
    taken: &[BBox<f64>],
    tries: usize,
    mut draw: impl FnMut() -> Option<(Shape, Footprint)>,
) -> Option<(Shape, Footprint)> {
    for _ in 0..tries {
        if let Some((shape, fp)) = draw() {
            if !overlaps(taken, &fp.bbox) {
                return Some((shape, fp));
            }
        }
    }
    None
}

/// One image for `seed`: texture, then unlabeled round holes, then labeled defects.
pub fn gen_image<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<GeneratedImage<T>, SynthError> {
    cfg.validate()?;
    let (h, w) = (cfg.patch_size, cfg.patch_size);
    let mut rng = rng_for(seed);
    let mut image = gen_base_texture(&cfg.texture, h, w, cfg.channels, &mut rng);
    let mut taken: Vec<BBox<f64>> = Vec::new();
    let mut boxes = Vec::new();

    let nominal = rng.gen_range(cfg.nominal_holes[0]..=cfg.nominal_holes[1]);
    let defect_free = rng.gen_bool(cfg.defect_free_prob);
    let count = if defect_free { 0 } else { rng.gen_range(cfg.defects_per_image[0]..=cfg.defects_per_image[1]) };
    let mut kinds = Vec::with_capacity(nominal + count);
    kinds.extend(std::iter::repeat_n(None, nominal));
    for _ in 0..count {
        kinds.push(Some(rng.gen_bool(cfg.scratch_fraction)));
    }

    for kind in kinds {
        let placed = place(&taken, PLACEMENT_TRIES, || match kind {
            Some(true) => {
                let spec = ScratchSpec::sample(cfg, h, w, &mut rng);
                let path = ScratchPath::trace(&spec, h, w, &mut rng);
                let fp = path.footprint(h, w)?;
                Some((Shape::Scratch(path, spec.delta), fp))
            }
            irregular => {
                let hole = HoleShape::sample(cfg, h, w, irregular.is_some(), &mut rng);
                let fp = hole.footprint(h, w)?;
                Some((Shape::Hole(hole), fp))
            }
        });
        let Some((shape, fp)) = placed else { continue };
        taken.push(fp.bbox);
        let label = match shape {
            Shape::Scratch(path, delta) => inject_scratch(&mut image, &path, delta),
            Shape::Hole(hole) => inject_hole(&mut image, &hole, cfg.hole_level, cfg.hole_irregular_threshold),
        };
        boxes.extend(label);
    }
    Ok(GeneratedImage { image, boxes })
}

/// Writes `count` PNGs plus `manifest.json` into `dir`, one derived seed per image.
pub fn gen_dataset(cfg: &SynthConfig, count: usize, dir: &Path) -> Result<Manifest, SynthError> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| SynthError::Write { file: dir.display().to_string(), message: e.to_string() })?;
    let mut manifest = Manifest::default();
    for i in 0..count {
        let generated: GeneratedImage<f64> = gen_image(cfg, derive_seed(cfg.seed, i as u64))?;
        let file = format!("img_{i:05}.png");
        generated.image.save_png(&dir.join(&file))?;
        manifest.images.push(ImageEntry {
            file,
            width: cfg.patch_size,
            height: cfg.patch_size,
            boxes: generated.boxes.iter().map(|b| BoxEntry::from_bbox(&b.bbox, b.class.id())).collect(),
            provenance: None,
        });
    }
    let path = dir.join("manifest.json");
    manifest
        .save(&path)
        .map_err(|e| SynthError::Write { file: path.display().to_string(), message: e.to_string() })?;
    Ok(manifest)
}
