use rand::Rng;

use aoi_core::bbox::BBox;
use aoi_core::imgsynth::{
    derive_seed, gen_base_texture, inject_hole, inject_scratch, rng_for, GroundTruthBox, HoleShape, ImageBuffer, ScratchPath,
    ScratchSpec,
};

use crate::{Result, ScadaConfig, ScadaError};

const PLACEMENT_TRIES: usize = 40;

/// The full sheet raster with its labeled defects, in sheet pixels.
#[derive(Clone, Debug)]
pub struct VirtualSheet {
    pub image: ImageBuffer<f32>,
    pub boxes: Vec<GroundTruthBox>,
}

impl VirtualSheet {
    /// Sheet number `index` of a run: brushed texture, distractor round holes and labeled defects.
    pub fn generate(cfg: &ScadaConfig, index: u64) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = cfg.sheet_pixels();
        let s = &cfg.synth;
        let mut rng = rng_for(derive_seed(cfg.seed, index));
        let mut image = gen_base_texture(&s.texture, h, w, s.channels, &mut rng);
        let mut taken: Vec<BBox<f64>> = Vec::new();
        let mut boxes = Vec::new();

        let nominal = rng.gen_range(cfg.nominal_holes[0]..=cfg.nominal_holes[1]);
        let labeled = rng.gen_range(cfg.defects[0]..=cfg.defects[1]);
        let kinds: Vec<Option<bool>> =
            std::iter::repeat_n(None, nominal).chain((0..labeled).map(|_| Some(rng.gen_bool(s.scratch_fraction)))).collect();
        for kind in kinds {
            for _ in 0..PLACEMENT_TRIES {
                let (label, fp) = match kind {
                    Some(true) => {
                        let spec = ScratchSpec::sample(s, h, w, &mut rng);
                        let path = ScratchPath::trace(&spec, h, w, &mut rng);
                        let Some(fp) = path.footprint(h, w) else { continue };
                        if collides(&taken, &fp.bbox) {
                            continue;
                        }
                        (inject_scratch(&mut image, &path, spec.delta), fp)
                    }
                    irregular => {
                        let hole = HoleShape::sample(s, h, w, irregular.is_some(), &mut rng);
                        let Some(fp) = hole.footprint(h, w) else { continue };
                        if collides(&taken, &fp.bbox) {
                            continue;
                        }
                        (inject_hole(&mut image, &hole, s.hole_level, s.hole_irregular_threshold), fp)
                    }
                };
                taken.push(fp.bbox);
                boxes.extend(label);
                break;
            }
        }
        let (h, w, c) = (image.height(), image.width(), image.channels());
        let image = ImageBuffer::from_clamped(h, w, c, image.pixels().to_vec());
        Ok(Self { image, boxes })
    }

    /// A sheet from an existing raster, e.g. a constructed test fixture.
    pub fn from_image(cfg: &ScadaConfig, image: ImageBuffer<f32>, boxes: Vec<GroundTruthBox>) -> Result<Self> {
        if (image.height(), image.width()) != cfg.sheet_pixels() {
            return Err(ScadaError::Config(format!(
                "sheet image is {}x{} but the config needs {:?}",
                image.height(),
                image.width(),
                cfg.sheet_pixels()
            )));
        }
        Ok(Self { image, boxes })
    }
}

fn collides(taken: &[BBox<f64>], b: &BBox<f64>) -> bool {
    let grown = BBox::new(b.x - 4.0, b.y - 4.0, b.w + 8.0, b.h + 8.0);
    taken.iter().any(|t| t.intersection(&grown) > 0.0)
}
