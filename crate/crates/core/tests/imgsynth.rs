use aoi_core::bbox::BBox;
use aoi_core::imgsynth::{
    derive_seed, gen_base_texture, gen_dataset, gen_image, inject_hole, inject_scratch, rng_for, DefectClass, HoleShape,
    ImageBuffer, ScratchPath, ScratchSpec, SynthConfig, TextureConfig,
};
use aoi_core::manifest::Manifest;
use proptest::prelude::*;

fn pixel_std(img: &ImageBuffer<f64>) -> f64 {
    let p = img.pixels();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64).sqrt()
}

#[test]
fn zero_noise_texture_is_mid_gray() {
    let cfg = TextureConfig { row_noise: 0.0, streak_noise: 0.0, grain: 0.0, shading: 0.0, ..Default::default() };
    let img: ImageBuffer<f64> = gen_base_texture(&cfg, 64, 64, 1, &mut rng_for(3));
    assert!(img.pixels().iter().all(|&p| p == 0.5));
}

#[test]
fn texture_std_within_configured_bounds() {
    let cfg = TextureConfig::default();
    for seed in 0..100 {
        let img: ImageBuffer<f64> = gen_base_texture(&cfg, 128, 128, 1, &mut rng_for(seed));
        let s = pixel_std(&img);
        assert!(s >= cfg.std_bounds[0] && s <= cfg.std_bounds[1], "seed {seed}: std {s}");
    }
}

#[test]
fn texture_is_brushed_horizontally() {
    // neighbouring pixels along a row are more alike than along a column
    let img: ImageBuffer<f64> = gen_base_texture(&TextureConfig::default(), 128, 128, 1, &mut rng_for(1));
    let (mut dx, mut dy) = (0.0, 0.0);
    for y in 0..127 {
        for x in 0..127 {
            dx += (img.get(y, x + 1, 0) - img.get(y, x, 0)).powi(2);
            dy += (img.get(y + 1, x, 0) - img.get(y, x, 0)).powi(2);
        }
    }
    assert!(dx < dy, "row diff {dx} vs column diff {dy}");
}

#[test]
fn zero_delta_scratch_leaves_image_but_emits_box() {
    let cfg = SynthConfig::default().scaled_to(128);
    let mut rng = rng_for(11);
    let mut img: ImageBuffer<f64> = gen_base_texture(&cfg.texture, 128, 128, 1, &mut rng);
    let before = img.clone();
    let spec = ScratchSpec { delta: 0.0, ..ScratchSpec::sample(&cfg, 128, 128, &mut rng) };
    let path = ScratchPath::trace(&spec, 128, 128, &mut rng);
    let gt = inject_scratch(&mut img, &path, spec.delta).expect("box emitted");
    assert_eq!(img, before);
    assert_eq!(gt.class, DefectClass::Scratch);
    assert!(gt.bbox.w > 0.0 && gt.bbox.h > 0.0);
}

#[test]
fn horizontal_scratch_box_is_thin() {
    for seed in 0..50 {
        let mut rng = rng_for(seed);
        let spec = ScratchSpec {
            start: (40.0, 64.0),
            heading: 0.0,
            length: 40.0,
            width: 2.0,
            delta: 0.3,
            wander: 0.06,
            step: 2.0,
        };
        let path = ScratchPath::trace(&spec, 128, 128, &mut rng);
        let walk = path.points.iter().map(|p| p.1).fold(f64::MIN, f64::max) - path.points.iter().map(|p| p.1).fold(f64::MAX, f64::min);
        let mut img = ImageBuffer::filled(128, 128, 1, 0.5);
        let gt = inject_scratch(&mut img, &path, spec.delta).unwrap();
        // pixel quantisation of the cover can add at most one row on each side
        assert!(gt.bbox.h <= 2.0 + walk + 2.0, "seed {seed}: h {} walk {walk}", gt.bbox.h);
        assert!(gt.bbox.w >= 38.0 && gt.bbox.w <= 43.0, "seed {seed}: w {}", gt.bbox.w);
    }
}

#[test]
fn scratch_boxes_inside_image_over_many_seeds() {
    let cfg = SynthConfig::default().scaled_to(96);
    for seed in 0..1000 {
        let mut rng = rng_for(seed);
        let mut img = ImageBuffer::filled(96, 96, 1, 0.5);
        let spec = ScratchSpec::sample(&cfg, 96, 96, &mut rng);
        let path = ScratchPath::trace(&spec, 96, 96, &mut rng);
        if let Some(gt) = inject_scratch(&mut img, &path, spec.delta) {
            assert!(gt.bbox.is_within(96.0, 96.0), "seed {seed}: {:?}", gt.bbox);
            assert!(gt.bbox.w > 0.0 && gt.bbox.h > 0.0);
        }
    }
}

#[test]
fn scratch_changes_pixels_only_near_path() {
    let cfg = SynthConfig::default().scaled_to(128);
    for seed in 0..100 {
        let mut rng = rng_for(seed);
        let mut img: ImageBuffer<f64> = gen_base_texture(&cfg.texture, 128, 128, 1, &mut rng);
        let before = img.clone();
        let spec = ScratchSpec::sample(&cfg, 128, 128, &mut rng);
        let path = ScratchPath::trace(&spec, 128, 128, &mut rng);
        let Some(gt) = inject_scratch(&mut img, &path, spec.delta) else { continue };
        let d = spec.width;
        let grown = BBox::new(gt.bbox.x - d, gt.bbox.y - d, gt.bbox.w + 2.0 * d, gt.bbox.h + 2.0 * d);
        let mut changed_inside = false;
        for y in 0..128 {
            for x in 0..128 {
                let changed = img.get(y, x, 0) != before.get(y, x, 0);
                let inside = BBox::new(x as f64, y as f64, 1.0, 1.0).intersection(&grown) > 0.0;
                assert!(!changed || inside, "seed {seed}: pixel ({y},{x}) changed outside");
                changed_inside |= changed && BBox::new(x as f64, y as f64, 1.0, 1.0).intersection(&gt.bbox) > 0.0;
            }
        }
        assert!(changed_inside, "seed {seed}: nothing changed in the box");
    }
}

#[test]
fn nominal_hole_is_unlabeled_and_irregular_is_class_1() {
    let cfg = SynthConfig::default().scaled_to(128);
    let mut img = ImageBuffer::filled(128, 128, 1, 0.5);
    let hole = HoleShape { center: (64.0, 64.0), radius: 10.0, amplitude: 0.0, harmonic: 4, phase: 0.3 };
    assert!(inject_hole(&mut img, &hole, cfg.hole_level, cfg.hole_irregular_threshold).is_none());
    assert!(img.get(64, 64, 0) < 0.2, "hole is still drawn");
    let above = HoleShape { amplitude: cfg.hole_irregular_threshold + 0.01, ..hole.clone() };
    let gt = inject_hole(&mut img, &above, cfg.hole_level, cfg.hole_irregular_threshold).unwrap();
    assert_eq!(gt.class, DefectClass::IrregularHole);
    let at = HoleShape { amplitude: cfg.hole_irregular_threshold, ..hole };
    assert!(inject_hole(&mut img, &at, cfg.hole_level, cfg.hole_irregular_threshold).is_none());
}

proptest! {
    #[test]
    fn hole_box_sides_follow_radius_and_amplitude(
        radius in 4.0f64..30.0,
        amplitude in 0.09f64..0.4,
        harmonic in 3u32..=6,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let hole = HoleShape { center: (80.0, 80.0), radius, amplitude, harmonic, phase };
        let mut img = ImageBuffer::filled(160, 160, 1, 0.5);
        let gt = inject_hole(&mut img, &hole, 0.08, 0.08).unwrap();
        let lo = 2.0 * radius * (1.0 - amplitude) - 1.0;
        let hi = 2.0 * radius * (1.0 + amplitude) + 1.0;
        for side in [gt.bbox.w, gt.bbox.h] {
            prop_assert!(side >= lo && side <= hi, "side {} not in [{}, {}]", side, lo, hi);
        }
    }
}

#[test]
fn generated_images_are_deterministic_and_valid() {
    let cfg = SynthConfig::default().scaled_to(128);
    for i in 0..30 {
        let seed = derive_seed(5, i);
        let a = gen_image::<f64>(&cfg, seed).unwrap();
        let b = gen_image::<f64>(&cfg, seed).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.boxes, b.boxes);
        for gt in &a.boxes {
            assert!(gt.bbox.is_within(128.0, 128.0) && gt.bbox.w > 0.0 && gt.bbox.h > 0.0);
        }
    }
}

#[test]
fn dataset_is_reproducible() {
    let cfg = SynthConfig { seed: 7, ..SynthConfig::default().scaled_to(64) };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = gen_dataset(&cfg, 10, d1.path()).unwrap();
    let m2 = gen_dataset(&cfg, 10, d2.path()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(std::fs::read(d1.path().join("manifest.json")).unwrap(), std::fs::read(d2.path().join("manifest.json")).unwrap());
    for e in &m1.images {
        assert_eq!(std::fs::read(d1.path().join(&e.file)).unwrap(), std::fs::read(d2.path().join(&e.file)).unwrap());
    }
    assert_eq!(Manifest::load(&d1.path().join("manifest.json")).unwrap(), m1);
}

#[test]
fn defect_free_dataset_has_no_boxes() {
    let cfg = SynthConfig { defect_free_prob: 1.0, ..SynthConfig::default().scaled_to(64) };
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&cfg, 8, dir.path()).unwrap();
    assert_eq!(m.images.len(), 8);
    assert!(m.images.iter().all(|e| e.boxes.is_empty()));
}

#[test]
fn class_mix_matches_configured_split() {
    let cfg = SynthConfig::default().scaled_to(128);
    let mut counts = [0usize; 2];
    for i in 0..200 {
        for gt in gen_image::<f64>(&cfg, derive_seed(cfg.seed, i)).unwrap().boxes {
            counts[gt.class.id()] += 1;
        }
    }
    let scratch = counts[0] as f64 / (counts[0] + counts[1]) as f64;
    assert!((scratch - 0.371).abs() <= 0.1 * 0.371, "scratch share {scratch} from {counts:?}");
}

#[test]
fn png_round_trip_quantises_to_bytes() {
    let img = gen_image::<f64>(&SynthConfig::default().scaled_to(64), 1).unwrap().image;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    img.save_png(&path).unwrap();
    let back: ImageBuffer<f64> = ImageBuffer::load_png(&path, 1).unwrap();
    for (a, b) in img.pixels().iter().zip(back.pixels()) {
        assert_eq!((a * 255.0).round() / 255.0, *b);
    }
}

#[test]
fn unwritable_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = gen_dataset(&SynthConfig::default().scaled_to(64), 1, &blocker.join("sub")).unwrap_err();
    assert!(err.to_string().contains("sub"), "{err}");
}
