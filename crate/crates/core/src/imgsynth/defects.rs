use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bbox::BBox;
use crate::scalar::Scalar;

use super::{DefectClass, GroundTruthBox, ImageBuffer, SynthConfig};

/// Covered pixel coordinates `(y, x)` and their tight box.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox<f64>,
}

fn footprint(pixels: Vec<(usize, usize)>) -> Option<Footprint> {
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
    for &(y, x) in &pixels {
        y0 = y0.min(y);
        x0 = x0.min(x);
        y1 = y1.max(y);
        x1 = x1.max(x);
    }
    if pixels.is_empty() {
        return None;
    }
    let bbox = BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    Some(Footprint { pixels, bbox })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScratchSpec {
    pub start: (f64, f64),
    /// Radians, measured from the +x axis.
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    /// Signed brightness change applied to covered pixels.
    pub delta: f64,
    pub wander: f64,
    pub step: f64,
}

impl ScratchSpec {
    pub fn sample(cfg: &SynthConfig, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let margin = 2.0;
        let start = (rng.gen_range(margin..width as f64 - margin), rng.gen_range(margin..height as f64 - margin));
        let magnitude = uniform(rng, cfg.scratch_contrast);
        let delta = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        Self {
            start,
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
            length: uniform(rng, cfg.scratch_length),
            width: uniform(rng, cfg.scratch_width),
            delta,
            wander: cfg.scratch_wander,
            step: 2.0,
        }
    }
}

/// Polyline of a random walk, stopped at the image border.
#[derive(Clone, Debug, PartialEq)]
pub struct ScratchPath {
    pub points: Vec<(f64, f64)>,
    pub width: f64,
}

impl ScratchPath {
    pub fn trace(spec: &ScratchSpec, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut points = vec![spec.start];
        let (mut x, mut y) = spec.start;
        let mut heading = spec.heading;
        let mut travelled = 0.0;
        while travelled < spec.length {
            let step = spec.step.min(spec.length - travelled);
            let nx = x + step * heading.cos();
            let ny = y + step * heading.sin();
            if nx < 0.5 || ny < 0.5 || nx > width as f64 - 0.5 || ny > height as f64 - 0.5 {
                break;
            }
            points.push((nx, ny));
            x = nx;
            y = ny;
            travelled += step;
            let turn: f64 = StandardNormal.sample(rng);
            heading += spec.wander * turn;
        }
        Self { points, width: spec.width }
    }

    /// Pixels whose centre lies strictly within `width / 2` of the path.
    pub fn footprint(&self, height: usize, width: usize) -> Option<Footprint> {
        let r = self.width / 2.0;
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &self.points {
            lo_x = lo_x.min(x);
            lo_y = lo_y.min(y);
            hi_x = hi_x.max(x);
            hi_y = hi_y.max(y);
        }
        let col0 = (lo_x - r - 1.0).floor().max(0.0) as usize;
        let row0 = (lo_y - r - 1.0).floor().max(0.0) as usize;
        let col1 = ((hi_x + r + 1.0).ceil() as usize).min(width - 1);
        let row1 = ((hi_y + r + 1.0).ceil() as usize).min(height - 1);
        let mut pixels = Vec::new();
        for py in row0..=row1 {
            for px in col0..=col1 {
                let c = (px as f64 + 0.5, py as f64 + 0.5);
                if self.distance(c) < r {
                    pixels.push((py, px));
                }
            }
        }
        footprint(pixels)
    }

    fn distance(&self, p: (f64, f64)) -> f64 {
        if self.points.len() == 1 {
            return dist(p, self.points[0]);
        }
        self.points.windows(2).map(|s| segment_distance(p, s[0], s[1])).fold(f64::INFINITY, f64::min)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Adds `delta` to every covered pixel and returns the scratch label. The label
/// is produced even when `delta` is zero.
pub fn inject_scratch<T: Scalar>(img: &mut ImageBuffer<T>, path: &ScratchPath, delta: f64) -> Option<GroundTruthBox> {
    let fp = path.footprint(img.height(), img.width())?;
    let d = T::lit(delta);
    for &(y, x) in &fp.pixels {
        for c in 0..img.channels() {
            let v = img.get(y, x, c) + d;
            img.set(y, x, c, v);
        }
    }
    Some(GroundTruthBox { bbox: fp.bbox, class: DefectClass::Scratch })
}

/// Hole outline `r(t) = radius * (1 + amplitude * cos(harmonic * t + phase))`.
#[derive(Clone, Debug, PartialEq)]
pub struct HoleShape {
    pub center: (f64, f64),
    pub radius: f64,
    pub amplitude: f64,
    pub harmonic: u32,
    pub phase: f64,
}

impl HoleShape {
    /// `irregular` draws a harmonic amplitude from the configured range; otherwise the hole is round.
    pub fn sample(cfg: &SynthConfig, height: usize, width: usize, irregular: bool, rng: &mut impl Rng) -> Self {
        let j = cfg.hole_radius_jitter;
        let radius = cfg.hole_radius_mean * (1.0 + if j > 0.0 { rng.gen_range(-j..j) } else { 0.0 });
        let amplitude = if irregular { uniform(rng, cfg.hole_irregular_amplitude) } else { 0.0 };
        let reach = radius * (1.0 + amplitude) + 1.0;
        let lo_x = reach.min(width as f64 / 2.0);
        let lo_y = reach.min(height as f64 / 2.0);
        let center = (sample_between(rng, lo_x, width as f64 - lo_x), sample_between(rng, lo_y, height as f64 - lo_y));
        Self { center, radius, amplitude, harmonic: rng.gen_range(3..=6), phase: rng.gen_range(0.0..std::f64::consts::TAU) }
    }

    pub fn radius_at(&self, theta: f64) -> f64 {
        self.radius * (1.0 + self.amplitude * (self.harmonic as f64 * theta + self.phase).cos())
    }

    pub fn footprint(&self, height: usize, width: usize) -> Option<Footprint> {
        let reach = self.radius * (1.0 + self.amplitude.abs()) + 1.0;
        let (cx, cy) = self.center;
        let col0 = (cx - reach).floor().max(0.0) as usize;
        let row0 = (cy - reach).floor().max(0.0) as usize;
        let col1 = ((cx + reach).ceil().max(0.0) as usize).min(width - 1);
        let row1 = ((cy + reach).ceil().max(0.0) as usize).min(height - 1);
        let mut pixels = Vec::new();
        for py in row0..=row1 {
            for px in col0..=col1 {
                let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                if (dx * dx + dy * dy).sqrt() < self.radius_at(dy.atan2(dx)) {
                    pixels.push((py, px));
                }
            }
        }
        footprint(pixels)
    }
}

/// Darkens the hole to `level` (keeping a trace of the underlying texture). Returns
/// an irregular-hole label only when the amplitude exceeds `threshold`.
pub fn inject_hole<T: Scalar>(img: &mut ImageBuffer<T>, hole: &HoleShape, level: f64, threshold: f64) -> Option<GroundTruthBox> {
    let fp = hole.footprint(img.height(), img.width())?;
    for &(y, x) in &fp.pixels {
        for c in 0..img.channels() {
            let v = img.get(y, x, c).to_f64_lossy();
            img.set(y, x, c, T::lit(level + 0.1 * (v - 0.5)));
        }
    }
    (hole.amplitude > threshold).then_some(GroundTruthBox { bbox: fp.bbox, class: DefectClass::IrregularHole })
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    sample_between(rng, lo, hi)
}

fn sample_between(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}
