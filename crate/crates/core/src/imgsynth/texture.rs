use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

use super::{ImageBuffer, TextureConfig};

/// Moving average with window `2 * radius + 1`, rescaled back to unit variance
/// for white-noise input.
fn smooth(values: &[f64], radius: usize) -> Vec<f64> {
    if radius == 0 || values.is_empty() {
        return values.to_vec();
    }
    let n = values.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let window = (2 * radius + 1) as f64;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            mean * window.sqrt()
        })
        .collect()
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Horizontally brushed background of the given size: per-row band-limited
/// offsets, along-row streaks, pixel grain and a low-frequency shading field.
pub fn gen_base_texture<T: Scalar>(
    cfg: &TextureConfig,
    height: usize,
    width: usize,
    channels: usize,
    rng: &mut impl Rng,
) -> ImageBuffer<T> {
    let rows = smooth(&normals(rng, height), cfg.row_smooth);
    let fx: f64 = rng.gen_range(0.2..1.0);
    let fy: f64 = rng.gen_range(0.2..1.0);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut values = Vec::with_capacity(height * width * channels);
    for (y, row) in rows.iter().enumerate() {
        let streak = if cfg.streak_noise > 0.0 {
            smooth(&normals(rng, width), cfg.streak_length / 2)
        } else {
            vec![0.0; width]
        };
        for (x, s) in streak.iter().enumerate() {
            let grain = if cfg.grain > 0.0 {
                let n: f64 = StandardNormal.sample(rng);
                cfg.grain * n
            } else { 0.0 };
            let shade = cfg.shading
                * (std::f64::consts::TAU * (fx * x as f64 / width as f64 + fy * y as f64 / height as f64) + phase).sin();
            let v = cfg.base_level + cfg.row_noise * row + cfg.streak_noise * s + grain + shade;
            for _ in 0..channels {
                values.push(T::lit(v));
            }
        }
    }
    ImageBuffer::from_clamped(height, width, channels, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgsynth::rng_for;

    #[test]
    fn zero_amplitudes_give_mid_gray() {
        let cfg = TextureConfig { row_noise: 0.0, streak_noise: 0.0, grain: 0.0, shading: 0.0, ..Default::default() };
        let img: ImageBuffer<f64> = gen_base_texture(&cfg, 20, 30, 1, &mut rng_for(1));
        assert!(img.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn same_seed_same_texture() {
        let cfg = TextureConfig::default();
        let a: ImageBuffer<f64> = gen_base_texture(&cfg, 32, 48, 3, &mut rng_for(9));
        let b: ImageBuffer<f64> = gen_base_texture(&cfg, 32, 48, 3, &mut rng_for(9));
        assert_eq!(a, b);
    }

    #[test]
    fn smoothing_keeps_unit_scale() {
        let v = normals(&mut rng_for(3), 20000);
        let s = smooth(&v, 3);
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }
}
