use super::{GanError, Result};
use crate::imgsynth::ImageBuffer;
use crate::scalar::Scalar;

/// The training image at every stage resolution, coarsest first.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePyramid<T> {
    pub stages: Vec<ImageBuffer<T>>,
    /// Geometric ratio between consecutive stage sizes (1 for a single stage).
    pub scale_factor: f64,
}

impl<T: Scalar> StagePyramid<T> {
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|s| (s.height(), s.width())).collect()
    }
}

/// Stage sizes `round(dim * r^(N-1-i))` with `r = (base / min(h, w))^(1/(N-1))`.
pub fn pyramid_dims(height: usize, width: usize, num_stages: usize, base: usize) -> Result<(Vec<(usize, usize)>, f64)> {
    if height.min(width) < base {
        return Err(GanError::TooSmall { height, width, base });
    }
    if num_stages == 0 {
        return Err(GanError::Config("num_stages must be at least 1".into()));
    }
    if num_stages == 1 {
        return Ok((vec![(height, width)], 1.0));
    }
    let n = num_stages - 1;
    let r = (base as f64 / height.min(width) as f64).powf(1.0 / n as f64);
    let dims: Vec<(usize, usize)> = (0..num_stages)
        .map(|i| {
            if i == n {
                return (height, width);
            }
            let f = r.powi((n - i) as i32);
            ((height as f64 * f).round() as usize, (width as f64 * f).round() as usize)
        })
        .collect();
    let grows = dims.windows(2).all(|p| p[1].0.min(p[1].1) > p[0].0.min(p[0].1) && p[1].0 >= p[0].0 && p[1].1 >= p[0].1);
    if !grows {
        return Err(GanError::Config(format!(
            "{num_stages} stages from {base} px to {height}x{width} do not give strictly increasing sizes: {dims:?}"
        )));
    }
    Ok((dims, r))
}

/// Bilinear downsamples of `image`, one per stage; the last stage is `image` itself.
pub fn build_pyramid<T: Scalar>(image: &ImageBuffer<T>, num_stages: usize, base: usize) -> Result<StagePyramid<T>> {
    let (dims, r) = pyramid_dims(image.height(), image.width(), num_stages, base)?;
    let stages = dims.iter().map(|&(h, w)| image.resize(h, w)).collect();
    Ok(StagePyramid { stages, scale_factor: r })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stage_is_original() {
        let img = ImageBuffer::filled(30, 40, 1, 0.3f64);
        let p = build_pyramid(&img, 1, 25).unwrap();
        assert_eq!(p.stages, vec![img]);
    }

    #[test]
    fn desk_schedule() {
        let (dims, r) = pyramid_dims(63, 63, 3, 25).unwrap();
        assert_eq!(dims, vec![(25, 25), (40, 40), (63, 63)]);
        assert!((r - (25.0f64 / 63.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn too_small_or_too_many_stages() {
        assert!(matches!(pyramid_dims(24, 100, 3, 25), Err(GanError::TooSmall { .. })));
        assert!(pyramid_dims(27, 27, 10, 25).is_err());
    }
}
