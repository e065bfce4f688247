use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnchorSet, Result, YoliteError};
use crate::imgsynth::rng_for;
use crate::ndgrad::{Graph, ParamSet, Tensor, Var};
use crate::scalar::Scalar;

/// Network shape. Level `i` runs one 3x3 conv at stride `2^i`; levels after the
/// first are preceded by a 2x downsample. Heads sit on the levels named in `strides`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub input_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub strides: Vec<usize>,
    pub widths: Vec<usize>,
    pub anchors_per_scale: usize,
    pub leaky_slope: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_size: 256,
            channels: 1,
            num_classes: 2,
            strides: vec![8, 16, 32],
            widths: vec![8, 16, 32, 64, 64, 64],
            anchors_per_scale: 3,
            leaky_slope: 0.1,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(YoliteError::Config(m));
        if self.strides.is_empty() || self.strides.iter().any(|s| !s.is_power_of_two()) {
            return bad(format!("strides {:?} must be powers of two", self.strides));
        }
        if self.strides.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("strides {:?} must be strictly increasing", self.strides));
        }
        let max = *self.strides.last().unwrap();
        if self.input_size == 0 || !self.input_size.is_multiple_of(max) {
            return bad(format!("input size {} is not divisible by the largest stride {max}", self.input_size));
        }
        let levels = max.trailing_zeros() as usize + 1;
        if self.widths.len() != levels {
            return bad(format!("{} conv widths given but stride {max} needs {levels}", self.widths.len()));
        }
        if self.widths.contains(&0) || self.num_classes == 0 || self.anchors_per_scale == 0 {
            return bad("widths, class count and anchors per scale must be positive".into());
        }
        if !(self.channels == 1 || self.channels == 3) {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        Ok(())
    }

    /// Channels of each head output, `A * (5 + C)`.
    pub fn head_channels(&self) -> usize {
        self.anchors_per_scale * (5 + self.num_classes)
    }

    /// Feature-map side per head.
    pub fn grid_sizes(&self) -> Vec<usize> {
        self.strides.iter().map(|s| self.input_size / s).collect()
    }

    fn head_levels(&self) -> Vec<usize> {
        self.strides.iter().map(|s| s.trailing_zeros() as usize).collect()
    }
}

/// Parameters plus the metadata needed to run them.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    pub spec: ModelSpec,
    pub anchors: AnchorSet,
    pub class_names: Vec<String>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Detector<T> {
    /// He-initialised conv pyramid; heads start near zero with the objectness bias at `obj_bias`.
    pub fn build(spec: &ModelSpec, anchors: AnchorSet, class_names: Vec<String>, obj_bias: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        anchors.validate(spec.input_size)?;
        if anchors.strides != spec.strides || anchors.per_scale() != spec.anchors_per_scale {
            return Err(YoliteError::Config("anchor set does not match the model strides".into()));
        }
        let mut rng = rng_for(seed);
        let mut params = ParamSet::new();
        let mut cin = spec.channels;
        for (i, &w) in spec.widths.iter().enumerate() {
            let fan_in = (cin * 9) as f64;
            let std = (2.0 / ((1.0 + spec.leaky_slope.powi(2)) * fan_in)).sqrt();
            params.push(format!("backbone.{i}.weight"), normal(&[w, cin, 3, 3], std, &mut rng));
            params.push(format!("backbone.{i}.bias"), Tensor::zeros(&[w]));
            cin = w;
        }
        let hc = spec.head_channels();
        let per = 5 + spec.num_classes;
        for (s, level) in spec.strides.iter().zip(spec.head_levels()) {
            let w = spec.widths[level];
            params.push(format!("head.s{s}.weight"), normal(&[hc, w, 1, 1], 0.01, &mut rng));
            let bias = Tensor::from_fn(&[hc], |c| if c % per == 4 { T::lit(obj_bias) } else { T::zero() });
            params.push(format!("head.s{s}.bias"), bias);
        }
        Ok(Self { spec: spec.clone(), anchors, class_names, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Forward pass on `[N, C, S, S]` input; one `[N, A(5+C), S/s, S/s]` output per stride.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], input: Var) -> Result<Vec<Var>> {
        let spec = &self.spec;
        let slope = T::lit(spec.leaky_slope);
        let levels = spec.head_levels();
        let mut h = input;
        let mut side = spec.input_size;
        let mut feats = Vec::new();
        for i in 0..spec.widths.len() {
            if i > 0 {
                side /= 2;
                h = g.resize_bilinear(h, side, side)?;
            }
            let c = g.conv2d(h, vars[2 * i], Some(vars[2 * i + 1]), 1, 1)?;
            h = g.leaky_relu(c, slope);
            if levels.contains(&i) {
                feats.push(h);
            }
        }
        let base = 2 * spec.widths.len();
        feats
            .into_iter()
            .enumerate()
            .map(|(k, f)| Ok(g.conv2d(f, vars[base + 2 * k], Some(vars[base + 2 * k + 1]), 0, 1)?))
            .collect()
    }

    /// Forward without gradient tracking; returns the raw head tensors.
    pub fn predict(&self, input: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let x = g.constant(input);
        let outs = self.forward(&mut g, &vars, x)?;
        Ok(outs.iter().map(|&v| g.value(v).clone()).collect())
    }
}

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}
