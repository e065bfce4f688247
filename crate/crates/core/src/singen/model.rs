use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GanConfig, GanError, Result, StagePyramid};
use crate::imgsynth::ImageBuffer;
use crate::ndgrad::{Graph, ParamSet, Tensor, Var};
use crate::scalar::Scalar;

/// Keeps the gradient-norm square root differentiable when the critic is flat.
const GP_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GanStage<T> {
    pub index: usize,
    pub dims: (usize, usize),
    pub generator: ParamSet<T>,
    pub critic: ParamSet<T>,
    /// Amplitude of the noise added to this stage's input when sampling.
    pub noise_amp: f64,
    pub frozen: bool,
}

/// Trained (or partially trained) generator stack.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel<T> {
    pub config: GanConfig,
    pub channels: usize,
    pub stages: Vec<GanStage<T>>,
    /// Fixed stage-0 input used for reconstruction.
    pub z_rec: Tensor<T>,
}

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

fn he_std(cfg: &GanConfig, fan_in: usize) -> f64 {
    (2.0 / ((1.0 + cfg.leaky_slope.powi(2)) * fan_in as f64)).sqrt()
}

/// Generator convs: `channels -> width -> ... -> width -> channels`, 3x3, zero padded.
fn init_generator<T: Scalar>(cfg: &GanConfig, channels: usize, stage: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let blocks = cfg.blocks_at(stage);
    let mut p = ParamSet::new();
    for b in 0..blocks {
        let cin = if b == 0 { channels } else { cfg.width };
        let last = b + 1 == blocks;
        let cout = if last { channels } else { cfg.width };
        // the last conv starts small so a fresh stage is close to passing its input through
        let std = if last { 0.1 * he_std(cfg, cin * 9) } else { he_std(cfg, cin * 9) };
        p.push(format!("g{stage}.{b}.weight"), normal(&[cout, cin, 3, 3], std, rng));
        p.push(format!("g{stage}.{b}.bias"), Tensor::zeros(&[cout]));
    }
    p
}

/// Critic convs: `channels -> width -> ... -> width -> 1`; the score is the map mean.
fn init_critic<T: Scalar>(cfg: &GanConfig, channels: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let mut p = ParamSet::new();
    for l in 0..cfg.critic_layers {
        let cin = if l == 0 { channels } else { cfg.width };
        let cout = if l + 1 == cfg.critic_layers { 1 } else { cfg.width };
        p.push(format!("d.{l}.weight"), normal(&[cout, cin, 3, 3], he_std(cfg, cin * 9), rng));
        p.push(format!("d.{l}.bias"), Tensor::zeros(&[cout]));
    }
    p
}

fn conv_stack<T: Scalar>(g: &mut Graph<T>, vars: &[Var], x: Var, slope: T) -> Result<Var> {
    let n = vars.len() / 2;
    let mut h = x;
    for l in 0..n {
        h = g.conv2d(h, vars[2 * l], Some(vars[2 * l + 1]), 1, 1)?;
        if l + 1 < n {
            h = g.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

/// Runs stages `0..=upto`. Stage 0 maps `noise[0]` to `tanh(G_0(z))`; stage `i`
/// computes `tanh(u + G_i(u + noise[i]))` with `u` the previous output resized.
/// `noise` entries are already scaled by their amplitude.
pub fn generator_forward<T: Scalar>(
    g: &mut Graph<T>,
    model: &GanModel<T>,
    gen_vars: &[Vec<Var>],
    noise: &[Var],
    upto: usize,
) -> Result<Var> {
    let available = model.stages.len().min(gen_vars.len()).min(noise.len());
    if upto >= available {
        return Err(GanError::MissingStage { requested: upto, available });
    }
    let slope = T::lit(model.config.leaky_slope);
    let mut out = {
        let h = conv_stack(g, &gen_vars[0], noise[0], slope)?;
        g.tanh(h)
    };
    for i in 1..=upto {
        let (h, w) = model.stages[i].dims;
        let u = g.resize_bilinear(out, h, w)?;
        let x = g.add(u, noise[i])?;
        let r = conv_stack(g, &gen_vars[i], x, slope)?;
        let s = g.add(u, r)?;
        out = g.tanh(s);
    }
    Ok(out)
}

/// Mean critic score of `x`.
pub fn critic_forward<T: Scalar>(g: &mut Graph<T>, cfg: &GanConfig, vars: &[Var], x: Var) -> Result<Var> {
    let map = conv_stack(g, vars, x, T::lit(cfg.leaky_slope))?;
    Ok(g.mean(map))
}

/// `mean D(fake) - mean D(real) + gp_weight * (|grad D(x_hat)| - 1)^2` with
/// `x_hat = eps * real + (1 - eps) * fake`. Returns the loss and the penalty.
pub fn critic_loss<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &GanConfig,
    vars: &[Var],
    real: Var,
    fake: Var,
    eps: f64,
) -> Result<(Var, Var)> {
    if g.shape(real) != g.shape(fake) {
        return Err(GanError::Shape(format!("real {:?} and fake {:?} differ", g.shape(real), g.shape(fake))));
    }
    let d_real = critic_forward(g, cfg, vars, real)?;
    let d_fake = critic_forward(g, cfg, vars, fake)?;
    let mixed: Vec<T> = g
        .data(real)
        .iter()
        .zip(g.data(fake))
        .map(|(&r, &f)| T::lit(eps) * r + T::lit(1.0 - eps) * f)
        .collect();
    let x_hat = g.constant(Tensor::new(g.shape(real).to_vec(), mixed)?);
    let d_hat = critic_forward(g, cfg, vars, x_hat)?;
    let grad = g.grad_graph(d_hat, &[x_hat])?[0];
    let sq = g.mul(grad, grad)?;
    let ss = g.sum(sq);
    let ss = g.add_scalar(ss, T::lit(GP_NORM_EPS));
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -T::one());
    let gp = g.mul(dev, dev)?;
    let wass = g.sub(d_fake, d_real)?;
    let pen = g.scale(gp, T::lit(cfg.gp_weight));
    Ok((g.add(wass, pen)?, gp))
}

/// `(d_loss, g_loss)` of one stage's critic on fixed images, with `g_loss = -mean D(fake)`.
pub fn adversarial_losses<T: Scalar>(
    model: &GanModel<T>,
    stage: usize,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: f64,
) -> Result<(f64, f64)> {
    let st = model
        .stages
        .get(stage)
        .ok_or(GanError::MissingStage { requested: stage, available: model.stages.len() })?;
    let mut g = Graph::new();
    let vars = st.critic.bind_frozen(&mut g);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let (d_loss, _) = critic_loss(&mut g, &model.config, &vars, r, f, eps)?;
    let d_fake = critic_forward(&mut g, &model.config, &vars, f)?;
    let g_loss = g.neg(d_fake);
    Ok((g.value(d_loss).item().to_f64_lossy(), g.value(g_loss).item().to_f64_lossy()))
}

/// `||G(z_rec) - s_i||^2` summed over pixels, in the `[-1, 1]` domain.
pub fn reconstruction_loss<T: Scalar>(model: &GanModel<T>, stage: usize, pyramid: &StagePyramid<T>) -> Result<f64> {
    let target = pyramid
        .stages
        .get(stage)
        .ok_or(GanError::MissingStage { requested: stage, available: pyramid.stages.len() })?;
    let rec = model.generate(stage, &model.reconstruction_noise(stage))?;
    let t = to_signed(target);
    if rec.shape() != t.shape() {
        return Err(GanError::Shape(format!("stage {stage} output {:?} vs target {:?}", rec.shape(), t.shape())));
    }
    Ok(rec.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).to_f64_lossy().powi(2)).sum())
}

/// Image in `[0, 1]` to a `[1, C, H, W]` tensor in `[-1, 1]`.
pub(crate) fn to_signed<T: Scalar>(img: &ImageBuffer<T>) -> Tensor<T> {
    let two = T::lit(2.0);
    img.to_tensor(|v| two * v - T::one())
}

pub(crate) fn from_signed<T: Scalar>(t: &Tensor<T>) -> ImageBuffer<T> {
    let half = T::lit(0.5);
    ImageBuffer::from_tensor(t, |v| (v + T::one()) * half)
}

impl<T: Scalar> GanModel<T> {
    /// Empty stack; stages are added by [`push_stage`](Self::push_stage).
    pub fn new(config: GanConfig, channels: usize, base_dims: (usize, usize), rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(GanError::Config("channels must be positive".into()));
        }
        let z_rec = normal(&[1, channels, base_dims.0, base_dims.1], 1.0, rng);
        Ok(Self { config, channels, stages: Vec::new(), z_rec })
    }

    /// Adds the next stage with a fresh generator and a copy of the previous critic.
    pub fn push_stage(&mut self, dims: (usize, usize), noise_amp: f64, rng: &mut impl Rng) -> &mut GanStage<T> {
        let index = self.stages.len();
        let generator = init_generator(&self.config, self.channels, index, rng);
        let critic = match self.stages.last() {
            Some(prev) => prev.critic.clone(),
            None => init_critic(&self.config, self.channels, rng),
        };
        self.stages.push(GanStage { index, dims, generator, critic, noise_amp, frozen: false });
        self.stages.last_mut().unwrap()
    }

    pub fn num_parameters(&self) -> usize {
        self.stages.iter().map(|s| s.generator.num_scalars() + s.critic.num_scalars()).sum()
    }

    /// `z_rec` at stage 0 and zeros above.
    pub fn reconstruction_noise(&self, upto: usize) -> Vec<Tensor<T>> {
        (0..=upto.min(self.stages.len().saturating_sub(1)))
            .map(|i| if i == 0 { self.z_rec.clone() } else { self.zeros_at(i) })
            .collect()
    }

    /// Fresh Gaussian noise for stages `0..=upto`, scaled by each stage's amplitude.
    pub fn random_noise(&self, upto: usize, rng: &mut impl Rng) -> Vec<Tensor<T>> {
        (0..=upto.min(self.stages.len().saturating_sub(1)))
            .map(|i| {
                let (h, w) = self.stages[i].dims;
                normal(&[1, self.channels, h, w], self.stages[i].noise_amp, rng)
            })
            .collect()
    }

    fn zeros_at(&self, i: usize) -> Tensor<T> {
        let (h, w) = self.stages[i].dims;
        Tensor::zeros(&[1, self.channels, h, w])
    }

    /// Output of stage `upto` for the given noise, without gradient tracking.
    pub fn generate(&self, upto: usize, noise: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars: Vec<Vec<Var>> = self.stages.iter().take(upto + 1).map(|s| s.generator.bind_frozen(&mut g)).collect();
        let z: Vec<Var> = noise.iter().map(|t| g.constant(t.clone())).collect();
        let out = generator_forward(&mut g, self, &vars, &z, upto)?;
        Ok(g.value(out).clone())
    }

    /// Reconstruction of the training image at stage `upto`, mapped to `[0, 1]`.
    pub fn reconstruct(&self, upto: usize) -> Result<ImageBuffer<T>> {
        Ok(from_signed(&self.generate(upto, &self.reconstruction_noise(upto))?))
    }

    /// `count` fresh samples at full resolution, mapped to `[0, 1]`.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<ImageBuffer<T>>> {
        if self.stages.is_empty() {
            return Err(GanError::MissingStage { requested: 0, available: 0 });
        }
        let top = self.stages.len() - 1;
        (0..count)
            .map(|_| {
                let noise = self.random_noise(top, rng);
                Ok(from_signed(&self.generate(top, &noise)?))
            })
            .collect()
    }
}
