use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{critic_forward, critic_loss, generator_forward, to_signed};
use super::{build_pyramid, GanConfig, GanError, GanModel, Result, StagePyramid};
use crate::imgsynth::{rng_for, ImageBuffer};
use crate::ndgrad::{read_archive, write_archive, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepLog {
    pub step: usize,
    pub d_loss: f64,
    pub gp: f64,
    pub g_adv: f64,
    pub rec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub index: usize,
    pub dims: (usize, usize),
    pub noise_amp: f64,
    /// Reconstruction loss before the first update of this stage.
    pub initial_rec: f64,
    pub steps: Vec<GanStepLog>,
    /// Per-pixel RMS reconstruction error after training, in `[-1, 1]` units.
    pub final_rec_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLog {
    pub config: GanConfig,
    pub scale_factor: f64,
    pub stages: Vec<StageLog>,
}

fn rms(a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> f64 {
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2)).sum();
    (ss / a.numel() as f64).sqrt()
}

fn adam(cfg: &GanConfig) -> AdamConfig {
    AdamConfig { learning_rate: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, epsilon: 1e-8 }
}

fn finite(vals: &[f64]) -> bool {
    vals.iter().all(|v| v.is_finite())
}

/// Stage-by-stage trainer. [`train_gan`] runs it to completion; tests use it to
/// look at the model between stages.
pub struct GanTrainer<T> {
    pub model: GanModel<T>,
    pub pyramid: StagePyramid<T>,
    pub log: GanLog,
    targets: Vec<Tensor<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> GanTrainer<T> {
    pub fn new(image: &ImageBuffer<T>, cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        let pyramid = build_pyramid(image, cfg.num_stages, cfg.base_resolution)?;
        let targets: Vec<Tensor<T>> = pyramid.stages.iter().map(to_signed).collect();
        let mut rng = rng_for(cfg.seed);
        let base = (pyramid.stages[0].height(), pyramid.stages[0].width());
        let model = GanModel::new(cfg.clone(), image.channels(), base, &mut rng)?;
        let log = GanLog { config: cfg.clone(), scale_factor: pyramid.scale_factor, stages: Vec::new() };
        Ok(Self { model, pyramid, log, targets, rng })
    }

    /// Number of stages still to train.
    pub fn remaining(&self) -> usize {
        self.pyramid.stages.len() - self.log.stages.len()
    }

    /// Adds the next stage: fresh generator, critic copied from the previous
    /// stage, noise amplitude from the current reconstruction error.
    pub fn begin_stage(&mut self) -> Result<usize> {
        let i = self.model.stages.len();
        if i != self.log.stages.len() || i >= self.pyramid.stages.len() {
            return Err(GanError::Config("begin_stage called out of order".into()));
        }
        let cfg = &self.model.config;
        let (h, w) = (self.pyramid.stages[i].height(), self.pyramid.stages[i].width());
        let noise_amp = if i == 0 {
            cfg.base_noise
        } else {
            let prev = self.model.generate(i - 1, &self.model.reconstruction_noise(i - 1))?;
            let mut g = Graph::new();
            let p = g.constant(prev);
            let up = g.resize_bilinear(p, h, w)?;
            cfg.noise_scale * rms(g.value(up), &self.targets[i])
        };
        self.model.push_stage((h, w), noise_amp, &mut self.rng);
        Ok(i)
    }

    /// Trains the stage opened by [`begin_stage`](Self::begin_stage), then freezes it.
    ///
    /// Per step: the critic takes `critic_steps` Adam updates against the current
    /// fake, then the trainable generator stages take one update on
    /// `-mean D(fake) + alpha * L_rec`.
    pub fn train_stage(&mut self) -> Result<&StageLog> {
        let i = self.log.stages.len();
        if self.model.stages.len() != i + 1 {
            return Err(GanError::Config("train_stage called without begin_stage".into()));
        }
        let cfg = self.model.config.clone();
        let model = &mut self.model;
        let rng = &mut self.rng;
        let target = &self.targets[i];
        let lo = (i + 1).saturating_sub(cfg.concurrent_stages);
        for j in lo..=i {
            model.stages[j].generator.set_lr_scale(cfg.lr_scale.powi((i - j) as i32));
            model.stages[j].frozen = false;
        }
        let mut g_opts: Vec<AdamState<T>> = (lo..=i).map(|j| AdamState::new(&model.stages[j].generator, adam(&cfg))).collect();
        let mut d_opt = AdamState::new(&model.stages[i].critic, adam(&cfg));
        let initial_rec = super::reconstruction_loss(model, i, &self.pyramid)?;
        let mut steps = Vec::with_capacity(cfg.steps_per_stage);

        for step in 0..cfg.steps_per_stage {
            let mut g = Graph::new();
            let gen_vars: Vec<Vec<Var>> = (0..=i)
                .map(|j| {
                    let p = &model.stages[j].generator;
                    if j < lo {
                        p.bind_frozen(&mut g)
                    } else {
                        p.bind(&mut g)
                    }
                })
                .collect();
            let noise: Vec<Var> = model.random_noise(i, rng).into_iter().map(|t| g.constant(t)).collect();
            let fake = generator_forward(&mut g, model, &gen_vars, &noise, i)?;

            let (mut d_loss, mut gp) = (0.0, 0.0);
            for k in 0..cfg.critic_steps {
                let fake_val = if k == 0 {
                    g.value(fake).clone()
                } else {
                    let z = model.random_noise(i, rng);
                    model.generate(i, &z)?
                };
                let mut dg = Graph::new();
                let dv = model.stages[i].critic.bind(&mut dg);
                let r = dg.constant(target.clone());
                let f = dg.constant(fake_val);
                let eps: f64 = rng.gen();
                let (dl, pen) = critic_loss(&mut dg, &cfg, &dv, r, f, eps)?;
                d_loss = dg.value(dl).item().to_f64_lossy();
                gp = dg.value(pen).item().to_f64_lossy();
                if !finite(&[d_loss, gp]) {
                    return Err(GanError::NonFinite { stage: i, step });
                }
                dg.backward(dl)?;
                let critic = &mut model.stages[i].critic;
                critic.zero_grads();
                critic.collect_grads(&dg, &dv);
                d_opt.step(critic)?;
            }

            let dv = model.stages[i].critic.bind_frozen(&mut g);
            let score = critic_forward(&mut g, &cfg, &dv, fake)?;
            let g_adv = g.neg(score);
            let rec_noise: Vec<Var> = model.reconstruction_noise(i).into_iter().map(|t| g.constant(t)).collect();
            let rec_out = generator_forward(&mut g, model, &gen_vars, &rec_noise, i)?;
            let tv = g.constant(target.clone());
            let rec = g.mse_sum(rec_out, tv)?;
            let weighted = g.scale(rec, T::lit(cfg.alpha));
            let total = g.add(g_adv, weighted)?;
            let entry = GanStepLog {
                step,
                d_loss,
                gp,
                g_adv: g.value(g_adv).item().to_f64_lossy(),
                rec: g.value(rec).item().to_f64_lossy(),
            };
            if !finite(&[entry.g_adv, entry.rec, g.value(total).item().to_f64_lossy()]) {
                return Err(GanError::NonFinite { stage: i, step });
            }
            g.backward(total)?;
            for (opt, j) in g_opts.iter_mut().zip(lo..=i) {
                let p = &mut model.stages[j].generator;
                p.zero_grads();
                p.collect_grads(&g, &gen_vars[j]);
                opt.step(p)?;
            }
            steps.push(entry);
        }

        for s in &mut model.stages {
            s.frozen = true;
        }
        let rec = model.generate(i, &model.reconstruction_noise(i))?;
        let st = &model.stages[i];
        self.log.stages.push(StageLog {
            index: i,
            dims: st.dims,
            noise_amp: st.noise_amp,
            initial_rec,
            steps,
            final_rec_rms: rms(&rec, target),
        });
        Ok(self.log.stages.last().unwrap())
    }

    pub fn finish(self) -> (GanModel<T>, GanLog) {
        (self.model, self.log)
    }
}

/// Trains all stages coarse to fine on one image (values in `[0, 1]`).
pub fn train_gan<T: Scalar>(image: &ImageBuffer<T>, cfg: &GanConfig) -> Result<(GanModel<T>, GanLog)> {
    let mut t = GanTrainer::new(image, cfg)?;
    while t.remaining() > 0 {
        t.begin_stage()?;
        t.train_stage()?;
    }
    Ok(t.finish())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: GanConfig,
    channels: usize,
    dims: Vec<(usize, usize)>,
    noise_amps: Vec<f64>,
}

const WEIGHTS: &str = "singen.ndg";
const META: &str = "singen.json";

impl<T: Scalar> GanModel<T> {
    /// Writes `singen.ndg` (all stage tensors plus `z_rec`) and a `singen.json` sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let ck = |p: &Path, m: String| GanError::Checkpoint { path: p.display().to_string(), message: m };
        std::fs::create_dir_all(dir).map_err(|e| ck(dir, e.to_string()))?;
        let mut named: Vec<(String, &Tensor<T>)> = vec![("z_rec".into(), &self.z_rec)];
        for s in &self.stages {
            for (n, t) in s.generator.iter().chain(s.critic.iter()) {
                named.push((format!("s{}.{n}", s.index), t));
            }
        }
        let weights = dir.join(WEIGHTS);
        let f = File::create(&weights).map_err(|e| ck(&weights, e.to_string()))?;
        write_archive(BufWriter::new(f), &named)?;
        let side = Sidecar {
            config: self.config.clone(),
            channels: self.channels,
            dims: self.stages.iter().map(|s| s.dims).collect(),
            noise_amps: self.stages.iter().map(|s| s.noise_amp).collect(),
        };
        let meta = dir.join(META);
        let mut text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(&meta, text).map_err(|e| ck(&meta, e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = |p: &Path, m: String| GanError::Checkpoint { path: p.display().to_string(), message: m };
        let meta = dir.join(META);
        let text = std::fs::read_to_string(&meta).map_err(|e| ck(&meta, e.to_string()))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| ck(&meta, e.to_string()))?;
        if side.dims.is_empty() || side.dims.len() != side.noise_amps.len() {
            return Err(ck(&meta, "stage dims and noise amplitudes disagree".into()));
        }
        let weights = dir.join(WEIGHTS);
        let f = File::open(&weights).map_err(|e| ck(&weights, e.to_string()))?;
        let mut tensors: Vec<(String, Tensor<T>)> = read_archive(BufReader::new(f))?;

        // shapes come from a throwaway initialisation, values from the archive
        let mut rng = rng_for(0);
        let mut model = GanModel::new(side.config, side.channels, side.dims[0], &mut rng)?;
        for (&d, &a) in side.dims.iter().zip(&side.noise_amps) {
            model.push_stage(d, a, &mut rng).frozen = true;
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| ck(&weights, format!("missing tensor `{name}`")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape {
                return Err(ck(&weights, format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let shape = model.z_rec.shape().to_vec();
        model.z_rec = take("z_rec", &shape)?;
        for s in &mut model.stages {
            for p in [&mut s.generator, &mut s.critic] {
                for k in 0..p.len() {
                    let name = format!("s{}.{}", s.index, p.name(k));
                    let t = take(&name, p.get(k).shape())?;
                    p.get_mut(k).data_mut().copy_from_slice(t.data());
                }
            }
        }
        if let Some((n, _)) = tensors.first() {
            return Err(ck(&weights, format!("unexpected tensor `{n}`")));
        }
        Ok(model)
    }
}
