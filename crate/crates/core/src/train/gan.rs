use rand::seq::SliceRandom;

use super::config::{TrainConfig, TrainMode, Widths};
use super::dataset::{GanBatch, TrainingSet, INTERP_WINDOW};
use super::log::TrainLog;
use super::{ensure_finite, model_seeds, ModelMeta, RunState};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, feature_loss, generator_gan_loss, gradient_penalty, sample_epsilon, FeatureNet, DEFAULT_FEATURE_SEED};
use crate::model_recurrent::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, Bound, Graph, Tensor, Var};

pub const GAN_COLUMNS: [&str; 5] = ["wasserstein", "perceptual", "gradient_penalty", "generator_loss", "discriminator_loss"];

/// Outcome of one critic update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    /// `mean D(fake) - mean D(real)` under the pre-update critic.
    pub wasserstein: f64,
    /// Per-sample mean penalty.
    pub gradient_penalty: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorStats {
    /// Feature distance averaged over output frames.
    pub perceptual: f64,
    pub loss: f64,
}

/// Alternating WGAN-GP optimisation of the deblurring or interpolating
/// generator against the frame critic.
#[derive(Clone, Debug)]
pub struct GanTrainer<S> {
    pub config: TrainConfig,
    pub generator: Generator<S>,
    pub discriminator: Discriminator<S>,
    pub gen_adam: AdamState<S>,
    pub disc_adam: AdamState<S>,
    pub features: FeatureNet<S>,
    pub log: TrainLog,
    state: RunState,
}

impl<S: Scalar> GanTrainer<S> {
    pub fn new(config: TrainConfig, dims: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let (gen_config, disc_config) = match config.widths {
            Widths::Paper => (GeneratorConfig::paper(dims.0, dims.1), DiscriminatorConfig::paper(dims.0, dims.1)),
            Widths::Desk => (GeneratorConfig::desk(dims.0, dims.1), DiscriminatorConfig::desk(dims.0, dims.1)),
        };
        let gen_config = match config.mode {
            TrainMode::RecurrentGan => gen_config,
            TrainMode::Interpolation => gen_config.interpolation(),
            TrainMode::Cascade => return Err(Error::Config("cascade training does not use the adversarial trainer".into())),
        };
        let seeds = model_seeds(config.seed);
        let generator = Generator::new(gen_config, seeds[0])?;
        let discriminator = Discriminator::new(disc_config, seeds[1])?;
        let gen_adam = AdamState::new(&generator.params, AdamConfig::with_lr(config.lr));
        let disc_adam = AdamState::new(&discriminator.params, AdamConfig::with_lr(config.lr));
        Ok(GanTrainer {
            state: RunState::new(seeds[2]),
            config,
            generator,
            discriminator,
            gen_adam,
            disc_adam,
            features: FeatureNet::new(DEFAULT_FEATURE_SEED),
            log: TrainLog::new(&GAN_COLUMNS),
        })
    }

    /// Weights from `ckpt`, fresh moment buffers at the fine-tune rate.
    pub fn fine_tune_from(config: TrainConfig, dims: (usize, usize), ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config, dims)?;
        ckpt.check_config_hash(t.config.hash());
        let mut offenders = Vec::new();
        for store in [&mut t.generator.params, &mut t.discriminator.params] {
            match ckpt.restore_params(store) {
                Ok(()) => {}
                Err(Error::Checkpoint(list)) => offenders.extend(list),
                Err(e) => return Err(e),
            }
        }
        if !offenders.is_empty() {
            return Err(Error::Checkpoint(offenders));
        }
        let adam = AdamConfig::with_lr(t.config.fine_tune_lr);
        t.gen_adam = AdamState::new(&t.generator.params, adam);
        t.disc_adam = AdamState::new(&t.discriminator.params, adam);
        t.state.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn step(&self) -> usize {
        self.state.step
    }

    fn window_len(&self) -> usize {
        match self.config.mode {
            TrainMode::Interpolation => INTERP_WINDOW,
            _ => self.config.seq_len,
        }
    }

    pub fn batch(&self, set: &TrainingSet, windows: &[super::Window]) -> Result<GanBatch<S>> {
        match self.config.mode {
            TrainMode::Interpolation => GanBatch::interpolation(set, windows),
            _ => GanBatch::recurrent(set, windows, self.config.seq_len),
        }
    }

    /// Generator output for `batch`, frame-major `[L * B, 1, H, W]`.
    fn generate(&self, g: &mut Graph<S>, p: &Bound, batch: &GanBatch<S>) -> Result<Var> {
        let inputs: Vec<Var> = batch.inputs.iter().map(|t| g.constant(t.clone())).collect();
        match self.config.mode {
            TrainMode::Interpolation => self.generator.interpolate(g, p, &inputs),
            _ => {
                let out = self.generator.forward(g, p, &inputs)?;
                g.concat(&out, 0)
            }
        }
    }

    /// One Adam step on the critic; the generator is untouched.
    /// `real` and `fake` hold `frames` groups of equal size, frame-major.
    pub fn critic_step(&mut self, real: &Tensor<S>, fake: &Tensor<S>, frames: usize) -> Result<CriticStats> {
        let n = real.shape()[0];
        if real.shape() != fake.shape() || frames == 0 || n % frames != 0 {
            return Err(Error::shape("critic step", format!("real {:?} vs fake {:?} in {frames} frames", real.shape(), fake.shape())));
        }
        let per_frame = n / frames;
        let eps = sample_epsilon(&mut self.state.rng, n);

        let mut g = Graph::new();
        let p = g.bind(&self.discriminator.params, true);
        let real_v = g.constant(real.clone());
        let fake_v = g.constant(fake.clone());
        let both = g.concat(&[real_v, fake_v], 0)?;
        let scores = self.discriminator.forward(&mut g, &p, both)?;
        let split = |g: &mut Graph<S>, base: usize| -> Result<Vec<Var>> {
            (0..frames).map(|l| g.narrow(scores, 0, base + l * per_frame, per_frame)).collect()
        };
        let real_scores = split(&mut g, 0)?;
        let fake_scores = split(&mut g, n)?;
        let disc = &self.discriminator;
        let gp = gradient_penalty(&mut g, |g, x| disc.forward(g, &p, x), real_v, fake_v, &eps, self.config.lambda_gp)?;
        let loss = discriminator_loss(&mut g, &real_scores, &fake_scores, &vec![gp; frames])?;

        let s = g.value(scores).data();
        let mean = |xs: &[S]| xs.iter().map(|v| v.f64()).sum::<f64>() / xs.len() as f64;
        let stats = CriticStats {
            wasserstein: mean(&s[n..]) - mean(&s[..n]),
            gradient_penalty: g.value(gp).item().f64(),
            loss: g.value(loss).item().f64(),
        };
        let grads = g.backward(loss)?.for_params(&p)?;
        self.guard("discriminator loss", stats.loss, &grads)?;
        self.disc_adam.step(&mut self.discriminator.params, &grads)?;
        Ok(stats)
    }

    /// One Adam step on the generator against the current critic.
    pub fn generator_step(&mut self, batch: &GanBatch<S>) -> Result<GeneratorStats> {
        let mut g = Graph::new();
        let p = g.bind(&self.generator.params, true);
        let fake = self.generate(&mut g, &p, batch)?;
        self.generator_update(g, &p, fake, batch)
    }

    fn generator_update(&mut self, mut g: Graph<S>, p: &Bound, fake: Var, batch: &GanBatch<S>) -> Result<GeneratorStats> {
        let frames = batch.frames();
        let b = batch.batch_size();
        let dp = g.bind(&self.discriminator.params, false);
        let scores = self.discriminator.forward(&mut g, &dp, fake)?;
        let real = g.constant(batch.real.clone());
        let per = feature_loss(&mut g, &self.features, fake, real)?;
        let fake_scores = (0..frames).map(|l| g.narrow(scores, 0, l * b, b)).collect::<Result<Vec<_>>>()?;
        let loss = generator_gan_loss(&mut g, &fake_scores, &vec![per; frames], self.config.lambda_per)?;
        let stats = GeneratorStats { perceptual: g.value(per).item().f64(), loss: g.value(loss).item().f64() };
        let grads = g.backward(loss)?.for_params(p)?;
        self.guard("generator loss", stats.loss, &grads)?;
        self.gen_adam.step(&mut self.generator.params, &grads)?;
        Ok(stats)
    }

    /// `n_critic` critic steps followed by one generator step. Returns the
    /// log row.
    pub fn iteration(&mut self, batch: &GanBatch<S>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = g.bind(&self.generator.params, true);
        let fake = self.generate(&mut g, &p, batch)?;
        let fake_value = g.value(fake).clone();
        let mut critic = None;
        for _ in 0..self.config.n_critic {
            critic = Some(self.critic_step(&batch.real, &fake_value, batch.frames())?);
        }
        let critic = critic.expect("n_critic >= 1");
        let gen = self.generator_update(g, &p, fake, batch)?;
        Ok(vec![critic.wasserstein, gen.perceptual, critic.gradient_penalty, gen.loss, critic.loss])
    }

    /// Trains for `epochs` epochs, each a seeded shuffle of all windows.
    pub fn run(&mut self, set: &TrainingSet, epochs: usize) -> Result<()> {
        let windows = set.windows(self.window_len())?;
        if set.dims() != (self.generator.config.height, self.generator.config.width) {
            return Err(Error::shape("training set", format!("{:?} frames for a {}x{} model", set.dims(), self.generator.config.height, self.generator.config.width)));
        }
        let first = self.state.epoch + 1;
        'epochs: for epoch in first..first + epochs {
            self.state.epoch = epoch;
            let mut order = windows.clone();
            order.shuffle(&mut self.state.rng);
            for chunk in order.chunks(self.config.batch) {
                if self.state.capped(&self.config) {
                    break 'epochs;
                }
                let batch = self.batch(set, chunk)?;
                let row = self.iteration(&batch)?;
                self.state.step += 1;
                self.state.iterations += 1;
                self.log.push(epoch, self.state.step, row)?;
            }
            self.state.periodic_save(&self.config, epoch, || self.checkpoint())?;
        }
        self.state.final_save(&self.config, &self.log, || self.checkpoint())
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta { mode: self.config.mode, widths: self.config.widths, height: self.generator.config.height, width: self.generator.config.width }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(self.config.hash(), self.state.step as u64);
        c.add_params(&self.generator.params)?;
        c.add_params(&self.discriminator.params)?;
        c.add_adam("generator", &self.generator.params, &self.gen_adam)?;
        c.add_adam("discriminator", &self.discriminator.params, &self.disc_adam)?;
        self.meta().write(&mut c)?;
        Ok(c)
    }

    fn guard(&self, what: &str, loss: f64, grads: &[Tensor<S>]) -> Result<()> {
        ensure_finite(&self.config, &self.state, what, loss, grads, || self.checkpoint())
    }
}
