//! Training loops: adversarial deblurring and interpolation, two-phase
//! cascade training, fine-tuning and checkpoint plumbing.

mod cascade;
mod config;
mod dataset;
mod gan;
mod infer;
mod log;

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cascade::{cascade_objective, CascadeLosses, CascadeTerms, CascadeTrainer, CASCADE_COLUMNS};
pub use config::{TrainConfig, TrainMode, WeightSchedule, Widths};
pub use dataset::{CascadeBatch, GanBatch, SequencePair, TrainingSet, Window, INTERP_CENTER, INTERP_WINDOW};
pub use gan::{CriticStats, GanTrainer, GeneratorStats, GAN_COLUMNS};
pub use infer::Model;
pub use log::{moving_average, LogRecord, TrainLog};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initialisation seeds for the first model, the second model and the
/// training loop RNG.
pub fn model_seeds(seed: u64) -> [u64; 3] {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    [r.next_u64(), r.next_u64(), r.next_u64()]
}

/// Architecture facts stored alongside the weights so inference can rebuild
/// the model. Height and width are 0 for size-agnostic models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelMeta {
    pub mode: TrainMode,
    pub widths: Widths,
    pub height: usize,
    pub width: usize,
}

const META_TENSOR: &str = "meta.model";

impl ModelMeta {
    fn encode(&self) -> [f32; 4] {
        let mode = match self.mode {
            TrainMode::RecurrentGan => 0.0,
            TrainMode::Cascade => 1.0,
            TrainMode::Interpolation => 2.0,
        };
        let widths = if self.widths == Widths::Paper { 0.0 } else { 1.0 };
        [mode, widths, self.height as f32, self.width as f32]
    }

    pub fn write(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.tensors.insert(META_TENSOR, Tensor::new(vec![4], self.encode().to_vec())?)?;
        Ok(())
    }

    pub fn read(ckpt: &Checkpoint) -> Result<Self> {
        let t = ckpt.tensors.by_name(META_TENSOR).ok_or_else(|| Error::Checkpoint(vec![format!("missing tensor {META_TENSOR}")]))?;
        let bad = || Error::Checkpoint(vec![format!("{META_TENSOR} holds {:?}", t.data())]);
        let &[mode, widths, h, w] = t.data() else { return Err(bad()) };
        let mode = match mode as u32 {
            0 => TrainMode::RecurrentGan,
            1 => TrainMode::Cascade,
            2 => TrainMode::Interpolation,
            _ => return Err(bad()),
        };
        let widths = match widths as u32 {
            0 => Widths::Paper,
            1 => Widths::Desk,
            _ => return Err(bad()),
        };
        Ok(ModelMeta { mode, widths, height: h as usize, width: w as usize })
    }
}

/// Loop position and randomness shared by the trainers.
#[derive(Clone, Debug)]
struct RunState {
    epoch: usize,
    step: usize,
    iterations: usize,
    rng: ChaCha8Rng,
}

impl RunState {
    fn new(seed: u64) -> Self {
        RunState { epoch: 0, step: 0, iterations: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn capped(&self, config: &TrainConfig) -> bool {
        config.max_steps.is_some_and(|m| self.iterations >= m)
    }

    fn output_file(config: &TrainConfig, name: &str) -> Option<PathBuf> {
        config.output.as_ref().map(|d| d.join(name))
    }

    fn periodic_save(&self, config: &TrainConfig, epoch: usize, ckpt: impl FnOnce() -> Result<Checkpoint>) -> Result<()> {
        if config.checkpoint_every == 0 || epoch % config.checkpoint_every != 0 {
            return Ok(());
        }
        if let Some(path) = Self::output_file(config, &format!("epoch_{epoch:04}.ckpt")) {
            std::fs::create_dir_all(path.parent().expect("joined path"))?;
            ckpt()?.save(path)?;
        }
        Ok(())
    }

    fn final_save(&self, config: &TrainConfig, log: &TrainLog, ckpt: impl FnOnce() -> Result<Checkpoint>) -> Result<()> {
        if let Some(dir) = &config.output {
            std::fs::create_dir_all(dir)?;
            ckpt()?.save(dir.join("final.ckpt"))?;
            log.write_csv(dir.join("train_log.csv"))?;
        }
        Ok(())
    }
}

/// Aborts on a non-finite loss or gradient, leaving the pre-update weights in
/// `diverged.ckpt` under the output directory.
fn ensure_finite<S: Scalar>(
    config: &TrainConfig,
    state: &RunState,
    what: &str,
    loss: f64,
    grads: &[Tensor<S>],
    ckpt: impl FnOnce() -> Result<Checkpoint>,
) -> Result<()> {
    let bad_grad = grads.iter().position(|g| !g.all_finite());
    if loss.is_finite() && bad_grad.is_none() {
        return Ok(());
    }
    let mut detail = match bad_grad {
        Some(i) if loss.is_finite() => format!("gradient of parameter {i} for the {what} is not finite"),
        _ => format!("{what} is {loss}"),
    };
    match RunState::output_file(config, "diverged.ckpt") {
        Some(path) => {
            std::fs::create_dir_all(path.parent().expect("joined path"))?;
            ckpt()?.save(&path)?;
            detail.push_str(&format!("; diagnostic checkpoint at {}", path.display()));
        }
        None => detail.push_str("; no output directory for a diagnostic checkpoint"),
    }
    Err(Error::Diverged { epoch: state.epoch, step: state.step + 1, detail })
}

/// A trained model of either family.
#[derive(Clone, Debug)]
pub enum Trained<S> {
    Gan(Box<GanTrainer<S>>),
    Cascade(Box<CascadeTrainer<S>>),
}

impl<S: Scalar> Trained<S> {
    pub fn log(&self) -> &TrainLog {
        match self {
            Trained::Gan(t) => &t.log,
            Trained::Cascade(t) => &t.log,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Trained::Gan(t) => t.checkpoint(),
            Trained::Cascade(t) => t.checkpoint(),
        }
    }
}

fn require_mode(config: &TrainConfig, mode: TrainMode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::Config(format!("expected mode {}, config says {}", mode.as_str(), config.mode.as_str())));
    }
    Ok(())
}

pub fn train_recurrent_gan<S: Scalar>(config: &TrainConfig, set: &TrainingSet) -> Result<GanTrainer<S>> {
    require_mode(config, TrainMode::RecurrentGan)?;
    let mut t = GanTrainer::new(config.clone(), set.dims())?;
    t.run(set, config.epochs)?;
    Ok(t)
}

pub fn train_interpolation<S: Scalar>(config: &TrainConfig, set: &TrainingSet) -> Result<GanTrainer<S>> {
    require_mode(config, TrainMode::Interpolation)?;
    let mut t = GanTrainer::new(config.clone(), set.dims())?;
    t.run(set, config.epochs)?;
    Ok(t)
}

pub fn train_cascade<S: Scalar>(config: &TrainConfig, set: &TrainingSet) -> Result<CascadeTrainer<S>> {
    require_mode(config, TrainMode::Cascade)?;
    let mut t = CascadeTrainer::new(config.clone())?;
    t.run(set, config.epochs)?;
    Ok(t)
}

/// Dispatches on `config.mode`.
pub fn train<S: Scalar>(config: &TrainConfig, set: &TrainingSet) -> Result<Trained<S>> {
    Ok(match config.mode {
        TrainMode::RecurrentGan => Trained::Gan(Box::new(train_recurrent_gan(config, set)?)),
        TrainMode::Interpolation => Trained::Gan(Box::new(train_interpolation(config, set)?)),
        TrainMode::Cascade => Trained::Cascade(Box::new(train_cascade(config, set)?)),
    })
}

/// Continues from `ckpt` with fresh Adam moments at `fine_tune_lr` for
/// `fine_tune_epochs` epochs.
pub fn fine_tune<S: Scalar>(config: &TrainConfig, ckpt: &Checkpoint, set: &TrainingSet) -> Result<Trained<S>> {
    Ok(match config.mode {
        TrainMode::Cascade => {
            let mut t = CascadeTrainer::fine_tune_from(config.clone(), ckpt)?;
            t.run(set, config.fine_tune_epochs)?;
            Trained::Cascade(Box::new(t))
        }
        _ => {
            let mut t = GanTrainer::fine_tune_from(config.clone(), set.dims(), ckpt)?;
            t.run(set, config.fine_tune_epochs)?;
            Trained::Gan(Box::new(t))
        }
    })
}
