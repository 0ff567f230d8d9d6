use super::config::{TrainMode, Widths};
use super::dataset::INTERP_WINDOW;
use super::ModelMeta;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};
use crate::model_cascade::{Cascade, CascadeConfig};
use crate::model_recurrent::{Generator, GeneratorConfig};
use crate::scalar::Scalar;

/// An inference model rebuilt from a training checkpoint.
#[derive(Clone, Debug)]
pub enum Model<S> {
    Deblur(Generator<S>),
    Interpolate(Generator<S>),
    Cascade(Cascade<S>),
}

impl<S: Scalar> Model<S> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ModelMeta::read(ckpt)?;
        let gen_config = || match meta.widths {
            Widths::Paper => GeneratorConfig::paper(meta.height, meta.width),
            Widths::Desk => GeneratorConfig::desk(meta.height, meta.width),
        };
        Ok(match meta.mode {
            TrainMode::RecurrentGan => {
                let mut g = Generator::new(gen_config(), 0)?;
                ckpt.restore_params(&mut g.params)?;
                Model::Deblur(g)
            }
            TrainMode::Interpolation => {
                let mut g = Generator::new(gen_config().interpolation(), 0)?;
                ckpt.restore_params(&mut g.params)?;
                Model::Interpolate(g)
            }
            TrainMode::Cascade => {
                let config = match meta.widths {
                    Widths::Paper => CascadeConfig::paper(),
                    Widths::Desk => CascadeConfig::desk(),
                };
                let mut c = Cascade::new(config, 0)?;
                ckpt.restore_params(&mut c.params)?;
                Model::Cascade(c)
            }
        })
    }

    pub fn mode(&self) -> TrainMode {
        match self {
            Model::Deblur(_) => TrainMode::RecurrentGan,
            Model::Interpolate(_) => TrainMode::Interpolation,
            Model::Cascade(_) => TrainMode::Cascade,
        }
    }

    /// Restores every frame of `seq`, clipped to `[0, 1]`.
    pub fn deblur(&self, seq: &CineSequence<S>) -> Result<CineSequence<S>> {
        let out = match self {
            Model::Deblur(g) => {
                check_dims(seq, g.config.height, g.config.width)?;
                g.deblur(seq)?
            }
            Model::Cascade(c) => c.enhance(seq)?,
            Model::Interpolate(_) => return Err(Error::Config("an interpolation checkpoint cannot deblur; use interpolate".into())),
        };
        out.map_frames(clip)
    }

    /// Fills the gap after frame `i` for every `i` with two known frames on
    /// one side and three on the other, returning the original frames with
    /// the predictions interleaved. A 6-frame input becomes 7 frames.
    pub fn interpolate(&self, seq: &CineSequence<S>) -> Result<CineSequence<S>> {
        let Model::Interpolate(g) = self else {
            return Err(Error::Config(format!("a {} checkpoint cannot interpolate", self.mode().as_str())));
        };
        check_dims(seq, g.config.height, g.config.width)?;
        let context = INTERP_WINDOW - 1;
        if seq.len() < context {
            return Err(Error::invalid(format!("interpolation needs at least {context} frames, got {}", seq.len())));
        }
        let frames = seq.frames();
        let mut out = Vec::with_capacity(2 * frames.len());
        for (i, f) in frames.iter().enumerate() {
            out.push(f.clone());
            if i >= 2 && i + 4 <= frames.len() {
                out.push(clip(&g.interpolate_frame(&frames[i - 2..i + 4])?));
            }
        }
        CineSequence::new(out, seq.pixel_spacing)
    }
}

fn clip<S: Scalar>(f: &Image<S>) -> Image<S> {
    f.map(|v| v.max(S::zero()).min(S::one()))
}

fn check_dims<S: Scalar>(seq: &CineSequence<S>, h: usize, w: usize) -> Result<()> {
    if (seq.height(), seq.width()) != (h, w) {
        return Err(Error::shape("inference", format!("{}x{} frames for a model trained on {h}x{w}", seq.height(), seq.width())));
    }
    Ok(())
}
