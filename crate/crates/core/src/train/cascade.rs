use rand::seq::SliceRandom;

use super::config::{TrainConfig, TrainMode, Widths};
use super::dataset::{CascadeBatch, TrainingSet};
use super::log::TrainLog;
use super::{ensure_finite, model_seeds, ModelMeta, RunState};
use crate::checkpoint::Checkpoint;
use crate::data::ErasedRegion;
use crate::error::{Error, Result};
use crate::losses::{inpaint_loss, multiscale_loss, multistep_loss, synthesis_loss, total_cascade_loss, transformer_loss, FeatureNet, DEFAULT_FEATURE_SEED};
use crate::model_cascade::{Cascade, CascadeConfig};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, Bound, Graph, Var};

pub const CASCADE_COLUMNS: [&str; 6] = ["alpha", "beta", "inpaint", "transformer", "synthesis", "total"];

/// Graph nodes of every term of the weighted cascade objective.
#[derive(Clone, Copy, Debug)]
pub struct CascadeTerms {
    pub inpaint: [Var; 3],
    pub transformer: [Var; 3],
    pub synthesis: Var,
    pub total: Var,
}

/// Scalar values of [`CascadeTerms`]; inpainting and transformer terms are
/// summed over the three transformers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeLosses {
    pub inpaint: f64,
    pub transformer: f64,
    pub synthesis: f64,
    pub total: f64,
}

/// Builds the full objective for one batch.
pub fn cascade_objective<S: Scalar>(
    g: &mut Graph<S>,
    cascade: &Cascade<S>,
    p: &Bound,
    net: &FeatureNet<S>,
    batch: &CascadeBatch<S>,
    regions: [ErasedRegion; 3],
    (alpha, beta): (f64, f64),
) -> Result<CascadeTerms> {
    let frames: Vec<Var> = batch.frames.iter().map(|t| g.constant(t.clone())).collect();
    let hr = g.constant(batch.hr.clone());
    let out = cascade.forward(g, p, &frames, regions)?;
    let mut inpaint = Vec::with_capacity(3);
    let mut transformer = Vec::with_capacity(3);
    for (t, region) in out.transformers.iter().zip(regions) {
        let inp = inpaint_loss(g, net, t.inpainted.patch, t.true_patch, region.size)?;
        let steps = t.warps.iter().map(|w| multiscale_loss(g, net, w, hr)).collect::<Result<Vec<_>>>()?;
        let ms = multistep_loss(g, &steps)?;
        inpaint.push(inp);
        transformer.push(transformer_loss(g, inp, ms)?);
    }
    let inpaint: [Var; 3] = inpaint.try_into().expect("three transformers");
    let transformer: [Var; 3] = transformer.try_into().expect("three transformers");
    let synthesis = synthesis_loss(g, net, out.sr, hr)?;
    let total = total_cascade_loss(g, transformer, synthesis, alpha, beta)?;
    Ok(CascadeTerms { inpaint, transformer, synthesis, total })
}

impl CascadeTerms {
    pub fn values<S: Scalar>(&self, g: &Graph<S>) -> CascadeLosses {
        let v = |x: Var| g.value(x).item().f64();
        CascadeLosses {
            inpaint: self.inpaint.iter().map(|&x| v(x)).sum(),
            transformer: self.transformer.iter().map(|&x| v(x)).sum(),
            synthesis: v(self.synthesis),
            total: v(self.total),
        }
    }
}

/// End-to-end training of the transformers and the synthesis network under
/// the two-phase weight schedule.
#[derive(Clone, Debug)]
pub struct CascadeTrainer<S> {
    pub config: TrainConfig,
    pub cascade: Cascade<S>,
    pub adam: AdamState<S>,
    pub features: FeatureNet<S>,
    pub log: TrainLog,
    state: RunState,
}

impl<S: Scalar> CascadeTrainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.mode != TrainMode::Cascade {
            return Err(Error::Config(format!("{} training does not use the cascade trainer", config.mode.as_str())));
        }
        let model = match config.widths {
            Widths::Paper => CascadeConfig::paper(),
            Widths::Desk => CascadeConfig::desk(),
        };
        let seeds = model_seeds(config.seed);
        let cascade = Cascade::new(model, seeds[0])?;
        let adam = AdamState::new(&cascade.params, AdamConfig::with_lr(config.lr));
        Ok(CascadeTrainer {
            state: RunState::new(seeds[2]),
            config,
            cascade,
            adam,
            features: FeatureNet::new(DEFAULT_FEATURE_SEED),
            log: TrainLog::new(&CASCADE_COLUMNS),
        })
    }

    pub fn fine_tune_from(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        ckpt.check_config_hash(t.config.hash());
        ckpt.restore_params(&mut t.cascade.params)?;
        t.adam = AdamState::new(&t.cascade.params, AdamConfig::with_lr(t.config.fine_tune_lr));
        t.state.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn step(&self) -> usize {
        self.state.step
    }

    /// Erase boxes for the three transformers under the configured policy.
    pub fn sample_regions(&mut self, dims: (usize, usize)) -> Result<[ErasedRegion; 3]> {
        let size = self.cascade.config.erase;
        let (policy, rng) = (self.config.erase, &mut self.state.rng);
        Ok([policy.region(dims, size, rng)?, policy.region(dims, size, rng)?, policy.region(dims, size, rng)?])
    }

    /// Objective values without updating any weight.
    pub fn evaluate(&self, batch: &CascadeBatch<S>, regions: [ErasedRegion; 3], weights: (f64, f64)) -> Result<CascadeLosses> {
        let mut g = Graph::new();
        let p = g.bind(&self.cascade.params, false);
        let terms = cascade_objective(&mut g, &self.cascade, &p, &self.features, batch, regions, weights)?;
        Ok(terms.values(&g))
    }

    /// One Adam step at the weights of `epoch`. Returns the log row.
    pub fn iteration(&mut self, batch: &CascadeBatch<S>, epoch: usize) -> Result<Vec<f64>> {
        let shape = batch.hr.shape();
        let regions = self.sample_regions((shape[2], shape[3]))?;
        let weights = self.config.schedule.at(epoch);
        let mut g = Graph::new();
        let p = g.bind(&self.cascade.params, true);
        let terms = cascade_objective(&mut g, &self.cascade, &p, &self.features, batch, regions, weights)?;
        let v = terms.values(&g);
        let grads = g.backward(terms.total)?.for_params(&p)?;
        ensure_finite(&self.config, &self.state, "cascade loss", v.total, &grads, || self.checkpoint())?;
        self.adam.step(&mut self.cascade.params, &grads)?;
        Ok(vec![weights.0, weights.1, v.inpaint, v.transformer, v.synthesis, v.total])
    }

    pub fn run(&mut self, set: &TrainingSet, epochs: usize) -> Result<()> {
        let windows = set.windows(3)?;
        let first = self.state.epoch + 1;
        'epochs: for epoch in first..first + epochs {
            self.state.epoch = epoch;
            let mut order = windows.clone();
            order.shuffle(&mut self.state.rng);
            for chunk in order.chunks(self.config.batch) {
                if self.state.capped(&self.config) {
                    break 'epochs;
                }
                let batch = CascadeBatch::new(set, chunk)?;
                let row = self.iteration(&batch, epoch)?;
                self.state.step += 1;
                self.state.iterations += 1;
                self.log.push(epoch, self.state.step, row)?;
            }
            self.state.periodic_save(&self.config, epoch, || self.checkpoint())?;
        }
        self.state.final_save(&self.config, &self.log, || self.checkpoint())
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta { mode: TrainMode::Cascade, widths: self.config.widths, height: 0, width: 0 }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(self.config.hash(), self.state.step as u64);
        c.add_params(&self.cascade.params)?;
        c.add_adam("cascade", &self.cascade.params, &self.adam)?;
        self.meta().write(&mut c)?;
        Ok(c)
    }
}
