use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::checkpoint::fnv1a;
use crate::data::ErasePolicy;
use crate::error::{Error, Result};
use crate::kspace::{DegradeMode, DegradeParams, RowAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    RecurrentGan,
    Cascade,
    Interpolation,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::RecurrentGan => "recurrent_gan",
            TrainMode::Cascade => "cascade",
            TrainMode::Interpolation => "interpolation",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent_gan" | "recurrent" => Ok(TrainMode::RecurrentGan),
            "cascade" => Ok(TrainMode::Cascade),
            "interpolation" | "interp" => Ok(TrainMode::Interpolation),
            _ => Err(Error::Config(format!("unknown training mode {s:?}"))),
        }
    }
}

/// Network width preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Widths {
    Paper,
    Desk,
}

impl Widths {
    pub fn as_str(self) -> &'static str {
        match self {
            Widths::Paper => "paper",
            Widths::Desk => "desk",
        }
    }
}

impl FromStr for Widths {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Widths::Paper),
            "desk" => Ok(Widths::Desk),
            _ => Err(Error::Config(format!("unknown width preset {s:?}"))),
        }
    }
}

/// Two-phase `(alpha, beta)` weighting of the cascade objective. Epochs are
/// counted from 1; `switch_epoch` is the first epoch of the second phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSchedule {
    pub first: (f64, f64),
    pub second: (f64, f64),
    pub switch_epoch: usize,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule { first: (1.0, 0.01), second: (0.01, 1.0), switch_epoch: 31 }
    }
}

impl WeightSchedule {
    pub fn at(&self, epoch: usize) -> (f64, f64) {
        if epoch < self.switch_epoch {
            self.first
        } else {
            self.second
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub fine_tune_lr: f64,
    pub fine_tune_epochs: usize,
    /// Frames per training window.
    pub seq_len: usize,
    /// Mixing half-width `N` of the simulated acquisition.
    pub n_mix: usize,
    pub keep_fraction: f64,
    /// Radial spokes per frame; 0 selects Cartesian line mixing.
    pub spokes: usize,
    pub lambda_per: f64,
    pub lambda_gp: f64,
    pub schedule: WeightSchedule,
    pub n_critic: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub widths: Widths,
    /// Placement of the cascade's erased boxes during training.
    pub erase: ErasePolicy,
    /// Hard cap on optimizer iterations across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::RecurrentGan,
            epochs: 50,
            batch: 2,
            lr: 1e-4,
            fine_tune_lr: 2e-5,
            fine_tune_epochs: 10,
            seq_len: 7,
            n_mix: 7,
            keep_fraction: 0.25,
            spokes: 0,
            lambda_per: 0.1,
            lambda_gp: 10.0,
            schedule: WeightSchedule::default(),
            n_critic: 1,
            seed: 0,
            checkpoint_every: 0,
            dataset: None,
            output: None,
            widths: Widths::Paper,
            erase: ErasePolicy::Random,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for `mode`: 60 epochs for the cascade, 50 otherwise.
    pub fn for_mode(mode: TrainMode) -> Self {
        let epochs = if mode == TrainMode::Cascade { 60 } else { 50 };
        TrainConfig { mode, epochs, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.fine_tune_lr > 0.0 && self.fine_tune_lr.is_finite()) {
            return fail(format!("learning rates must be positive: lr={} fine_tune_lr={}", self.lr, self.fine_tune_lr));
        }
        if self.batch == 0 {
            return fail("batch must be >= 1".into());
        }
        if self.seq_len == 0 {
            return fail("seq_len must be >= 1".into());
        }
        if self.mode == TrainMode::Interpolation && self.seq_len != 7 {
            return fail(format!("interpolation windows hold 7 frames, got seq_len={}", self.seq_len));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return fail(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction));
        }
        if self.n_critic == 0 {
            return fail("n_critic must be >= 1".into());
        }
        for w in [self.lambda_per, self.lambda_gp, self.schedule.first.0, self.schedule.first.1, self.schedule.second.0, self.schedule.second.1] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("loss weights must be finite and >= 0, got {w}"));
            }
        }
        Ok(())
    }

    pub fn degrade_params(&self) -> DegradeParams {
        DegradeParams {
            mode: if self.spokes == 0 { DegradeMode::CartesianMix } else { DegradeMode::Radial },
            n_mix: self.n_mix,
            keep_fraction: self.keep_fraction,
            n_spokes: self.spokes,
            assignment: RowAssignment::Blocks,
        }
    }

    /// Canonical `key=value` rendering; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("writing to a String");
        kv("mode", self.mode.as_str().into());
        kv("epochs", self.epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("lr", self.lr.to_string());
        kv("fine_tune_lr", self.fine_tune_lr.to_string());
        kv("fine_tune_epochs", self.fine_tune_epochs.to_string());
        kv("seq_len", self.seq_len.to_string());
        kv("n_mix", self.n_mix.to_string());
        kv("keep_fraction", self.keep_fraction.to_string());
        kv("spokes", self.spokes.to_string());
        kv("lambda_per", self.lambda_per.to_string());
        kv("lambda_gp", self.lambda_gp.to_string());
        kv("alpha_first", self.schedule.first.0.to_string());
        kv("beta_first", self.schedule.first.1.to_string());
        kv("alpha_second", self.schedule.second.0.to_string());
        kv("beta_second", self.schedule.second.1.to_string());
        kv("switch_epoch", self.schedule.switch_epoch.to_string());
        kv("n_critic", self.n_critic.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("dataset", path(&self.dataset));
        kv("output", path(&self.output));
        kv("widths", self.widths.as_str().into());
        kv("erase", if self.erase == ErasePolicy::Center { "center" } else { "random" }.into());
        kv("max_steps", self.max_steps.map(|n| n.to_string()).unwrap_or_default());
        s
    }

    /// Hash of the canonical text, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    /// Parses flat `key=value` lines. Blank lines and `#` comments are
    /// skipped; keys not given keep the defaults of the given `mode` (or
    /// of recurrent training when `mode` is absent).
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            pairs.push((k, v));
        }
        let mode = match pairs.iter().find(|(k, _)| *k == "mode") {
            Some((_, v)) => v.parse()?,
            None => TrainMode::RecurrentGan,
        };
        let mut c = TrainConfig::for_mode(mode);
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "mode" => self.mode = value.parse()?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "fine_tune_lr" => self.fine_tune_lr = num(key, value)?,
            "fine_tune_epochs" => self.fine_tune_epochs = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "n_mix" => self.n_mix = num(key, value)?,
            "keep_fraction" => self.keep_fraction = num(key, value)?,
            "spokes" => self.spokes = num(key, value)?,
            "lambda_per" => self.lambda_per = num(key, value)?,
            "lambda_gp" => self.lambda_gp = num(key, value)?,
            "alpha_first" => self.schedule.first.0 = num(key, value)?,
            "beta_first" => self.schedule.first.1 = num(key, value)?,
            "alpha_second" => self.schedule.second.0 = num(key, value)?,
            "beta_second" => self.schedule.second.1 = num(key, value)?,
            "switch_epoch" => self.schedule.switch_epoch = num(key, value)?,
            "n_critic" => self.n_critic = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "dataset" => self.dataset = opt_path(value),
            "output" => self.output = opt_path(value),
            "widths" => self.widths = value.parse()?,
            "erase" => {
                self.erase = match value {
                    "center" => ErasePolicy::Center,
                    "random" => ErasePolicy::Random,
                    _ => return Err(Error::Config(format!("erase: expected center or random, got {value:?}"))),
                }
            }
            "max_steps" => self.max_steps = if value.is_empty() { None } else { Some(num(key, value)?) },
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = TrainConfig::for_mode(TrainMode::Cascade);
        c.lr = 3.5e-4;
        c.output = Some("runs/a".into());
        c.max_steps = Some(12);
        c.schedule.switch_epoch = 151;
        c.erase = ErasePolicy::Center;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn defaults_follow_mode() {
        let c = TrainConfig::parse("mode = cascade\n# comment\n\nbatch=4\n").unwrap();
        assert_eq!((c.mode, c.epochs, c.batch), (TrainMode::Cascade, 60, 4));
        let d = TrainConfig::default();
        assert_eq!((d.lr, d.fine_tune_lr, d.fine_tune_epochs, d.seq_len, d.n_mix, d.batch), (1e-4, 2e-5, 10, 7, 7, 2));
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["lr=0", "batch=0", "seq_len=0", "nonsense=1", "epochs=x", "lr=1\nlr=2", "just a line", "mode=interp\nseq_len=6"] {
            assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }

    #[test]
    fn schedule_flips_at_switch_epoch() {
        let s = WeightSchedule::default();
        assert_eq!(s.at(1), (1.0, 0.01));
        assert_eq!(s.at(30), (1.0, 0.01));
        assert_eq!(s.at(31), (0.01, 1.0));
        assert_eq!(s.at(60), (0.01, 1.0));
    }

    #[test]
    fn hash_changes_with_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
