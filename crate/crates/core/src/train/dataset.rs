use std::path::Path;

use crate::data::read_cine;
use crate::error::{Error, Result};
use crate::image::{stack, CineSequence, Image};
use crate::kspace::{degrade_sequence, DegradeParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Position of the missing frame inside a 7-frame interpolation window.
pub const INTERP_CENTER: usize = 3;
pub const INTERP_WINDOW: usize = 7;

/// A degraded acquisition and the clean sequence it was simulated from.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pub degraded: CineSequence<f32>,
    pub clean: CineSequence<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pairs: Vec<SequencePair>,
}

/// A run of `len` consecutive frames starting at `start` in pair `pair`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub pair: usize,
    pub start: usize,
}

impl TrainingSet {
    pub fn new(pairs: Vec<SequencePair>) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::invalid("empty training set"))?;
        let dims = (first.clean.height(), first.clean.width());
        for (i, p) in pairs.iter().enumerate() {
            if p.degraded.len() != p.clean.len() {
                return Err(Error::invalid(format!("pair {i}: {} degraded vs {} clean frames", p.degraded.len(), p.clean.len())));
            }
            for s in [&p.degraded, &p.clean] {
                if (s.height(), s.width()) != dims {
                    return Err(Error::shape("training set", format!("pair {i} is {}x{}, expected {dims:?}", s.height(), s.width())));
                }
            }
        }
        Ok(TrainingSet { pairs })
    }

    /// Pairs each clean sequence with its simulated acquisition.
    pub fn simulate(clean: Vec<CineSequence<f32>>, params: &DegradeParams) -> Result<Self> {
        let pairs = clean
            .into_iter()
            .map(|c| Ok(SequencePair { degraded: degrade_sequence(&c, params)?, clean: c }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs)
    }

    /// Reads one clean `.cine` file, or every `.cine` file of a directory in
    /// name order, and simulates the acquisitions.
    pub fn load(path: impl AsRef<Path>, params: &DegradeParams) -> Result<Self> {
        let path = path.as_ref();
        let files = if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e == "cine"))
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        if files.is_empty() {
            return Err(Error::invalid(format!("no .cine files in {}", path.display())));
        }
        let clean = files.iter().map(read_cine).collect::<Result<Vec<_>>>()?;
        Self::simulate(clean, params)
    }

    pub fn pairs(&self) -> &[SequencePair] {
        &self.pairs
    }

    pub fn dims(&self) -> (usize, usize) {
        let c = &self.pairs[0].clean;
        (c.height(), c.width())
    }

    /// Every window of `len` frames, pair by pair.
    pub fn windows(&self, len: usize) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for (pair, p) in self.pairs.iter().enumerate() {
            if p.clean.len() < len {
                return Err(Error::invalid(format!("pair {pair} has {} frames, windows need {len}", p.clean.len())));
            }
            out.extend((0..=p.clean.len() - len).map(|start| Window { pair, start }));
        }
        Ok(out)
    }

    fn frames<S: Scalar>(&self, windows: &[Window], offset: usize, clean: bool) -> Result<Tensor<S>> {
        let imgs: Vec<Image<S>> = windows
            .iter()
            .map(|w| {
                let p = &self.pairs[w.pair];
                let seq = if clean { &p.clean } else { &p.degraded };
                seq.frame(w.start + offset).cast()
            })
            .collect();
        stack(&imgs.iter().collect::<Vec<_>>())
    }
}

/// Generator inputs and the clean frames its output is compared with.
#[derive(Clone, Debug, PartialEq)]
pub struct GanBatch<S> {
    /// One `[B, 1, H, W]` tensor per input frame.
    pub inputs: Vec<Tensor<S>>,
    /// Clean targets `[L * B, 1, H, W]`, frame-major.
    pub real: Tensor<S>,
}

impl<S: Scalar> GanBatch<S> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].shape()[0]
    }

    /// Number of output frames per sample.
    pub fn frames(&self) -> usize {
        self.real.shape()[0] / self.batch_size()
    }

    /// Degraded windows of `len` frames and their clean counterparts.
    pub fn recurrent(set: &TrainingSet, windows: &[Window], len: usize) -> Result<Self> {
        let inputs = (0..len).map(|l| set.frames(windows, l, false)).collect::<Result<Vec<_>>>()?;
        let clean = (0..len).map(|l| set.frames::<S>(windows, l, true)).collect::<Result<Vec<_>>>()?;
        Ok(GanBatch { inputs, real: concat_batch(&clean)? })
    }

    /// The six degraded frames around the window center and the clean
    /// center frame.
    pub fn interpolation(set: &TrainingSet, windows: &[Window]) -> Result<Self> {
        let inputs = (0..INTERP_WINDOW)
            .filter(|&l| l != INTERP_CENTER)
            .map(|l| set.frames(windows, l, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(GanBatch { inputs, real: set.frames(windows, INTERP_CENTER, true)? })
    }
}

/// Three consecutive degraded frames and the clean middle frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeBatch<S> {
    pub frames: [Tensor<S>; 3],
    pub hr: Tensor<S>,
}

impl<S: Scalar> CascadeBatch<S> {
    pub fn new(set: &TrainingSet, windows: &[Window]) -> Result<Self> {
        Ok(CascadeBatch {
            frames: [set.frames(windows, 0, false)?, set.frames(windows, 1, false)?, set.frames(windows, 2, false)?],
            hr: set.frames(windows, 1, true)?,
        })
    }
}

fn concat_batch<S: Scalar>(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|t| t.shape()[0]).sum();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}
