//! Two-level cascade: three transformer networks (inpainting plus
//! multi-scale, multi-step transformation) feeding a recursive-block
//! synthesis network.

use crate::data::{ErasedRegion, ERASE_SIZE};
use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};
use crate::losses::pyramid;
use crate::nn::Conv;
use crate::scalar::Scalar;
use crate::tensor::{Bound, Graph, Init, ParamStore, Var};

pub const DENSE_LAYERS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CascadeConfig {
    pub growth: usize,
    pub front: [usize; 6],
    pub back: [usize; 6],
    pub scales: usize,
    pub steps: usize,
    pub erase: usize,
}

impl CascadeConfig {
    pub fn paper() -> Self {
        CascadeConfig {
            growth: 16,
            front: [32, 32, 64, 64, 128, 128],
            back: [128, 128, 64, 64, 32, 32],
            scales: 3,
            steps: 3,
            erase: ERASE_SIZE,
        }
    }

    pub fn desk() -> Self {
        CascadeConfig { growth: 8, front: [8, 8, 16, 16, 16, 16], back: [16, 16, 16, 16, 8, 8], ..Self::paper() }
    }

    fn validate(&self) -> Result<()> {
        if self.growth == 0 || self.front.contains(&0) || self.back.contains(&0) {
            return Err(Error::Config(format!("zero width in {self:?}")));
        }
        if self.scales == 0 || self.steps == 0 || self.erase == 0 {
            return Err(Error::Config("scales, steps and erase size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Six densely connected 3x3 convolutions. Layer `k` reads the block input
/// concatenated with the outputs of layers `1..k`; the last layer emits one
/// linear channel.
#[derive(Clone, Debug)]
pub struct DenseNet {
    pub layers: Vec<Conv>,
}

impl DenseNet {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, cin: usize, growth: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(DENSE_LAYERS);
        for k in 0..DENSE_LAYERS {
            let co = if k + 1 == DENSE_LAYERS { 1 } else { growth };
            layers.push(Conv::new(store, init, &format!("{name}.{}", k + 1), cin + k * growth, co, 3)?);
        }
        Ok(DenseNet { layers })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if feats.len() == 1 { x } else { g.concat(&feats, 1)? };
            if k + 1 == self.layers.len() {
                return layer.forward(g, p, input);
            }
            feats.push(layer.relu(g, p, input)?);
        }
        unreachable!("dense net has layers")
    }
}

/// Scale-1, 1/2, 1/4, ... copies of a frame by 2x2 average pooling.
#[derive(Clone, Debug)]
pub struct ScalePyramid {
    pub levels: Vec<Var>,
}

impl ScalePyramid {
    pub fn build<S: Scalar>(g: &mut Graph<S>, x: Var, scales: usize) -> Result<Self> {
        Ok(ScalePyramid { levels: pyramid(g, x, scales)? })
    }

    /// Level `k` must be level 0 halved `k` times.
    pub fn check<S: Scalar>(&self, g: &Graph<S>) -> Result<()> {
        let base = g.shape(*self.levels.first().ok_or_else(|| Error::invalid("empty pyramid"))?).to_vec();
        let (mut h, mut w) = (base[2], base[3]);
        for (k, &l) in self.levels.iter().enumerate() {
            if k > 0 {
                h /= 2;
                w /= 2;
            }
            if g.shape(l) != [base[0], base[1], h, w] {
                return Err(Error::shape("pyramid", format!("level {k} is {:?}, expected {h}x{w}", g.shape(l))));
            }
        }
        Ok(())
    }
}

/// Inpainting and transformation sub-networks of one transformer.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub inpaint: DenseNet,
    pub transform: DenseNet,
}

/// Output of an inpainting pass.
#[derive(Clone, Copy, Debug)]
pub struct Inpainted {
    pub patch: Var,
    pub image: Var,
}

impl Transformer {
    fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, growth: usize) -> Result<Self> {
        Ok(Transformer {
            inpaint: DenseNet::new(store, init, &format!("{name}.inpaint"), 1, growth)?,
            transform: DenseNet::new(store, init, &format!("{name}.transform"), 2, growth)?,
        })
    }

    /// Predicts the erased box of `erased: [N, 1, H, W]` and pastes it back.
    pub fn inpaint_forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, erased: Var, region: Option<ErasedRegion>) -> Result<Inpainted> {
        let region = region.ok_or_else(|| Error::invalid("inpainting needs the erase origin"))?;
        let (oy, ox) = region.origin;
        let shape = g.shape(erased).to_vec();
        if shape.len() != 4 || oy + region.size > shape[2] || ox + region.size > shape[3] {
            return Err(Error::shape("inpaint", format!("box {region:?} outside {shape:?}")));
        }
        let full = self.inpaint.forward(g, p, erased)?;
        let rows = g.narrow(full, 2, oy, region.size)?;
        let patch = g.narrow(rows, 3, ox, region.size)?;
        let cols = g.embed(patch, 3, ox, shape[3])?;
        let placed = g.embed(cols, 2, oy, shape[2])?;
        let image = g.add(erased, placed)?;
        Ok(Inpainted { patch, image })
    }

    /// One warped estimate per pyramid level, all from the shared weights.
    pub fn transform_multiscale<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, adjacent: &ScalePyramid, target: &ScalePyramid) -> Result<Vec<Var>> {
        adjacent.check(g)?;
        target.check(g)?;
        if adjacent.levels.len() != target.levels.len() || g.shape(adjacent.levels[0]) != g.shape(target.levels[0]) {
            return Err(Error::shape("transform", "adjacent and target pyramids differ"));
        }
        let mut out = Vec::with_capacity(adjacent.levels.len());
        for (&a, &t) in adjacent.levels.iter().zip(&target.levels) {
            let x = g.concat(&[a, t], 1)?;
            out.push(self.transform.forward(g, p, x)?);
        }
        Ok(out)
    }

    /// Recurrent transformation: step 1 warps `adjacent`, later steps warp
    /// the previous step's full-scale output. Returns steps x scales.
    pub fn transform_multistep<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        adjacent: Var,
        target: Var,
        scales: usize,
        steps: usize,
    ) -> Result<Vec<Vec<Var>>> {
        if steps == 0 {
            return Err(Error::invalid("transformation needs at least one step"));
        }
        let target = ScalePyramid::build(g, target, scales)?;
        let mut input = adjacent;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let pyr = ScalePyramid::build(g, input, scales)?;
            let warps = self.transform_multiscale(g, p, &pyr, &target)?;
            input = warps[0];
            out.push(warps);
        }
        Ok(out)
    }
}

/// Entry convolution followed by a shared conv pair applied twice with a
/// residual connection to the entry features.
#[derive(Clone, Debug)]
pub struct RecursiveBlock {
    pub entry: Conv,
    pub first: Conv,
    pub second: Conv,
}

pub const RECURSIONS: usize = 2;

impl RecursiveBlock {
    fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, ci: usize, co: usize) -> Result<Self> {
        Ok(RecursiveBlock {
            entry: Conv::new(store, init, &format!("{name}.entry"), ci, co, 3)?,
            first: Conv::new(store, init, &format!("{name}.a"), co, co, 3)?,
            second: Conv::new(store, init, &format!("{name}.b"), co, co, 3)?,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let h0 = self.entry.relu(g, p, x)?;
        let mut u = h0;
        for _ in 0..RECURSIONS {
            let a = self.first.relu(g, p, u)?;
            let b = self.second.relu(g, p, a)?;
            u = g.add(b, h0)?;
        }
        Ok(u)
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub front: Vec<RecursiveBlock>,
    pub back: Vec<RecursiveBlock>,
    pub out: Conv,
}

impl Synthesis {
    fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, cfg: &CascadeConfig) -> Result<Self> {
        let mut front = Vec::with_capacity(6);
        let mut ci = 1;
        for (i, &co) in cfg.front.iter().enumerate() {
            front.push(RecursiveBlock::new(store, init, &format!("synthesis.front.{}", i + 1), ci, co)?);
            ci = co;
        }
        let mut back = Vec::with_capacity(6);
        ci *= 3;
        for (i, &co) in cfg.back.iter().enumerate() {
            back.push(RecursiveBlock::new(store, init, &format!("synthesis.back.{}", i + 1), ci, co)?);
            ci = co;
        }
        let out = Conv::new(store, init, "synthesis.out", ci, 1, 3)?;
        Ok(Synthesis { front, back, out })
    }

    /// Shared front half per input, concatenation in argument order, then
    /// the back half and a linear output convolution.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, prev: Var, cur: Var, next: Var) -> Result<Var> {
        if g.shape(prev) != g.shape(cur) || g.shape(next) != g.shape(cur) {
            return Err(Error::shape("synthesis", format!("{:?}, {:?}, {:?}", g.shape(prev), g.shape(cur), g.shape(next))));
        }
        let n = g.shape(cur)[0];
        // One pass of the shared front half over all three inputs.
        let mut h = g.concat(&[prev, cur, next], 0)?;
        for block in &self.front {
            h = block.forward(g, p, h)?;
        }
        let parts: Vec<Var> = (0..3).map(|i| g.narrow(h, 0, i * n, n)).collect::<Result<_>>()?;
        let mut h = g.concat(&parts, 1)?;
        for block in &self.back {
            h = block.forward(g, p, h)?;
        }
        self.out.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub struct CascadeLayout {
    /// Transformers for the previous, next and current frame.
    pub transformers: [Transformer; 3],
    pub synthesis: Synthesis,
}

#[derive(Clone, Debug)]
pub struct Cascade<S> {
    pub config: CascadeConfig,
    pub layout: CascadeLayout,
    pub params: ParamStore<S>,
}

/// Intermediate outputs of one transformer.
#[derive(Clone, Debug)]
pub struct TransformerOutput {
    pub inpainted: Inpainted,
    pub true_patch: Var,
    /// `steps x scales` warped estimates.
    pub warps: Vec<Vec<Var>>,
}

impl TransformerOutput {
    /// Full-scale output of the last step.
    pub fn warped(&self) -> Var {
        self.warps.last().expect("steps >= 1")[0]
    }
}

#[derive(Clone, Debug)]
pub struct CascadeOutput {
    pub sr: Var,
    /// Transformers for previous, next and current frame, in that order.
    pub transformers: Vec<TransformerOutput>,
}

/// Frame each transformer warps, as indices into `(prev, cur, next)`.
const TRANSFORMER_SOURCES: [usize; 3] = [0, 2, 1];

impl<S: Scalar> Cascade<S> {
    pub fn new(config: CascadeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let t1 = Transformer::new(&mut params, &mut init, "transformer.1", config.growth)?;
        let t2 = Transformer::new(&mut params, &mut init, "transformer.2", config.growth)?;
        let t3 = Transformer::new(&mut params, &mut init, "transformer.3", config.growth)?;
        let synthesis = Synthesis::new(&mut params, &mut init, &config)?;
        Ok(Cascade { config, layout: CascadeLayout { transformers: [t1, t2, t3], synthesis }, params })
    }

    /// Runs one transformer on `source`, erased at `region`, towards `target`.
    pub fn transformer_forward(&self, g: &mut Graph<S>, p: &Bound, which: usize, source: Var, target: Var, region: ErasedRegion) -> Result<TransformerOutput> {
        let t = self.layout.transformers.get(which).ok_or_else(|| Error::invalid(format!("no transformer {which}")))?;
        let (oy, ox) = region.origin;
        let rows = g.narrow(source, 2, oy, region.size)?;
        let true_patch = g.narrow(rows, 3, ox, region.size)?;
        let (h, w) = (g.shape(source)[2], g.shape(source)[3]);
        let cols = g.embed(true_patch, 3, ox, w)?;
        let hole = g.embed(cols, 2, oy, h)?;
        let erased = g.sub(source, hole)?;
        let inpainted = t.inpaint_forward(g, p, erased, Some(region))?;
        let warps = t.transform_multistep(g, p, inpainted.image, target, self.config.scales, self.config.steps)?;
        Ok(TransformerOutput { inpainted, true_patch, warps })
    }

    /// `frames = [prev, cur, next]`, each `[N, 1, H, W]`; `regions` gives the
    /// erased box for the previous, next and current transformer.
    pub fn forward(&self, g: &mut Graph<S>, p: &Bound, frames: &[Var], regions: [ErasedRegion; 3]) -> Result<CascadeOutput> {
        let &[prev, cur, next] = frames else {
            return Err(Error::invalid(format!("cascade needs exactly 3 frames, got {}", frames.len())));
        };
        if g.shape(prev) != g.shape(cur) || g.shape(next) != g.shape(cur) {
            return Err(Error::shape("cascade", "frames differ in shape"));
        }
        let sources = [prev, cur, next];
        let mut transformers = Vec::with_capacity(3);
        for (k, &src) in TRANSFORMER_SOURCES.iter().enumerate() {
            transformers.push(self.transformer_forward(g, p, k, sources[src], cur, regions[k])?);
        }
        let sr = self.layout.synthesis.forward(g, p, transformers[0].warped(), transformers[2].warped(), transformers[1].warped())?;
        Ok(CascadeOutput { sr, transformers })
    }

    /// Enhances the middle of three consecutive frames without recording
    /// gradients. Every transformer erases the centered box.
    pub fn super_resolve(&self, frames: [&Image<S>; 3]) -> Result<Image<S>> {
        let dims = frames[1].dims();
        let region = ErasedRegion::centered(dims.0 / 2, dims.1 / 2, self.config.erase, dims)?;
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.to_tensor())).collect();
        let out = self.forward(&mut g, &p, &vars, [region; 3])?;
        Image::from_tensor(g.value(out.sr), 0)
    }

    /// Applies [`Cascade::super_resolve`] to every frame, repeating the end
    /// frames as their own missing neighbours.
    pub fn enhance(&self, seq: &CineSequence<S>) -> Result<CineSequence<S>> {
        let t = seq.len();
        let frames = (0..t)
            .map(|i| self.super_resolve([seq.frame(i.saturating_sub(1)), seq.frame(i), seq.frame((i + 1).min(t - 1))]))
            .collect::<Result<Vec<_>>>()?;
        CineSequence::new(frames, seq.pixel_spacing)
    }
}
