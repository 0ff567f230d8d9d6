//! Bidirectional ConvLSTM encoder-decoder generator, its critic, and the
//! frame-interpolation mode.
//!
//! A sequence batch is a slice of `T` frame tensors, each `[B, 1, H, W]`.

use crate::error::{Error, Result};
use crate::image::{stack, CineSequence, Image};
use crate::nn::{Deconv, Dense};
use crate::scalar::Scalar;
use crate::tensor::{Bound, Graph, Init, ParamId, ParamStore, PoolMode, Var};

/// Encoder blocks after which both branches' hidden states are concatenated
/// (one-based), paired with ConvLSTM layers 1, 2, 3.
pub const LSTM_CONCAT_AFTER: [usize; 3] = [1, 3, 5];
/// Encoder blocks whose outputs are concatenated before decoder layers
/// 2, 4 and 6 (block 7 is the decoder input).
pub const DECODER_SKIPS: [(usize, usize); 3] = [(6, 2), (4, 4), (2, 6)];

/// Initial bias of the last decoder layer.
pub const OUTPUT_BIAS_INIT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    /// 1 for deblurring, 2 for interpolation (the two frames around the gap).
    pub in_channels: usize,
    pub lstm: [usize; 3],
    pub encoder: [usize; 7],
    pub kernels: [usize; 3],
}

impl GeneratorConfig {
    pub fn paper(height: usize, width: usize) -> Self {
        GeneratorConfig {
            height,
            width,
            in_channels: 1,
            lstm: [32, 64, 128],
            encoder: [32, 32, 64, 64, 128, 128, 128],
            kernels: [3, 5, 7],
        }
    }

    /// Narrow widths for single-core experiments.
    pub fn desk(height: usize, width: usize) -> Self {
        GeneratorConfig { lstm: [4, 8, 8], encoder: [8, 8, 16, 16, 16, 16, 16], ..Self::paper(height, width) }
    }

    pub fn interpolation(self) -> Self {
        GeneratorConfig { in_channels: 2, ..self }
    }

    /// Output channels of decoder layers 1..7.
    pub fn decoder(&self) -> [usize; 7] {
        let e = self.encoder;
        [e[5], e[4], e[3], e[2], e[1], e[0], 1]
    }

    fn validate(&self) -> Result<()> {
        let all = self.lstm.iter().chain(&self.encoder);
        if self.height == 0 || self.width == 0 || self.in_channels == 0 || all.clone().any(|&c| c == 0) {
            return Err(Error::Config(format!("zero-sized generator dimension in {self:?}")));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("encoder kernels must be odd: {:?}", self.kernels)));
        }
        Ok(())
    }
}

/// Parameters of one ConvLSTM layer.
#[derive(Clone, Debug)]
pub struct ConvLstmLayer {
    pub channels: usize,
    /// Input kernels for the i, f, c, o paths, each `[C, Cin, 3, 3]`.
    pub w_x: [ParamId; 4],
    /// Recurrent kernels for the i, f, c, o paths, each `[C, C, 3, 3]`.
    pub w_h: [ParamId; 4],
    /// Peepholes into i, f, o, each `[C, H, W]`.
    pub w_c: [ParamId; 3],
    /// Biases for i, f, c, o, each `[C]`.
    pub b: [ParamId; 4],
}

const GATES: [&str; 4] = ["i", "f", "c", "o"];

impl ConvLstmLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        cin: usize,
        channels: usize,
        dims: (usize, usize),
    ) -> Result<Self> {
        let fan = (cin + channels) * 9;
        let mut ids = |kind: &str, shape: &[usize], store: &mut ParamStore<S>| -> Result<[ParamId; 4]> {
            let mut out = Vec::with_capacity(4);
            for gate in GATES {
                out.push(store.insert(format!("{name}.{kind}{gate}"), init.fan_in(shape, fan))?);
            }
            Ok(out.try_into().expect("four gates"))
        };
        let w_x = ids("w_x", &[channels, cin, 3, 3], store)?;
        let w_h = ids("w_h", &[channels, channels, 3, 3], store)?;
        let b = ids("b_", &[channels], store)?;
        let mut w_c = Vec::with_capacity(3);
        for gate in ["i", "f", "o"] {
            w_c.push(store.insert(format!("{name}.w_c{gate}"), init.fan_in(&[channels, dims.0, dims.1], fan))?);
        }
        Ok(ConvLstmLayer { channels, w_x, w_h, w_c: w_c.try_into().expect("three peepholes"), b })
    }

    /// Fuses the four gate kernels and biases into single graph tensors.
    fn fused<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound) -> Result<FusedLayer> {
        let w_x = g.concat(&self.w_x.map(|id| p[id]), 0)?;
        let w_h = g.concat(&self.w_h.map(|id| p[id]), 0)?;
        let b = g.concat(&self.b.map(|id| p[id]), 0)?;
        Ok(FusedLayer { channels: self.channels, w_x, w_h, b, w_c: self.w_c.map(|id| p[id]) })
    }
}

#[derive(Clone, Copy)]
struct FusedLayer {
    channels: usize,
    w_x: Var,
    w_h: Var,
    b: Var,
    w_c: [Var; 3],
}

/// Cell and hidden state of one layer, each `[B, C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub cell: Var,
    pub hidden: Var,
}

fn peephole<S: Scalar>(g: &mut Graph<S>, w: Var, c: Var) -> Result<Var> {
    let shape = g.shape(c).to_vec();
    let wb = g.reshape(w, &[1, shape[1], shape[2], shape[3]])?;
    let wb = g.broadcast_to(wb, &shape)?;
    g.mul(wb, c)
}

fn step_fused<S: Scalar>(g: &mut Graph<S>, w: &FusedLayer, x: Var, state: Option<LstmState>) -> Result<LstmState> {
    let c = w.channels;
    let xs = g.shape(x).to_vec();
    let peep = g.shape(w.w_c[0]).to_vec();
    if xs.len() != 4 || xs[2..] != peep[1..] {
        return Err(Error::shape("convlstm", format!("input {xs:?} vs state map {:?}", &peep[1..])));
    }
    if let Some(s) = state {
        let want = [xs[0], c, xs[2], xs[3]];
        if g.shape(s.cell) != want || g.shape(s.hidden) != want {
            return Err(Error::shape("convlstm", format!("state {:?} / {:?}, expected {want:?}", g.shape(s.cell), g.shape(s.hidden))));
        }
    }
    let mut z = g.conv2d(x, w.w_x, Some(w.b), 1, 1)?;
    if let Some(s) = state {
        let zh = g.conv2d(s.hidden, w.w_h, None, 1, 1)?;
        z = g.add(z, zh)?;
    }
    let gate = |g: &mut Graph<S>, k: usize| g.narrow(z, 1, k * c, c);
    let (mut zi, mut zf, zc, mut zo) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let cand = g.tanh(zc);
    let cell = match state {
        Some(s) => {
            let pi = peephole(g, w.w_c[0], s.cell)?;
            zi = g.add(zi, pi)?;
            let pf = peephole(g, w.w_c[1], s.cell)?;
            zf = g.add(zf, pf)?;
            let (i, f) = (g.sigmoid(zi), g.sigmoid(zf));
            let keep = g.mul(f, s.cell)?;
            let write = g.mul(i, cand)?;
            g.add(keep, write)?
        }
        None => {
            let i = g.sigmoid(zi);
            g.mul(i, cand)?
        }
    };
    let po = peephole(g, w.w_c[2], cell)?;
    zo = g.add(zo, po)?;
    let o = g.sigmoid(zo);
    let tc = g.tanh(cell);
    let hidden = g.mul(o, tc)?;
    Ok(LstmState { cell, hidden })
}

/// One ConvLSTM update. A `None` state is the all-zero initial state.
pub fn convlstm_step<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    layer: &ConvLstmLayer,
    x: Var,
    state: Option<LstmState>,
) -> Result<LstmState> {
    let fused = layer.fused(g, p)?;
    step_fused(g, &fused, x, state)
}

/// Three stacked ConvLSTM layers.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub layers: [ConvLstmLayer; 3],
}

impl ConvLstm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        cin: usize,
        channels: [usize; 3],
        dims: (usize, usize),
    ) -> Result<Self> {
        let l1 = ConvLstmLayer::new(store, init, &format!("{name}.1"), cin, channels[0], dims)?;
        let l2 = ConvLstmLayer::new(store, init, &format!("{name}.2"), channels[0], channels[1], dims)?;
        let l3 = ConvLstmLayer::new(store, init, &format!("{name}.3"), channels[1], channels[2], dims)?;
        Ok(ConvLstm { layers: [l1, l2, l3] })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-frame hidden states of all three layers, in frame order. The
/// backward branch consumes frames last to first.
pub fn run_branch<S: Scalar>(g: &mut Graph<S>, p: &Bound, branch: &ConvLstm, frames: &[Var], dir: Direction) -> Result<Vec<[Var; 3]>> {
    if frames.is_empty() {
        return Err(Error::invalid("ConvLSTM branch needs at least one frame"));
    }
    let fused = branch.layers.iter().map(|l| l.fused(g, p)).collect::<Result<Vec<_>>>()?;
    let order: Vec<usize> = match dir {
        Direction::Forward => (0..frames.len()).collect(),
        Direction::Backward => (0..frames.len()).rev().collect(),
    };
    let mut states: [Option<LstmState>; 3] = [None; 3];
    let mut out = vec![None; frames.len()];
    for t in order {
        let mut x = frames[t];
        let mut hs = [x; 3];
        for (l, w) in fused.iter().enumerate() {
            let s = step_fused(g, w, x, states[l])?;
            states[l] = Some(s);
            hs[l] = s.hidden;
            x = s.hidden;
        }
        out[t] = Some(hs);
    }
    Ok(out.into_iter().map(|h| h.expect("every frame visited")).collect())
}

/// Encoder block: parallel same-padded kernels summed, plus one bias.
#[derive(Clone, Debug)]
pub struct MultiScaleBlock {
    pub kernels: Vec<(ParamId, usize)>,
    pub bias: ParamId,
}

impl MultiScaleBlock {
    fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, ci: usize, co: usize, sizes: [usize; 3]) -> Result<Self> {
        let fan: usize = sizes.iter().map(|k| ci * k * k).sum();
        let mut kernels = Vec::with_capacity(3);
        for k in sizes {
            kernels.push((store.insert(format!("{name}.w{k}"), init.fan_in(&[co, ci, k, k], fan))?, k));
        }
        let bias = store.insert(format!("{name}.b"), init.fan_in(&[co], fan))?;
        Ok(MultiScaleBlock { kernels, bias })
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, k) in &self.kernels {
            let y = g.conv2d(x, p[w], None, 1, k / 2)?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        let y = g.add_channel_bias(acc.expect("three kernels"), p[self.bias])?;
        Ok(g.relu(y))
    }
}

/// Parameter layout of the generator.
#[derive(Clone, Debug)]
pub struct GeneratorLayout {
    pub forward: ConvLstm,
    pub backward: ConvLstm,
    pub encoder: Vec<MultiScaleBlock>,
    pub decoder: Vec<Deconv>,
}

#[derive(Clone, Debug)]
pub struct Generator<S> {
    pub config: GeneratorConfig,
    pub layout: GeneratorLayout,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Generator<S> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let dims = (config.height, config.width);
        let forward = ConvLstm::new(&mut params, &mut init, "gen.lstm_fwd", 1, config.lstm, dims)?;
        let backward = ConvLstm::new(&mut params, &mut init, "gen.lstm_bwd", 1, config.lstm, dims)?;

        let mut encoder = Vec::with_capacity(7);
        let mut ci = config.in_channels;
        for (b, &co) in config.encoder.iter().enumerate() {
            encoder.push(MultiScaleBlock::new(&mut params, &mut init, &format!("gen.enc.{}", b + 1), ci, co, config.kernels)?);
            ci = co;
            if let Some(l) = LSTM_CONCAT_AFTER.iter().position(|&k| k == b + 1) {
                ci += 2 * config.lstm[l];
            }
        }

        let mut decoder = Vec::with_capacity(7);
        let mut ci = config.encoder[6];
        for (d, &co) in config.decoder().iter().enumerate() {
            if let Some(&(block, _)) = DECODER_SKIPS.iter().find(|s| s.1 == d + 1) {
                ci += config.encoder[block - 1];
            }
            decoder.push(Deconv::new(&mut params, &mut init, &format!("gen.dec.{}", d + 1), ci, co, 3)?);
            ci = co;
        }
        // Start the output ReLU in its active region at mid intensity.
        let out_bias = decoder[6].b;
        params.get_mut(out_bias).data_mut().fill(S::of(OUTPUT_BIAS_INIT));
        Ok(Generator { config, layout: GeneratorLayout { forward, backward, encoder, decoder }, params })
    }

    fn check_frames(&self, g: &Graph<S>, frames: &[Var]) -> Result<usize> {
        let first = frames.first().ok_or_else(|| Error::invalid("empty sequence"))?;
        let b = g.shape(*first)[0];
        let want = [b, 1, self.config.height, self.config.width];
        for &f in frames {
            if g.shape(f) != want {
                return Err(Error::shape("generator", format!("frame {:?}, expected {want:?}", g.shape(f))));
            }
        }
        Ok(b)
    }

    /// Encoder-decoder on `x: [N, in_channels, H, W]` with per-sample
    /// temporal features for LSTM layers 1..3 (both directions).
    fn encode_decode(&self, g: &mut Graph<S>, p: &Bound, x: Var, temporal: [(Var, Var); 3]) -> Result<Var> {
        let l = &self.layout;
        let mut h = x;
        let mut blocks = Vec::with_capacity(7);
        for (b, block) in l.encoder.iter().enumerate() {
            h = block.forward(g, p, h)?;
            blocks.push(h);
            if let Some(k) = LSTM_CONCAT_AFTER.iter().position(|&k| k == b + 1) {
                h = g.concat(&[h, temporal[k].0, temporal[k].1], 1)?;
            }
        }
        let mut d = blocks[6];
        for (j, deconv) in l.decoder.iter().enumerate() {
            if let Some(&(block, _)) = DECODER_SKIPS.iter().find(|s| s.1 == j + 1) {
                d = g.concat(&[d, blocks[block - 1]], 1)?;
            }
            let y = deconv.forward(g, p, d)?;
            d = g.relu(y);
        }
        Ok(d)
    }

    /// Deblurs every frame of a sequence batch; output frames match input.
    pub fn forward(&self, g: &mut Graph<S>, p: &Bound, frames: &[Var]) -> Result<Vec<Var>> {
        if self.config.in_channels != 1 {
            return Err(Error::Config("interpolation generator cannot deblur sequences".into()));
        }
        let b = self.check_frames(g, frames)?;
        let t = frames.len();
        let fwd = run_branch(g, p, &self.layout.forward, frames, Direction::Forward)?;
        let bwd = run_branch(g, p, &self.layout.backward, frames, Direction::Backward)?;
        let mut temporal = Vec::with_capacity(3);
        for l in 0..3 {
            let f: Vec<Var> = fwd.iter().map(|h| h[l]).collect();
            let r: Vec<Var> = bwd.iter().map(|h| h[l]).collect();
            temporal.push((g.concat(&f, 0)?, g.concat(&r, 0)?));
        }
        let x = g.concat(frames, 0)?;
        let y = self.encode_decode(g, p, x, [temporal[0], temporal[1], temporal[2]])?;
        (0..t).map(|i| g.narrow(y, 0, i * b, b)).collect()
    }

    /// Predicts the missing center of a 7-frame window from the 6 others.
    pub fn interpolate(&self, g: &mut Graph<S>, p: &Bound, frames: &[Var]) -> Result<Var> {
        if self.config.in_channels != 2 {
            return Err(Error::Config("deblurring generator cannot interpolate".into()));
        }
        if frames.len() != 6 {
            return Err(Error::invalid(format!("interpolation needs exactly 6 frames, got {}", frames.len())));
        }
        self.check_frames(g, frames)?;
        let fwd = run_branch(g, p, &self.layout.forward, &frames[..3], Direction::Forward)?;
        let bwd = run_branch(g, p, &self.layout.backward, &frames[3..], Direction::Backward)?;
        let (last_f, last_b) = (fwd[2], bwd[0]);
        let x = g.concat(&[frames[2], frames[3]], 1)?;
        self.encode_decode(g, p, x, [(last_f[0], last_b[0]), (last_f[1], last_b[1]), (last_f[2], last_b[2])])
    }

    /// Deblurs a whole sequence without recording gradients.
    pub fn deblur(&self, seq: &CineSequence<S>) -> Result<CineSequence<S>> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let frames: Vec<Var> = seq.frames().iter().map(|f| g.constant(f.to_tensor())).collect();
        let out = self.forward(&mut g, &p, &frames)?;
        let frames = out.iter().map(|&v| Image::from_tensor(g.value(v), 0)).collect::<Result<Vec<_>>>()?;
        CineSequence::new(frames, seq.pixel_spacing)
    }

    /// Predicts the missing frame between `frames[2]` and `frames[3]`.
    pub fn interpolate_frame(&self, frames: &[Image<S>]) -> Result<Image<S>> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.to_tensor())).collect();
        let y = self.interpolate(&mut g, &p, &vars)?;
        Image::from_tensor(g.value(y), 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub height: usize,
    pub width: usize,
    pub convs: [usize; 6],
    pub dense: usize,
}

impl DiscriminatorConfig {
    pub fn paper(height: usize, width: usize) -> Self {
        DiscriminatorConfig { height, width, convs: [64, 64, 128, 128, 256, 256], dense: 1024 }
    }

    pub fn desk(height: usize, width: usize) -> Self {
        DiscriminatorConfig { height, width, convs: [8, 8, 16, 16, 16, 16], dense: 32 }
    }

    fn flat_len(&self) -> usize {
        self.convs[5] * (self.height / 4) * (self.width / 4)
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLayout {
    pub convs: Vec<crate::nn::Conv>,
    pub hidden: Dense,
    pub out: Dense,
}

#[derive(Clone, Debug)]
pub struct Discriminator<S> {
    pub config: DiscriminatorConfig,
    pub layout: DiscriminatorLayout,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Discriminator<S> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.height < 4 || config.width < 4 || config.dense == 0 || config.convs.contains(&0) {
            return Err(Error::Config(format!("discriminator needs >= 4x4 inputs and nonzero widths: {config:?}")));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut convs = Vec::with_capacity(6);
        let mut ci = 1;
        for (i, &co) in config.convs.iter().enumerate() {
            convs.push(crate::nn::Conv::new(&mut params, &mut init, &format!("disc.conv.{}", i + 1), ci, co, 3)?);
            ci = co;
        }
        let hidden = Dense::new(&mut params, &mut init, "disc.dense.1", config.flat_len(), config.dense)?;
        let out = Dense::new(&mut params, &mut init, "disc.dense.2", config.dense, 1)?;
        Ok(Discriminator { config, layout: DiscriminatorLayout { convs, hidden, out }, params })
    }

    /// Critic scores `[N, 1]` for `x: [N, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let want = [n, 1, self.config.height, self.config.width];
        if g.shape(x) != want {
            return Err(Error::shape("discriminator", format!("input {:?}, expected {want:?}", g.shape(x))));
        }
        let mut h = x;
        for (i, conv) in self.layout.convs.iter().enumerate() {
            h = conv.relu(g, p, h)?;
            if i == 1 || i == 3 {
                h = g.pool2d(h, PoolMode::Max, 2, 2)?;
            }
        }
        let flat = g.reshape(h, &[n, self.config.flat_len()])?;
        let hid = self.layout.hidden.forward(g, p, flat)?;
        let hid = g.relu(hid);
        self.layout.out.forward(g, p, hid)
    }

    /// Scores for a batch of frames without recording gradients.
    pub fn score(&self, frames: &[&Image<S>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let x = g.constant(stack(frames)?);
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).data().iter().map(|v| v.f64()).collect())
    }
}
