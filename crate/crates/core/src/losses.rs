//! Perceptual, cascade and adversarial objectives.
//!
//! All losses are graph ops so that they differentiate end to end. Scalars
//! are `[1]` tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore, PoolMode, Tensor, Var};

/// Output channels of the ten feature layers.
pub const FEATURE_CHANNELS: [usize; 10] = [16, 16, 32, 32, 64, 64, 64, 128, 128, 128];
/// One-based layers whose activations enter the loss.
pub const FEATURE_TAPS: [usize; 4] = [2, 4, 7, 10];
/// One-based layers followed by a 2x2 max-pool.
pub const FEATURE_POOLS: [usize; 3] = [2, 4, 7];
pub const DEFAULT_FEATURE_SEED: u64 = 0x5eed_f00d;

/// Frozen convolutional feature extractor standing in for a pretrained
/// perceptual network. Pools are skipped once a map is narrower than 2.
#[derive(Clone, Debug)]
pub struct FeatureNet<S> {
    params: ParamStore<S>,
    convs: Vec<Conv>,
}

impl<S: Scalar> FeatureNet<S> {
    /// Seeded He-uniform weights, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::with_capacity(FEATURE_CHANNELS.len());
        let mut ci = 1;
        for (i, &co) in FEATURE_CHANNELS.iter().enumerate() {
            let bound = (6.0 / (ci * 9) as f64).sqrt();
            let w = Tensor::from_fn(&[co, ci, 3, 3], |_| S::of(rng.random_range(-bound..=bound)));
            let conv = Conv::register(&mut params, &format!("feature.{}", i + 1), w, Tensor::zeros(&[co]), 3)
                .expect("unique names");
            convs.push(conv);
            ci = co;
        }
        FeatureNet { params, convs }
    }

    /// Replaces the weights with those of `store` (same names and shapes).
    pub fn load(&mut self, store: &ParamStore<S>) -> Result<()> {
        self.params.load_from(store)
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    /// Tapped activations of `x: [N, 1, H, W]`.
    pub fn features(&self, g: &mut Graph<S>, x: Var) -> Result<Vec<Var>> {
        match g.shape(x) {
            [_, 1, _, _] => {}
            s => return Err(Error::shape("feature_net", format!("expected [N, 1, H, W], got {s:?}"))),
        }
        let p = g.bind(&self.params, false);
        let mut h = x;
        let mut taps = Vec::with_capacity(FEATURE_TAPS.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let layer = i + 1;
            h = conv.relu(g, &p, h)?;
            if FEATURE_TAPS.contains(&layer) {
                taps.push(h);
            }
            let (hh, ww) = (g.shape(h)[2], g.shape(h)[3]);
            if FEATURE_POOLS.contains(&layer) && hh >= 2 && ww >= 2 {
                h = g.pool2d(h, PoolMode::Max, 2, 2)?;
            }
        }
        Ok(taps)
    }
}

fn check_pair<S: Scalar>(g: &Graph<S>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Sum over tap layers of the mean squared feature difference. Batched
/// inputs average over the batch as well.
pub fn feature_loss<S: Scalar>(g: &mut Graph<S>, net: &FeatureNet<S>, a: Var, b: Var) -> Result<Var> {
    check_pair(g, "feature_loss", a, b)?;
    let n = g.shape(a)[0];
    let both = g.concat(&[a, b], 0)?;
    let taps = net.features(g, both)?;
    let mut total: Option<Var> = None;
    for t in taps {
        let fa = g.narrow(t, 0, 0, n)?;
        let fb = g.narrow(t, 0, n, n)?;
        let d = g.sub(fa, fb)?;
        let sq = g.square(d);
        let m = g.mean(sq);
        total = Some(match total {
            Some(acc) => g.add(acc, m)?,
            None => m,
        });
    }
    Ok(total.expect("at least one tap"))
}

/// Loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_per: f64,
    pub lambda_gp: f64,
    pub alpha: f64,
    pub beta: f64,
    pub scales: usize,
    pub steps: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_per: 0.1, lambda_gp: 10.0, alpha: 1.0, beta: 0.01, scales: 3, steps: 3 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_per, self.lambda_gp, self.alpha, self.beta];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {weights:?}")));
        }
        if self.scales == 0 || self.steps == 0 {
            return Err(Error::Config("scale and step counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Feature distance between predicted and true erased patches.
pub fn inpaint_loss<S: Scalar>(g: &mut Graph<S>, net: &FeatureNet<S>, pred: Var, truth: Var, size: usize) -> Result<Var> {
    check_pair(g, "inpaint_loss", pred, truth)?;
    if g.shape(pred)[2..] != [size, size] {
        return Err(Error::shape("inpaint_loss", format!("patches {:?}, expected {size}x{size}", g.shape(pred))));
    }
    feature_loss(g, net, pred, truth)
}

/// Average-pooled copies of `x` at scales 1, 1/2, 1/4, ...
pub fn pyramid<S: Scalar>(g: &mut Graph<S>, x: Var, levels: usize) -> Result<Vec<Var>> {
    let mut out = vec![x];
    for _ in 1..levels {
        let last = *out.last().expect("nonempty");
        out.push(g.pool2d(last, PoolMode::Avg, 2, 2)?);
    }
    Ok(out)
}

/// Sum over scales of the feature distance between warp `k` and the
/// correspondingly pooled target.
pub fn multiscale_loss<S: Scalar>(g: &mut Graph<S>, net: &FeatureNet<S>, warps: &[Var], hr: Var) -> Result<Var> {
    if warps.is_empty() {
        return Err(Error::invalid("multiscale_loss needs at least one scale"));
    }
    let targets = pyramid(g, hr, warps.len())?;
    let mut total = None;
    for (&w, &t) in warps.iter().zip(&targets) {
        if g.shape(w) != g.shape(t) {
            return Err(Error::shape("multiscale_loss", format!("warp {:?} vs pooled target {:?}", g.shape(w), g.shape(t))));
        }
        let l = feature_loss(g, net, w, t)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(total.expect("nonempty"))
}

fn sum_scalars<S: Scalar>(g: &mut Graph<S>, xs: &[Var]) -> Result<Var> {
    let (&first, rest) = xs.split_first().ok_or_else(|| Error::invalid("empty loss list"))?;
    rest.iter().try_fold(first, |acc, &x| g.add(acc, x))
}

/// Mean of the per-step multi-scale losses.
pub fn multistep_loss<S: Scalar>(g: &mut Graph<S>, per_step: &[Var]) -> Result<Var> {
    let s = sum_scalars(g, per_step)?;
    Ok(g.scale(s, 1.0 / per_step.len() as f64))
}

pub fn transformer_loss<S: Scalar>(g: &mut Graph<S>, inpaint: Var, multistep: Var) -> Result<Var> {
    g.add(inpaint, multistep)
}

pub fn synthesis_loss<S: Scalar>(g: &mut Graph<S>, net: &FeatureNet<S>, sr: Var, hr: Var) -> Result<Var> {
    feature_loss(g, net, sr, hr)
}

/// `alpha * (tra1 + tra2 + tra3) + beta * syn`.
pub fn total_cascade_loss<S: Scalar>(g: &mut Graph<S>, transformers: [Var; 3], synthesis: Var, alpha: f64, beta: f64) -> Result<Var> {
    let t = sum_scalars(g, &transformers)?;
    let t = g.scale(t, alpha);
    let s = g.scale(synthesis, beta);
    g.add(t, s)
}

/// `-sum_l mean(D(fake_l)) + lambda_per * sum_l feature_l`, with one critic
/// score tensor `[B, 1]` and one feature loss per frame.
pub fn generator_gan_loss<S: Scalar>(g: &mut Graph<S>, fake_scores: &[Var], feature_losses: &[Var], lambda_per: f64) -> Result<Var> {
    let means: Vec<Var> = fake_scores.iter().map(|&s| g.mean(s)).collect();
    let adv = sum_scalars(g, &means)?;
    let adv = g.scale(adv, -1.0);
    let per = sum_scalars(g, feature_losses)?;
    let per = g.scale(per, lambda_per);
    g.add(adv, per)
}

/// `sum_l [mean(D(fake_l)) - mean(D(real_l)) + penalty_l]`.
pub fn discriminator_loss<S: Scalar>(g: &mut Graph<S>, real_scores: &[Var], fake_scores: &[Var], penalties: &[Var]) -> Result<Var> {
    if real_scores.len() != fake_scores.len() || real_scores.len() != penalties.len() {
        return Err(Error::invalid(format!(
            "{} real, {} fake and {} penalty terms",
            real_scores.len(),
            fake_scores.len(),
            penalties.len()
        )));
    }
    let mut terms = Vec::with_capacity(real_scores.len());
    for ((&r, &f), &p) in real_scores.iter().zip(fake_scores).zip(penalties) {
        let (mr, mf) = (g.mean(r), g.mean(f));
        let w = g.sub(mf, mr)?;
        terms.push(g.add(w, p)?);
    }
    sum_scalars(g, &terms)
}

/// Draws one interpolation weight per sample from U[0, 1].
pub fn sample_epsilon(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Batch mean of `lambda * (||grad_x D(x~)|| - 1)^2` with
/// `x~ = eps * real + (1 - eps) * fake` per sample. The interpolate is a
/// fresh leaf, so only the critic's parameters receive gradients.
pub fn gradient_penalty<S, F>(g: &mut Graph<S>, critic: F, real: Var, fake: Var, eps: &[f64], lambda: f64) -> Result<Var>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, Var) -> Result<Var>,
{
    check_pair(g, "gradient_penalty", real, fake)?;
    let shape = g.shape(real).to_vec();
    let n = shape[0];
    if eps.len() != n || eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::invalid(format!("need {n} interpolation weights in [0, 1], got {eps:?}")));
    }
    let per = shape[1..].iter().product::<usize>();
    let (r, f) = (g.value(real).data(), g.value(fake).data());
    let mixed: Vec<S> = (0..n * per)
        .map(|i| {
            let e = S::of(eps[i / per]);
            e * r[i] + (S::one() - e) * f[i]
        })
        .collect();
    let x = g.leaf(Tensor::new(shape.clone(), mixed)?);
    let scores = critic(g, x)?;
    let total = g.sum(scores);
    let grad = g.grad(total, &[x], true)?[0];
    if !g.value(grad).all_finite() {
        return Err(Error::NonFinite("critic input gradient".into()));
    }
    let sq = g.square(grad);
    let mut norm_shape = vec![1; shape.len()];
    norm_shape[0] = n;
    let sumsq = g.sum_to(sq, &norm_shape)?;
    let sumsq = g.affine(sumsq, 1.0, 1e-12);
    let norm = g.sqrt(sumsq);
    let dev = g.affine(norm, 1.0, -1.0);
    let dev2 = g.square(dev);
    let m = g.mean(dev2);
    Ok(g.scale(m, lambda))
}

/// Feature distance on the predicted missing frame only.
pub fn interpolation_loss<S: Scalar>(g: &mut Graph<S>, net: &FeatureNet<S>, pred: Var, truth: Var) -> Result<Var> {
    feature_loss(g, net, pred, truth)
}
