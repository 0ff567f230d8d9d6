//! Fast-scan degradation in k-space: centered unitary Fourier transforms,
//! frequency-encoding line selection, multi-frame line mixing, low-pass zero
//! padding and golden-angle radial masks.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};
use crate::scalar::Scalar;

/// Largest imaginary residue tolerated when a spectrum is asserted to come
/// from a real image.
pub const REAL_RESIDUE_TOLERANCE: f64 = 1e-5;

/// Golden-angle increment between consecutive radial spokes, in degrees.
pub fn golden_angle_deg() -> f64 {
    180.0 * (5f64.sqrt() - 1.0) / 2.0
}

/// Centered complex spectrum (DC at `(H/2, W/2)`).
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace<S> {
    height: usize,
    width: usize,
    data: Vec<Complex<S>>,
}

impl<S: Scalar> KSpace<S> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<S>>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape("kspace", format!("{height}x{width} with {} values", data.len())));
        }
        Ok(KSpace { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        KSpace { height, width, data: vec![Complex::new(S::zero(), S::zero()); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex<S>] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> Complex<S> {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[Complex<S>] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Sum of squared magnitudes, accumulated in 64-bit.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.re.f64().powi(2) + c.im.f64().powi(2)).sum()
    }

    /// Zeroes every entry whose mask flag is false.
    pub fn apply_mask(&self, mask: &SamplingMask) -> Result<Self> {
        if mask.dims() != self.dims() {
            return Err(Error::shape("apply_mask", format!("mask {:?} vs spectrum {:?}", mask.dims(), self.dims())));
        }
        let zero = Complex::new(S::zero(), S::zero());
        let data = self.data.iter().zip(&mask.keep).map(|(&c, &k)| if k { c } else { zero }).collect();
        Ok(KSpace { height: self.height, width: self.width, data })
    }

    pub fn add(&self, other: &KSpace<S>) -> Result<Self> {
        if other.dims() != self.dims() {
            return Err(Error::shape("kspace add", format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(KSpace { height: self.height, width: self.width, data })
    }
}

/// Binary keep-mask over a spectrum; at least one entry is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
}

impl SamplingMask {
    pub fn new(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || keep.len() != height * width {
            return Err(Error::shape("mask", format!("{height}x{width} with {} flags", keep.len())));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::invalid("sampling mask keeps no k-space samples"));
        }
        Ok(SamplingMask { height, width, keep })
    }

    /// Keeps whole rows. Rows must be in range and unique.
    pub fn rows(height: usize, width: usize, rows: &[usize]) -> Result<Self> {
        let mut keep = vec![false; height * width];
        for &r in rows {
            if r >= height {
                return Err(Error::invalid(format!("row {r} out of range for height {height}")));
            }
            if keep[r * width] {
                return Err(Error::invalid(format!("row {r} selected twice")));
            }
            keep[r * width..(r + 1) * width].fill(true);
        }
        SamplingMask::new(height, width, keep)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn union(&self, other: &SamplingMask) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::shape("mask union", format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let keep = self.keep.iter().zip(&other.keep).map(|(a, b)| *a || *b).collect();
        SamplingMask::new(self.height, self.width, keep)
    }
}

fn fft_rows<S: Scalar>(data: &mut [Complex<S>], h: usize, w: usize, inverse: bool, planner: &mut FftPlanner<S>) {
    let fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in data.chunks_exact_mut(w).take(h) {
        fft.process(row);
    }
}

fn fft2<S: Scalar>(data: &mut [Complex<S>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    fft_rows(data, h, w, inverse, &mut planner);
    let mut col = vec![Complex::new(S::zero(), S::zero()); h];
    let fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

/// Cyclic shift moving index 0 to `shift` along both axes.
fn roll<S: Copy>(data: &[S], h: usize, w: usize, sy: usize, sx: usize) -> Vec<S> {
    let mut out = data.to_vec();
    for y in 0..h {
        for x in 0..w {
            out[((y + sy) % h) * w + (x + sx) % w] = data[y * w + x];
        }
    }
    out
}

/// Centered unitary 2-D DFT of a real image.
pub fn dft2<S: Scalar>(image: &Image<S>) -> Result<KSpace<S>> {
    let (h, w) = image.dims();
    if h < 2 || w < 2 {
        return Err(Error::shape("dft2", format!("image {h}x{w} is smaller than 2x2")));
    }
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dft2 input".into()));
    }
    let mut data: Vec<Complex<S>> = image.data().iter().map(|&v| Complex::new(v, S::zero())).collect();
    fft2(&mut data, h, w, false);
    let norm = S::of(1.0 / ((h * w) as f64).sqrt());
    let data: Vec<Complex<S>> = data.into_iter().map(|c| c * norm).collect();
    KSpace::new(h, w, roll(&data, h, w, h / 2, w / 2))
}

/// Inverse of [`dft2`], returning the complex image.
pub fn idft2_complex<S: Scalar>(k: &KSpace<S>) -> Vec<Complex<S>> {
    let (h, w) = k.dims();
    let mut data = roll(k.data(), h, w, h - h / 2, w - w / 2);
    fft2(&mut data, h, w, true);
    let norm = S::of(1.0 / ((h * w) as f64).sqrt());
    data.into_iter().map(|c| c * norm).collect()
}

/// Inverse transform keeping the real part. The imaginary residue is discarded.
pub fn idft2<S: Scalar>(k: &KSpace<S>) -> Image<S> {
    let (h, w) = k.dims();
    let data = idft2_complex(k).into_iter().map(|c| c.re).collect();
    Image::new(h, w, data).expect("dims preserved")
}

/// Inverse transform of a spectrum the caller asserts came from a real
/// image; fails when the imaginary residue exceeds
/// [`REAL_RESIDUE_TOLERANCE`].
pub fn idft2_real<S: Scalar>(k: &KSpace<S>) -> Result<Image<S>> {
    let (h, w) = k.dims();
    let complex = idft2_complex(k);
    let residue = complex.iter().map(|c| c.im.f64().abs()).fold(0.0, f64::max);
    if residue >= REAL_RESIDUE_TOLERANCE {
        return Err(Error::invalid(format!("imaginary residue {residue:.3e} for a spectrum of a real image")));
    }
    Image::new(h, w, complex.into_iter().map(|c| c.re).collect())
}

/// Keeps the listed rows, zeroing the rest.
pub fn select_lines<S: Scalar>(k: &KSpace<S>, rows: &[usize]) -> Result<KSpace<S>> {
    let mask = SamplingMask::rows(k.height(), k.width(), rows)?;
    k.apply_mask(&mask)
}

/// How rows of the mixed spectrum are distributed over the `2N+1` frames.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum RowAssignment {
    /// Contiguous equal-height blocks in frame order; remainder rows go to
    /// the last frame.
    #[default]
    Blocks,
    /// Explicit row -> frame map.
    Explicit(Vec<usize>),
}

impl RowAssignment {
    pub fn resolve(&self, height: usize, frames: usize) -> Result<Vec<usize>> {
        match self {
            RowAssignment::Blocks => {
                if frames == 0 || height < frames {
                    return Err(Error::invalid(format!("cannot split {height} rows over {frames} frames")));
                }
                let block = height / frames;
                Ok((0..height).map(|r| (r / block).min(frames - 1)).collect())
            }
            RowAssignment::Explicit(map) => Ok(map.clone()),
        }
    }
}

/// Assembles one spectrum whose row `r` comes from `frames[assignment[r]]`.
pub fn mix_kspace<S: Scalar>(frames: &[KSpace<S>], assignment: &[usize]) -> Result<KSpace<S>> {
    let first = frames.first().ok_or_else(|| Error::invalid("mix_kspace needs at least one frame"))?;
    let (h, w) = first.dims();
    if let Some(bad) = frames.iter().find(|k| k.dims() != (h, w)) {
        return Err(Error::shape("mix_kspace", format!("{:?} vs {:?}", bad.dims(), (h, w))));
    }
    if assignment.len() != h {
        return Err(Error::invalid(format!("assignment covers {} rows, spectrum has {h}", assignment.len())));
    }
    if let Some(&f) = assignment.iter().find(|&&f| f >= frames.len()) {
        return Err(Error::invalid(format!("assignment names frame {f} of {}", frames.len())));
    }
    let mut data = Vec::with_capacity(h * w);
    for (r, &f) in assignment.iter().enumerate() {
        data.extend_from_slice(frames[f].row(r));
    }
    KSpace::new(h, w, data)
}

/// Rows kept by [`lowpass_zero_pad`]: the central `ceil(fraction * H)` rows.
pub fn lowpass_rows(height: usize, keep_fraction: f64) -> Result<std::ops::Range<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let n = ((keep_fraction * height as f64) - 1e-9).ceil().max(1.0) as usize;
    let n = n.min(height);
    let start = height / 2 - n / 2;
    Ok(start..start + n)
}

/// Keeps the central rows around DC and zeroes the rest.
pub fn lowpass_zero_pad<S: Scalar>(k: &KSpace<S>, keep_fraction: f64) -> Result<KSpace<S>> {
    let rows: Vec<usize> = lowpass_rows(k.height(), keep_fraction)?.collect();
    select_lines(k, &rows)
}

/// Angles of spokes `first..first + n`, in degrees in `[0, 180)`.
pub fn golden_angles(first: usize, n: usize) -> Vec<f64> {
    let step = golden_angle_deg();
    (first..first + n).map(|s| (s as f64 * step).rem_euclid(180.0)).collect()
}

/// Union of diametric spokes through the array center. Each spoke marks the
/// nearest pixel at unit-radius steps along the full diameter.
pub fn golden_angle_mask_from(height: usize, width: usize, first: usize, n_spokes: usize) -> Result<SamplingMask> {
    if n_spokes == 0 {
        return Err(Error::invalid("n_spokes must be at least 1"));
    }
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let radius = height.max(width) as i64;
    let mut keep = vec![false; height * width];
    for deg in golden_angles(first, n_spokes) {
        let (s, c) = (deg * PI / 180.0).sin_cos();
        for t in -radius..=radius {
            let y = (cy - t as f64 * s).round();
            let x = (cx + t as f64 * c).round();
            if y >= 0.0 && x >= 0.0 && (y as usize) < height && (x as usize) < width {
                keep[y as usize * width + x as usize] = true;
            }
        }
    }
    SamplingMask::new(height, width, keep)
}

pub fn golden_angle_mask(height: usize, width: usize, n_spokes: usize) -> Result<SamplingMask> {
    golden_angle_mask_from(height, width, 0, n_spokes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegradeMode {
    /// Line mixing over `2N+1` adjacent frames followed by low-pass zero padding.
    CartesianMix,
    /// Golden-angle radial mask; spokes continue from frame to frame.
    Radial,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeParams {
    pub mode: DegradeMode,
    /// Mixing half-width `N`.
    pub n_mix: usize,
    pub keep_fraction: f64,
    pub n_spokes: usize,
    pub assignment: RowAssignment,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            mode: DegradeMode::CartesianMix,
            n_mix: 7,
            keep_fraction: 0.25,
            n_spokes: 32,
            assignment: RowAssignment::Blocks,
        }
    }
}

/// Simulated fast-scan acquisition of a whole cine sequence. Output frames
/// are clipped to `[0, 1]`.
pub fn degrade_sequence<S: Scalar>(seq: &CineSequence<S>, params: &DegradeParams) -> Result<CineSequence<S>> {
    let t = seq.len();
    let spectra = seq.frames().iter().map(dft2).collect::<Result<Vec<_>>>()?;
    let clip = |img: Image<S>| img.map(|v| v.max(S::zero()).min(S::one()));
    let frames = match params.mode {
        DegradeMode::CartesianMix => {
            let n = params.n_mix;
            if t < 2 * n + 1 {
                return Err(Error::invalid(format!("{t} frames cannot supply a {}-frame mixing window", 2 * n + 1)));
            }
            let assignment = params.assignment.resolve(seq.height(), 2 * n + 1)?;
            (0..t)
                .map(|l| {
                    let window: Vec<KSpace<S>> = (0..=2 * n)
                        .map(|i| spectra[(l + i).saturating_sub(n).min(t - 1)].clone())
                        .collect();
                    let mixed = mix_kspace(&window, &assignment)?;
                    let low = lowpass_zero_pad(&mixed, params.keep_fraction)?;
                    Ok(clip(idft2(&low)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        DegradeMode::Radial => spectra
            .iter()
            .enumerate()
            .map(|(l, k)| {
                let mask = golden_angle_mask_from(k.height(), k.width(), l * params.n_spokes, params.n_spokes)?;
                Ok(clip(idft2(&k.apply_mask(&mask)?)))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    CineSequence::new(frames, seq.pixel_spacing)
}
