use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};
use crate::scalar::Scalar;

/// Side length of the square erased for self-supervised inpainting.
pub const ERASE_SIZE: usize = 15;

/// Central `crop x crop` patch of every frame, min-max normalized over the
/// whole sequence. Constant sequences map to 0.
pub fn normalize_crop<S: Scalar>(seq: &CineSequence<S>, crop: usize) -> Result<CineSequence<S>> {
    let (h, w) = (seq.height(), seq.width());
    if crop == 0 || crop > h.min(w) {
        return Err(Error::invalid(format!("crop {crop} does not fit {h}x{w} frames")));
    }
    let (oy, ox) = ((h - crop) / 2, (w - crop) / 2);
    let cropped: Vec<Image<S>> =
        seq.frames().iter().map(|f| Image::from_fn(crop, crop, |y, x| f.get(y + oy, x + ox))).collect();
    let (lo, hi) = cropped
        .iter()
        .flat_map(|f| f.data().iter().copied())
        .fold((S::infinity(), S::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let frames = cropped
        .into_iter()
        .map(|f| f.map(|v| if range > S::zero() { ((v - lo) / range).max(S::zero()).min(S::one()) } else { S::zero() }))
        .collect();
    CineSequence::new(frames, seq.pixel_spacing)
}

/// Location of an erased square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ErasedRegion {
    /// Top-left corner `(y, x)`.
    pub origin: (usize, usize),
    pub size: usize,
}

impl ErasedRegion {
    /// Square of side `size` centered at `(cy, cx)`, checked against `dims`.
    pub fn centered(cy: usize, cx: usize, size: usize, dims: (usize, usize)) -> Result<Self> {
        let half = size / 2;
        if size == 0 || cy < half || cx < half || cy - half + size > dims.0 || cx - half + size > dims.1 {
            return Err(Error::invalid(format!(
                "{size}x{size} box centered at ({cy}, {cx}) leaves the {}x{} image",
                dims.0, dims.1
            )));
        }
        Ok(ErasedRegion { origin: (cy - half, cx - half), size })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (oy, ox) = self.origin;
        y >= oy && y < oy + self.size && x >= ox && x < ox + self.size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErasePolicy {
    /// Box centered on the image center.
    #[default]
    Center,
    /// Uniform in-bounds center drawn from the training RNG.
    Random,
}

impl ErasePolicy {
    pub fn region(self, dims: (usize, usize), size: usize, rng: &mut impl Rng) -> Result<ErasedRegion> {
        let half = size / 2;
        match self {
            ErasePolicy::Center => ErasedRegion::centered(dims.0 / 2, dims.1 / 2, size, dims),
            ErasePolicy::Random => {
                if size > dims.0 || size > dims.1 {
                    return Err(Error::invalid(format!("{size}x{size} box does not fit {dims:?}")));
                }
                let cy = rng.random_range(half..=dims.0 - size + half);
                let cx = rng.random_range(half..=dims.1 - size + half);
                ErasedRegion::centered(cy, cx, size, dims)
            }
        }
    }
}

/// Zeroes the `size x size` box centered at `(cy, cx)`; returns the erased
/// copy, the removed patch and the box location.
pub fn erase_region<S: Scalar>(img: &Image<S>, cy: usize, cx: usize, size: usize) -> Result<(Image<S>, Image<S>, ErasedRegion)> {
    let region = ErasedRegion::centered(cy, cx, size, img.dims())?;
    let (oy, ox) = region.origin;
    let patch = Image::from_fn(size, size, |y, x| img.get(oy + y, ox + x));
    let mut erased = img.clone();
    for y in 0..size {
        for x in 0..size {
            erased.set(oy + y, ox + x, S::zero());
        }
    }
    Ok((erased, patch, region))
}

/// Writes `patch` into a copy of `img` at `region`.
pub fn paste<S: Scalar>(img: &Image<S>, patch: &Image<S>, region: ErasedRegion) -> Result<Image<S>> {
    let (oy, ox) = region.origin;
    if patch.dims() != (region.size, region.size) || oy + region.size > img.height() || ox + region.size > img.width() {
        return Err(Error::shape("paste", format!("{:?} patch at {:?} into {:?}", patch.dims(), region.origin, img.dims())));
    }
    let mut out = img.clone();
    for y in 0..region.size {
        for x in 0..region.size {
            out.set(oy + y, ox + x, patch.get(y, x));
        }
    }
    Ok(out)
}
