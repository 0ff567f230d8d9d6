use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single real-valued frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape("image", format!("{height}x{width} with {} values", data.len())));
        }
        Ok(Image { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, S::zero())
    }

    pub fn filled(height: usize, width: usize, v: S) -> Self {
        Image { height, width, data: vec![v; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image { height, width, data }
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> S {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: S) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|v| T::of(v.f64())).collect() }
    }

    /// Sum of squares, accumulated in 64-bit.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.f64().powi(2)).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Image<S>) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| (a.f64() - b.f64()).abs()).fold(0.0, f64::max)
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone()).expect("valid dims")
    }

    /// Frame `n` of an `[N, 1, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<S>, n: usize) -> Result<Self> {
        let [bn, c, h, w] = match t.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(Error::shape("image", format!("expected [N, 1, H, W], got {s:?}"))),
        };
        if c != 1 || n >= bn {
            return Err(Error::shape("image", format!("frame {n} of {:?}", t.shape())));
        }
        Image::new(h, w, t.data()[n * h * w..(n + 1) * h * w].to_vec())
    }
}

/// Stacks frames into an `[N, 1, H, W]` tensor.
pub fn stack<S: Scalar>(frames: &[&Image<S>]) -> Result<Tensor<S>> {
    let first = frames.first().ok_or_else(|| Error::shape("stack", "no frames"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        if f.dims() != (h, w) {
            return Err(Error::shape("stack", format!("{:?} vs {:?}", f.dims(), (h, w))));
        }
        data.extend_from_slice(f.data());
    }
    Tensor::new(vec![frames.len(), 1, h, w], data)
}

/// `T` frames of equal size plus informational pixel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct CineSequence<S> {
    frames: Vec<Image<S>>,
    pub pixel_spacing: f32,
}

impl<S: Scalar> CineSequence<S> {
    pub fn new(frames: Vec<Image<S>>, pixel_spacing: f32) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::invalid("a cine sequence needs at least one frame"))?;
        let dims = first.dims();
        if let Some(bad) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::shape("cine", format!("frame {bad} is {:?}, expected {dims:?}", frames[bad].dims())));
        }
        Ok(CineSequence { frames, pixel_spacing })
    }

    pub fn frames(&self) -> &[Image<S>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Image<S> {
        &self.frames[t]
    }

    /// Applies `f` to every frame, keeping the pixel spacing.
    pub fn map_frames(&self, f: impl FnMut(&Image<S>) -> Image<S>) -> Result<Self> {
        Self::new(self.frames.iter().map(f).collect(), self.pixel_spacing)
    }

    pub fn into_frames(self) -> Vec<Image<S>> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn cast<T: Scalar>(&self) -> CineSequence<T> {
        CineSequence { frames: self.frames.iter().map(Image::cast).collect(), pixel_spacing: self.pixel_spacing }
    }

    /// Contiguous frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::invalid(format!("window [{start}, {}) of a {}-frame sequence", start + len, self.len())));
        }
        CineSequence::new(self.frames[start..start + len].to_vec(), self.pixel_spacing)
    }
}
