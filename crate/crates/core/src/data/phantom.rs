use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};

/// Beating-heart phantom: a blood pool inside a myocardial ring of constant
/// wall thickness, on a uniform background. The blood-pool semi-axes scale
/// by `1 + amplitude * sin(2 pi t / period)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Outer (epicardial) semi-axes at rest, `(vertical, horizontal)` pixels.
    pub outer_axes: (f64, f64),
    pub wall: f64,
    pub amplitude: f64,
    pub period: usize,
    pub blood: f64,
    pub myocardium: f64,
    pub background: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub pixel_spacing: f32,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            height: 32,
            width: 32,
            frames: 8,
            outer_axes: (10.0, 9.0),
            wall: 3.0,
            amplitude: 0.3,
            period: 8,
            blood: 0.9,
            myocardium: 0.45,
            background: 0.1,
            noise_sigma: 0.0,
            seed: 0,
            pixel_spacing: 1.5,
        }
    }
}

impl PhantomParams {
    pub fn center(&self) -> (f64, f64) {
        ((self.height as f64 - 1.0) / 2.0, (self.width as f64 - 1.0) / 2.0)
    }

    /// Blood-pool semi-axes at frame `t`.
    pub fn inner_axes(&self, t: usize) -> (f64, f64) {
        let phase = 2.0 * PI * (t % self.period) as f64 / self.period as f64;
        let s = 1.0 + self.amplitude * phase.sin();
        ((self.outer_axes.0 - self.wall) * s, (self.outer_axes.1 - self.wall) * s)
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..0.5).contains(&self.amplitude) {
            return Err(Error::invalid(format!("amplitude {} outside [0, 0.5)", self.amplitude)));
        }
        if self.period < 2 || self.frames == 0 {
            return Err(Error::invalid("period must be >= 2 and frames >= 1"));
        }
        if !(in_unit(self.blood) && in_unit(self.myocardium) && in_unit(self.background)) {
            return Err(Error::invalid("intensities must lie in [0, 1]"));
        }
        if self.noise_sigma < 0.0 || self.wall <= 0.0 {
            return Err(Error::invalid("noise sigma must be >= 0 and wall > 0"));
        }
        let (ay, ax) = self.outer_axes;
        if ay <= self.wall || ax <= self.wall {
            return Err(Error::invalid("outer semi-axes must exceed the wall thickness"));
        }
        let max_y = (ay - self.wall) * (1.0 + self.amplitude) + self.wall;
        let max_x = (ax - self.wall) * (1.0 + self.amplitude) + self.wall;
        if 2.0 * max_y + 2.0 > self.height as f64 || 2.0 * max_x + 2.0 > self.width as f64 {
            return Err(Error::invalid(format!(
                "{}x{} image cannot contain ellipses of semi-axes up to ({max_y:.1}, {max_x:.1})",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

fn inside(dy: f64, dx: f64, (ay, ax): (f64, f64)) -> bool {
    (dy / ay).powi(2) + (dx / ax).powi(2) <= 1.0
}

/// Renders the phantom sequence; bit-deterministic for fixed parameters.
pub fn phantom_generate(p: &PhantomParams) -> Result<CineSequence<f32>> {
    p.validate()?;
    let (cy, cx) = p.center();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let frames = (0..p.frames)
        .map(|t| {
            let inner = p.inner_axes(t);
            let outer = (inner.0 + p.wall, inner.1 + p.wall);
            Image::from_fn(p.height, p.width, |y, x| {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let mut v = if inside(dy, dx, inner) {
                    p.blood
                } else if inside(dy, dx, outer) {
                    p.myocardium
                } else {
                    p.background
                };
                if p.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                v.clamp(0.0, 1.0) as f32
            })
        })
        .collect();
    CineSequence::new(frames, p.pixel_spacing)
}
