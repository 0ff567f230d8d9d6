//! Full-reference image quality: SSIM, PSNR and per-sequence reports.

use crate::error::{Error, Result};
use crate::image::{CineSequence, Image};
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn check_dims<S: Scalar>(op: &'static str, a: &Image<S>, b: &Image<S>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape { op, detail: format!("{:?} vs {:?}", a.dims(), b.dims()) });
    }
    Ok(())
}

/// Separable Gaussian filtering over every position where the window fits.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all window positions for images with dynamic range 1.
/// Images smaller than the window use one window clipped to the image.
pub fn ssim<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    check_dims("ssim", a, b)?;
    let (h, w) = a.dims();
    let x: Vec<f64> = a.data().iter().map(|v| v.f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.f64()).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (xx, yy, xy) = (prod(&x, &x), prod(&y, &y), prod(&x, &y));
    let (mx, my, sxx, syy, sxy) = if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        let taps = gaussian_taps();
        let f = |d: &[f64]| filter_valid(d, h, w, &taps);
        (f(&x), f(&y), f(&xx), f(&yy), f(&xy))
    } else {
        let m = |d: &[f64]| vec![d.iter().sum::<f64>() / d.len() as f64];
        (m(&x), m(&y), m(&xx), m(&yy), m(&xy))
    };
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// PSNR in dB for dynamic range 1; `None` when the images are identical.
pub fn psnr<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<Option<f64>> {
    check_dims("psnr", a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(u, v)| (u.f64() - v.f64()).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok((mse > 0.0).then(|| 10.0 * (1.0 / mse).log10()))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Summary { mean: f64::NAN, sd: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, sd: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub ssim: Vec<f64>,
    /// Per-frame PSNR; `None` marks an identical frame pair.
    pub psnr: Vec<Option<f64>>,
    pub ssim_summary: Summary,
    /// Over finite frames only; infinite when every frame is identical.
    pub psnr_summary: Summary,
}

impl MetricReport {
    pub fn from_frames(ssim: Vec<f64>, psnr: Vec<Option<f64>>) -> Self {
        let finite: Vec<f64> = psnr.iter().flatten().copied().collect();
        let psnr_summary = if finite.is_empty() && !psnr.is_empty() {
            Summary { mean: f64::INFINITY, sd: 0.0 }
        } else {
            Summary::of(&finite)
        };
        MetricReport { ssim_summary: Summary::of(&ssim), ssim, psnr, psnr_summary }
    }

    /// CSV with one row per frame followed by `mean` and `sd` rows. Identical
    /// frames print `inf` as their PSNR.
    pub fn to_csv(&self) -> String {
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") };
        let mut s = String::from("frame,ssim,psnr\n");
        for (i, (a, b)) in self.ssim.iter().zip(&self.psnr).enumerate() {
            s.push_str(&format!("{i},{},{}\n", fmt(*a), fmt(b.unwrap_or(f64::INFINITY))));
        }
        s.push_str(&format!("mean,{},{}\n", fmt(self.ssim_summary.mean), fmt(self.psnr_summary.mean)));
        s.push_str(&format!("sd,{},{}\n", fmt(self.ssim_summary.sd), fmt(self.psnr_summary.sd)));
        s
    }
}

/// Per-frame SSIM and PSNR of `test` against `clean`.
pub fn evaluate<S: Scalar>(clean: &CineSequence<S>, test: &CineSequence<S>) -> Result<MetricReport> {
    if clean.len() != test.len() {
        return Err(Error::invalid(format!("{} clean frames vs {} test frames", clean.len(), test.len())));
    }
    let mut s = Vec::with_capacity(clean.len());
    let mut p = Vec::with_capacity(clean.len());
    for (a, b) in clean.frames().iter().zip(test.frames()) {
        s.push(ssim(a, b)?);
        p.push(psnr(a, b)?);
    }
    Ok(MetricReport::from_frames(s, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalised_and_symmetric() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn population_sd() {
        let s = Summary::of(&[20.0, 30.0]);
        assert_eq!((s.mean, s.sd), (25.0, 5.0));
    }
}
