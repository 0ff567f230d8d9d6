//! Central finite-difference verification of analytic gradients.
//!
//! The numerical side only evaluates forward passes, so it is independent
//! of the backward rules it checks.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error per input.
    pub tolerance: f64,
    /// Probe at most this many evenly spaced entries per input.
    pub max_probes: usize,
    /// Judge all probed entries as one vector instead of input by input.
    /// Suits whole models, where some tensors carry gradients below the
    /// resolution of finite differences.
    pub pooled: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-3, tolerance: 1e-3, max_probes: usize::MAX, pooled: false }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub probes: usize,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    /// Relative error of all probed entries taken together.
    pub fn pooled_rel_err(&self) -> f64 {
        let sq = |f: fn(&InputReport) -> f64| self.inputs.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt();
        let scale = sq(|r| r.analytic_norm).max(sq(|r| r.numeric_norm)).max(1e-12);
        sq(|r| r.abs_err) / scale
    }
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let stride = len as f64 / max as f64;
    (0..max).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).sum())
}

impl GradCheck {
    /// Compares backward gradients of the scalar `f(inputs)` against central
    /// differences for every input. Fails with the report when any input
    /// exceeds the tolerance.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;

        let mut reports = Vec::with_capacity(inputs.len());
        let mut probe = inputs.to_vec();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).expect("leaf gradient");
            let idx = probe_indices(inputs[i].len(), self.max_probes);
            let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
            for &j in &idx {
                let orig = inputs[i].data()[j];
                probe[i].data_mut()[j] = orig + self.step;
                let up = eval(&f, &probe)?;
                probe[i].data_mut()[j] = orig - self.step;
                let down = eval(&f, &probe)?;
                probe[i].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * self.step);
                let a = analytic.data()[j];
                diff += (a - numeric).powi(2);
                norm_a += a * a;
                norm_n += numeric * numeric;
            }
            let scale = norm_a.sqrt().max(norm_n.sqrt()).max(1e-12);
            reports.push(InputReport {
                probes: idx.len(),
                rel_err: diff.sqrt() / scale,
                analytic_norm: norm_a.sqrt(),
                numeric_norm: norm_n.sqrt(),
                abs_err: diff.sqrt(),
            });
        }
        let report = GradReport { inputs: reports };
        let err = if self.pooled { report.pooled_rel_err() } else { report.max_rel_err() };
        if err >= self.tolerance {
            return Err(Error::InvalidArgument(format!(
                "gradient check failed: relative error {:.3e} (tolerance {:.1e}); {:?}",
                err,
                self.tolerance,
                report.inputs
            )));
        }
        Ok(report)
    }
}
