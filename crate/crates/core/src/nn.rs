//! Parameterized layers that register their tensors in a [`ParamStore`].

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Bound, Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Same-padded stride-1 convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Conv {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, ci: usize, co: usize, k: usize) -> Result<Self> {
        let (w, b) = init.conv(co, ci, k);
        Self::register(store, name, w, b, k)
    }

    pub(crate) fn register<S: Scalar>(store: &mut ParamStore<S>, name: &str, w: Tensor<S>, b: Tensor<S>, k: usize) -> Result<Self> {
        Ok(Conv { w: store.insert(format!("{name}.w"), w)?, b: store.insert(format!("{name}.b"), b)?, k })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.w], Some(p[self.b]), 1, self.k / 2)
    }

    pub fn relu<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        Ok(g.relu(y))
    }
}

/// Same-sized stride-1 transposed convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Deconv {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, ci: usize, co: usize, k: usize) -> Result<Self> {
        let (w, b) = init.deconv(ci, co, k);
        Ok(Deconv { w: store.insert(format!("{name}.w"), w)?, b: store.insert(format!("{name}.b"), b)?, k })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2d(x, p[self.w], Some(p[self.b]), 1, self.k / 2)
    }
}

/// Fully connected layer, `[N, D] -> [N, M]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, d: usize, m: usize) -> Result<Self> {
        let (w, b) = init.dense(d, m);
        Ok(Dense { w: store.insert(format!("{name}.w"), w)?, b: store.insert(format!("{name}.b"), b)? })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        g.dense(x, p[self.w], p[self.b])
    }
}
