//! Named-tensor checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CKPT" | version u16 | config hash u64 | step u64 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | ndim u8 | dims u32 x ndim | f32 payload
//! ```
//!
//! Optimizer moments are ordinary tensors named `adam.<group>.m.<param>`,
//! `adam.<group>.v.<param>` plus a one-element step counter `adam.<group>.t`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tensor};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u16 = 1;
pub const CKPT_HEADER_LEN: usize = 4 + 2 + 8 + 8 + 4;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub step: u64,
    pub tensors: ParamStore<f32>,
}

fn adam_name(group: &str, kind: &str, param: &str) -> String {
    format!("adam.{group}.{kind}.{param}")
}

impl Checkpoint {
    pub fn new(config_hash: u64, step: u64) -> Self {
        Checkpoint { config_hash, step, tensors: ParamStore::new() }
    }

    pub fn add_params<S: Scalar>(&mut self, store: &ParamStore<S>) -> Result<()> {
        for (name, t) in store.iter() {
            self.tensors.insert(name, t.cast())?;
        }
        Ok(())
    }

    pub fn add_adam<S: Scalar>(&mut self, group: &str, store: &ParamStore<S>, adam: &AdamState<S>) -> Result<()> {
        for (i, (name, _)) in store.iter().enumerate() {
            self.tensors.insert(adam_name(group, "m", name), adam.m[i].cast())?;
            self.tensors.insert(adam_name(group, "v", name), adam.v[i].cast())?;
        }
        self.tensors.insert(format!("adam.{group}.t"), Tensor::scalar(adam.t as f32))?;
        Ok(())
    }

    fn take<S: Scalar>(&self, name: &str, shape: &[usize], problems: &mut Vec<String>) -> Option<Tensor<S>> {
        match self.tensors.by_name(name) {
            None => {
                problems.push(format!("missing tensor {name}"));
                None
            }
            Some(t) if t.shape() != shape => {
                problems.push(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape()));
                None
            }
            Some(t) => Some(t.cast()),
        }
    }

    /// Overwrites every tensor of `store` with its checkpointed value. Fails
    /// without modifying `store` if any tensor is missing or mis-shaped,
    /// listing all offenders.
    pub fn restore_params<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let mut problems = Vec::new();
        let loaded: Vec<Option<Tensor<S>>> = store.iter().map(|(n, t)| self.take(n, t.shape(), &mut problems)).collect();
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems));
        }
        for ((_, t), l) in store.iter_mut().zip(loaded) {
            *t = l.expect("checked");
        }
        Ok(())
    }

    /// Optimizer state saved for `group`, matched against `store`.
    pub fn restore_adam<S: Scalar>(&self, group: &str, store: &ParamStore<S>, config: AdamConfig) -> Result<AdamState<S>> {
        let mut problems = Vec::new();
        let mut adam = AdamState::new(store, config);
        for (i, (name, t)) in store.iter().enumerate() {
            if let Some(m) = self.take(&adam_name(group, "m", name), t.shape(), &mut problems) {
                adam.m[i] = m;
            }
            if let Some(v) = self.take(&adam_name(group, "v", name), t.shape(), &mut problems) {
                adam.v[i] = v;
            }
        }
        if let Some(t) = self.take::<f64>(&format!("adam.{group}.t"), &[1], &mut problems) {
            adam.t = t.item() as u64;
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems));
        }
        Ok(adam)
    }

    /// Logs a warning when the checkpoint was written under another config.
    pub fn check_config_hash(&self, expected: u64) -> bool {
        let same = self.config_hash == expected;
        if !same {
            log::warn!("checkpoint config hash {:016x} differs from current config {:016x}", self.config_hash, expected);
        }
        same
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(CKPT_HEADER_LEN + 4 * self.tensors.num_scalars());
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config_hash.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
            let ndim = u8::try_from(t.shape().len()).map_err(|_| Error::invalid(format!("too many dims for {name}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(ndim);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension too large in {name}")))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if bytes.len() < 4 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::BadMagic { path: path.to_path_buf(), expected: "CKPT" });
        }
        r.at = 4;
        let version = u16::from_le_bytes(r.array()?);
        if version != CKPT_VERSION {
            return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: CKPT_VERSION });
        }
        let config_hash = u64::from_le_bytes(r.array()?);
        let step = u64::from_le_bytes(r.array()?);
        let count = u32::from_le_bytes(r.array()?);
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Malformed { path: path.to_path_buf(), detail: "tensor name is not UTF-8".into() })?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Malformed { path: path.to_path_buf(), detail: format!("tensor {name}: {e}") })?;
            tensors
                .insert(name, t)
                .map_err(|e| Error::Malformed { path: path.to_path_buf(), detail: e.to_string() })?;
        }
        if r.at != bytes.len() {
            return Err(Error::Malformed { path: path.to_path_buf(), detail: format!("{} trailing bytes", bytes.len() - r.at) });
        }
        Ok(Checkpoint { config_hash, step, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated { path: self.path.to_path_buf(), needed: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

/// 64-bit FNV-1a, stable across builds and platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
