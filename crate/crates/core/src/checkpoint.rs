//! Checkpoint persistence.
//!
//! All integers and floats little-endian. Tensors are stored as 32-bit
//! floats, statistics as 64-bit.
//!
//! ```text
//! b"LSERCKPT" | u32 version | u64 body length
//! body:
//!   str config (key = value text) | u64 input width
//!   u32 count × (str name | tensor)            parameters then buffers
//!   f64 lr, β₁, β₂, ε | u64 step | u32 count × (tensor m | tensor n)
//!   u32 d | d × f64 mean | d × f64 std | u32 k | k × u32 dropped
//!   3 × f64 label mean | 3 × f64 label std
//!   u64 epoch | u8 attribute | f64 ccc | 3 × (u8 present | f64 ccc)
//! 32-byte SHA-256 of header and body
//!
//! str    = u32 byte length | UTF-8 bytes
//! tensor = u32 rank | rank × u64 dims | product(dims) × f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::ladder::Attribute;
use crate::network::Network;
use crate::numerics::{RngStream, Tensor};
use crate::optimizer::{NadamConfig, NadamState};
use crate::params::Parameterized;

const MAGIC: &[u8; 8] = b"LSERCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

/// Dev-set score of the retained epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevRecord {
    /// 0 is the initialized model.
    pub epoch: usize,
    pub attribute: Attribute,
    pub ccc: f64,
    /// Dev CCC of every attribute the model predicts, at the same epoch.
    pub per_attribute: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub input_dim: usize,
    /// Parameters then buffers, in visit order.
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optimizer: NadamState<f32>,
    pub norm: NormStats,
    pub best_dev: DevRecord,
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        input_dim: usize,
        network: &Network,
        optimizer: &NadamState<f32>,
        norm: &NormStats,
        best_dev: DevRecord,
    ) -> Self {
        Self {
            config: config.clone(),
            input_dim,
            tensors: network.named_state(),
            optimizer: optimizer.clone(),
            norm: norm.clone(),
            best_dev,
        }
    }

    /// Rebuilds the network and loads every stored tensor into it.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::build(&self.config, self.input_dim, &mut RngStream::new(0))?;
        let mut table: HashMap<&str, &Tensor<f32>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if table.len() != self.tensors.len() {
            return Err(Error::Format("duplicate tensor names".into()));
        }
        let mut problem = None;
        let mut take = |name: &str, dst: &mut Tensor<f32>| match table.remove(name) {
            Some(src) if src.shape() == dst.shape() => dst.data_mut().copy_from_slice(src.data()),
            Some(src) => {
                problem.get_or_insert(format!("tensor '{name}' has shape {:?}, model expects {:?}", src.shape(), dst.shape()));
            }
            None => {
                problem.get_or_insert(format!("tensor '{name}' missing"));
            }
        };
        net.visit_params_mut("", &mut |name, p| take(name, &mut p.value));
        net.visit_buffers_mut("", &mut |name, t| take(name, t));
        if let Some(p) = problem {
            return Err(Error::Format(p));
        }
        if let Some(extra) = table.keys().next() {
            return Err(Error::Format(format!("tensor '{extra}' does not belong to the model")));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.str(&self.config.to_text());
        w.u64(self.input_dim as u64);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.tensor(t);
        }
        let c = self.optimizer.config;
        for v in [c.lr, c.beta1, c.beta2, c.epsilon] {
            w.f64(v);
        }
        w.u64(self.optimizer.step);
        w.u32(self.optimizer.moments.len() as u32);
        for (m, n) in &self.optimizer.moments {
            w.tensor(m);
            w.tensor(n);
        }
        let s = &self.norm;
        w.u32(s.feature_mean.len() as u32);
        s.feature_mean.iter().chain(&s.feature_std).for_each(|&v| w.f64(v));
        w.u32(s.dropped.len() as u32);
        s.dropped.iter().for_each(|&j| w.u32(j as u32));
        s.label_mean.iter().chain(&s.label_std).for_each(|&v| w.f64(v));
        let d = &self.best_dev;
        w.u64(d.epoch as u64);
        w.u8(d.attribute.index() as u8);
        w.f64(d.ccc);
        for v in d.per_attribute {
            w.u8(v.is_some() as u8);
            w.f64(v.unwrap_or(0.0));
        }

        let body = w.0;
        let mut out = Vec::with_capacity(HEADER + body.len() + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                return Err(Error::Format("not a checkpoint file".into()));
            }
            return Err(Error::Truncated(format!("{} bytes, header alone is {HEADER}", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let expected = (HEADER as u64).saturating_add(body_len).saturating_add(DIGEST as u64);
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated(format!("{} of {expected} bytes", bytes.len())));
        }
        if bytes.len() as u64 > expected {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() as u64 - expected)));
        }
        let end = bytes.len() - DIGEST;
        if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
            return Err(Error::DigestMismatch);
        }

        let mut r = Reader { buf: &bytes[HEADER..end] };
        let config = RunConfig::parse(&r.str()?)?;
        let input_dim = r.u64()? as usize;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.str()?;
            tensors.push((name, r.tensor()?));
        }
        let oc = NadamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut moments = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            moments.push((r.tensor()?, r.tensor()?));
        }
        let d = r.u32()? as usize;
        let feature_mean = r.f64s(d)?;
        let feature_std = r.f64s(d)?;
        let k = r.u32()? as usize;
        let dropped = (0..k).map(|_| r.u32().map(|j| j as usize)).collect::<Result<_>>()?;
        let label_mean = r.f64s(3)?.try_into().expect("3 values");
        let label_std = r.f64s(3)?.try_into().expect("3 values");
        let epoch = r.u64()? as usize;
        let attribute = *Attribute::ALL
            .get(r.u8()? as usize)
            .ok_or_else(|| Error::Format("attribute index out of range".into()))?;
        let ccc = r.f64()?;
        let mut per_attribute = [None; 3];
        for v in &mut per_attribute {
            let present = r.u8()? != 0;
            let x = r.f64()?;
            *v = present.then_some(x);
        }
        if !r.buf.is_empty() {
            return Err(Error::Format(format!("{} unread body bytes", r.buf.len())));
        }
        Ok(Self {
            config,
            input_dim,
            tensors,
            optimizer: NadamState {
                config: oc,
                step,
                moments,
            },
            norm: NormStats {
                feature_mean,
                feature_std,
                dropped,
                label_mean,
                label_std,
            },
            best_dev: DevRecord {
                epoch,
                attribute,
                ccc,
                per_attribute,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.shape().len() as u32);
        t.shape().iter().for_each(|&d| self.u64(d as u64));
        t.data().iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format(format!("record needs {n} bytes, {} left", self.buf.len())));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor shape {shape:?} overflows")))?;
        let data = self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}
