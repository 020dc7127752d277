//! `CCKP` checkpoint: header, named-tensor index, then f64 data.
//!
//! Header (little-endian): magic `CCKP`, u16 version, u16 reserved,
//! u32 tensor count, u64 epoch, u64 seed, five u32 model dims
//! (base, bottleneck, in, classes, kernel). Each index entry is a u16 name
//! length, the UTF-8 name, five u32 dims and a u64 byte offset into the
//! data block.

use std::path::Path;

use super::model::{NamedTensor, UNetConfig, UNetParams};
use super::optim::Adam;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CCKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: UNetParams,
    pub optimizer: Adam,
    pub epoch: u64,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const ADAM_STEP: &str = "adam.step";

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut named: Vec<(String, &Tensor)> = Vec::new();
        for t in &self.params.tensors {
            named.push((t.name.clone(), &t.tensor));
        }
        for (t, m) in self.params.tensors.iter().zip(&self.optimizer.m) {
            named.push((format!("{ADAM_M}{}", t.name), m));
        }
        for (t, v) in self.params.tensors.iter().zip(&self.optimizer.v) {
            named.push((format!("{ADAM_V}{}", t.name), v));
        }
        let step = Tensor::scalar(self.optimizer.step as f64);
        named.push((ADAM_STEP.to_string(), &step));

        let c = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.params.seed.to_le_bytes());
        for d in [c.base_channels, c.bottleneck_channels, c.in_channels, c.classes, c.kernel] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut offset = 0u64;
        for (name, t) in &named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.len() as u64;
        }
        for (_, t) in &named {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::VersionMismatch { expected: VERSION, found: version });
        }
        r.u16()?;
        let count = r.u32()? as usize;
        let epoch = r.u64()?;
        let seed = r.u64()?;
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let config = UNetConfig {
            base_channels: dims[0],
            bottleneck_channels: dims[1],
            in_channels: dims[2],
            classes: dims[3],
            kernel: dims[4],
        };
        config.validate().map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
        let mut index = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut shape = [0usize; 5];
            for s in shape.iter_mut() {
                *s = r.u32()? as usize;
            }
            let offset = r.u64()?;
            index.push((name, shape, offset));
        }
        let data_start = r.pos as u64;
        let mut tensors = std::collections::HashMap::new();
        for (name, shape, offset) in index {
            let n = shape
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d as u64))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::DimsOverflow { dims: shape.iter().map(|&d| d as u64).collect() })?;
            let start = data_start + offset;
            let end = start.checked_add(n).ok_or(Error::DimsOverflow { dims: vec![offset, n] })?;
            if end > bytes.len() as u64 {
                return Err(Error::Truncated { expected: end, found: bytes.len() as u64 });
            }
            let data = bytes[start as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        let mut take = |name: &str, shape: [usize; 5]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t)
        };
        let layout = config.layout();
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, shape, _) in &layout {
            params.push(NamedTensor { name: name.clone(), tensor: take(name, *shape)? });
        }
        for (name, shape, _) in &layout {
            m.push(take(&format!("{ADAM_M}{name}"), *shape)?);
        }
        for (name, shape, _) in &layout {
            v.push(take(&format!("{ADAM_V}{name}"), *shape)?);
        }
        let step = take(ADAM_STEP, [1; 5])?.data[0] as u64;
        let mut optimizer = Adam::new(params.iter().map(|p| &p.tensor));
        optimizer.m = m;
        optimizer.v = v;
        optimizer.step = step;
        Ok(Self {
            params: UNetParams { config, tensors: params, seed },
            optimizer,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated { expected: end as u64, found: self.bytes.len() as u64 });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
