//! Binary checkpoint container.
//!
//! Layout: the 6 magic bytes `MRGR1\0`, a little-endian `u32` header length,
//! a UTF-8 JSON header listing tensor names, shapes, element width and free
//! metadata, then every tensor's data as little-endian floats in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::optim::{MomentSlot, Optimizer, OptimizerKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"MRGR1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Compact storage; lossy for `f64` training values.
    #[default]
    F32,
    /// Lossless storage, used when training must resume bit-exactly.
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: Precision,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

fn ckpt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DiffError::Checkpoint(msg.into()))
}

impl Checkpoint {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            tensors: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensor `name`, which must have exactly `shape`.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        match self.get(name) {
            None => ckpt_err(format!("missing tensor `{name}` (expected shape {shape:?})")),
            Some(t) if t.shape() != shape => ckpt_err(format!(
                "tensor `{name}`: expected shape {shape:?}, found {:?}",
                t.shape()
            )),
            Some(t) => Ok(t),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            dtype: self.precision,
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let text = serde_json::to_vec(&header).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        let len = u32::try_from(text.len()).map_err(|_| DiffError::Checkpoint("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&text)?;
        for (_, t) in &self.tensors {
            match self.precision {
                Precision::F32 => {
                    for &x in t.data() {
                        w.write_all(&(x as f32).to_le_bytes())?;
                    }
                }
                Precision::F64 => {
                    for &x in t.data() {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .or_else(|_| ckpt_err("file too short for magic bytes"))?;
        if &magic != MAGIC {
            return ckpt_err(format!("bad magic bytes {magic:?}"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).or_else(|_| ckpt_err("truncated header length"))?;
        let len = u32::from_le_bytes(len) as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text).or_else(|_| ckpt_err("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&text).map_err(|e| DiffError::Checkpoint(format!("header: {e}")))?;
        let width = header.dtype.width();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; n * width];
            r.read_exact(&mut buf)
                .or_else(|_| ckpt_err(format!("truncated data for tensor `{}`", entry.name)))?;
            let data: Vec<f64> = match header.dtype {
                Precision::F32 => buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Precision::F64 => buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            let t = Tensor::new(entry.shape, data)
                .map_err(|e| DiffError::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
            tensors.push((entry.name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return ckpt_err("trailing bytes after last tensor");
        }
        Ok(Self {
            precision: header.dtype,
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    /// Stores optimizer state: a meta record under `prefix` plus moment tensors.
    pub fn push_optimizer(&mut self, prefix: &str, opt: &Optimizer, shapes: &[Vec<usize>]) -> serde_json::Value {
        for (i, slot) in opt.slots.iter().enumerate() {
            let shape = shapes.get(i).cloned().unwrap_or_else(|| vec![1, slot.m.len()]);
            self.push(format!("{prefix}.m.{i}"), Tensor::new(shape.clone(), slot.m.clone()).expect("slot shape"));
            self.push(format!("{prefix}.v.{i}"), Tensor::new(shape, slot.v.clone()).expect("slot shape"));
        }
        serde_json::json!({
            "kind": opt.kind,
            "learning_rate": opt.learning_rate,
            "t": opt.t,
            "slots": opt.slots.len(),
        })
    }

    /// Inverse of [`Checkpoint::push_optimizer`].
    pub fn read_optimizer(&self, prefix: &str, record: &serde_json::Value) -> Result<Optimizer> {
        let kind: OptimizerKind = serde_json::from_value(record["kind"].clone())
            .map_err(|e| DiffError::Checkpoint(format!("{prefix}: optimizer kind: {e}")))?;
        let lr = record["learning_rate"]
            .as_f64()
            .ok_or_else(|| DiffError::Checkpoint(format!("{prefix}: missing learning_rate")))?;
        let t = record["t"]
            .as_u64()
            .ok_or_else(|| DiffError::Checkpoint(format!("{prefix}: missing step counter")))?;
        let n = record["slots"].as_u64().unwrap_or(0) as usize;
        let mut opt = Optimizer::new(kind, lr)?;
        opt.t = t;
        for i in 0..n {
            let m = self
                .get(&format!("{prefix}.m.{i}"))
                .ok_or_else(|| DiffError::Checkpoint(format!("{prefix}: missing moment m.{i}")))?;
            let v = self
                .get(&format!("{prefix}.v.{i}"))
                .ok_or_else(|| DiffError::Checkpoint(format!("{prefix}: missing moment v.{i}")))?;
            opt.slots.push(MomentSlot {
                m: m.data().to_vec(),
                v: v.data().to_vec(),
            });
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(Precision::F64);
        c.push("a", Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap());
        c.push("b", Tensor::row(vec![std::f64::consts::PI]));
        c.meta = serde_json::json!({"iteration": 12});
        c
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], MAGIC);
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn f32_round_trip_rounds() {
        let mut c = sample();
        c.precision = Precision::F32;
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.get("a").unwrap().data()[0], 0.1f32 as f64);
    }

    #[test]
    fn truncated_fails_cleanly() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        for cut in [0, 3, 8, buf.len() - 1] {
            assert!(Checkpoint::read_from(&buf[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        let err = Checkpoint::read_from(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("magic"));
    }

    #[test]
    fn expect_reports_shapes() {
        let c = sample();
        let err = c.expect("a", &[3, 1]).unwrap_err().to_string();
        assert!(err.contains("[3, 1]") && err.contains("[2, 2]"), "{err}");
    }
}
