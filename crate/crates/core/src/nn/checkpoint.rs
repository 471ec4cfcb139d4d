//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "SWRNNCK\0"
//! version      u32      1
//! cell         u8       0 = SimpleRNN, 1 = GRU
//! convention   u8       0 = update gate weighs candidate, 1 = previous
//! bidirectional u8
//! reserved     u8       0
//! layers       u32
//! hidden       u32
//! timesteps    u32
//! features     u32
//! dropout      f64
//! rec_dropout  f64
//! tensors      u32      count, then per tensor:
//!   ndim       u32
//!   dims       ndim x u32
//!   data       prod(dims) x f64
//! ```
//!
//! Tensors follow [`ModelParams::tensors`] order.

use std::path::Path;

use super::cell::{CellKind, GruConvention};
use super::model::{Model, ModelConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SWRNNCK\0";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match c.cell {
        CellKind::SimpleRnn => 0,
        CellKind::Gru => 1,
    });
    out.push(match c.gru_convention {
        GruConvention::UpdateGatesCandidate => 0,
        GruConvention::UpdateGatesPrevious => 1,
    });
    out.push(c.bidirectional as u8);
    out.push(0);
    for v in [c.layers, c.hidden, c.timesteps, c.features] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout_rate.to_le_bytes());
    out.extend_from_slice(&c.recurrent_dropout_rate.to_le_bytes());
    let tensors = model.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cell = match cur.u8()? {
        0 => CellKind::SimpleRnn,
        1 => CellKind::Gru,
        k => return Err(Error::Checkpoint(format!("unknown cell kind {k}"))),
    };
    let gru_convention = match cur.u8()? {
        0 => GruConvention::UpdateGatesCandidate,
        1 => GruConvention::UpdateGatesPrevious,
        k => return Err(Error::Checkpoint(format!("unknown GRU convention {k}"))),
    };
    let bidirectional = cur.u8()? != 0;
    cur.u8()?;
    let layers = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let timesteps = cur.u32()? as usize;
    let features = cur.u32()? as usize;
    let dropout_rate = cur.f64()?;
    let recurrent_dropout_rate = cur.f64()?;
    let config = ModelConfig {
        cell,
        gru_convention,
        bidirectional,
        layers,
        hidden,
        dropout_rate,
        recurrent_dropout_rate,
        timesteps,
        features,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;
    let mut model = Model::zeros(config)?;
    let count = cur.u32()? as usize;
    let mut slots = model.params.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            slots.len()
        )));
    }
    for (i, slot) in slots.iter_mut().enumerate() {
        let ndim = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(cur.u32()? as usize);
        }
        if dims != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: shape {dims:?}, config implies {:?}",
                slot.shape()
            )));
        }
        for v in slot.data_mut() {
            *v = cur.f64()?;
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io_at(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::SplitMix64;

    #[test]
    fn round_trip_is_bit_exact() {
        for cfg in [
            ModelConfig::bidirectional(CellKind::Gru),
            ModelConfig::stacked(CellKind::SimpleRnn),
        ] {
            let mut cfg = cfg;
            cfg.hidden = 5;
            let m = Model::new(cfg, 42).unwrap();
            let back = from_bytes(&to_bytes(&m)).unwrap();
            assert_eq!(back, m);
            let mut rng = SplitMix64::new(1);
            let x = Tensor::from_vec(&[2, 48, 4], (0..384).map(|_| rng.next_f64()).collect()).unwrap();
            let a = m.reconstruct(&x).unwrap();
            let b = back.reconstruct(&x).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::new(
            ModelConfig {
                hidden: 2,
                ..ModelConfig::bidirectional(CellKind::Gru)
            },
            1,
        )
        .unwrap();
        let good = to_bytes(&m);
        assert!(from_bytes(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut v2 = good;
        v2[8] = 2;
        assert!(from_bytes(&v2).is_err());
    }
}
