//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic       8 bytes  "SATCKPT\0"
//! version     u32      1
//! header      u64 length + JSON (configs, type vocabulary, layout, step)
//! params      u64 count, then per param: name (u32 len + bytes),
//!             u64 len, len × f64
//! weights     u64 count, then per triplet: anchor, positive, negative
//!             (u32 len + bytes each), u64 param index
//! optimizer   u64 count, then per slot: u64 param index, u64 t,
//!             u64 len, len × f64 (m), len × f64 (v)
//! frozen ds   u8 flag; when 1: u64 epoch, u64 len, len × f64
//! ```
//!
//! Every collection is written in a fixed order, so equal state produces equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemType};
use crate::error::{Error, Result};
use crate::losses::{LossScales, TripletWeightTable};
use crate::model::{Encoder, MaskBank, Model, ModelConfig};
use crate::numcore::{ParamId, ParamStore};
use crate::sampler::TripletKey;
use crate::trainer::{AdamSlot, Optimizer, OptimizerKind, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SATCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Optimizer,
    pub train_config: TrainConfig,
    pub step: u64,
    pub frozen_ds: Option<(u64, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EncoderLayout {
    Identity { dim: usize },
    Affine { input: usize, hidden: usize, output: usize, w1: usize, b1: usize, w2: usize, b2: usize },
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    optimizer: OptimizerKind,
    types: Vec<ItemType>,
    encoder: EncoderLayout,
    bank_dim: usize,
    bank_pairs: Vec<(usize, usize, usize)>,
    loss_scales: Option<[usize; 4]>,
    step: u64,
}

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
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len().saturating_sub(self.pos) < n {
            return Err(Error::Version("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(Error::Version(format!("implausible length {n} in checkpoint")));
        }
        Ok(n)
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Version("invalid utf-8 in checkpoint".into()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Version("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let encoder = match &m.encoder {
            Encoder::Identity { dim } => EncoderLayout::Identity { dim: *dim },
            Encoder::Affine { input, hidden, output, w1, b1, w2, b2 } => EncoderLayout::Affine {
                input: *input,
                hidden: *hidden,
                output: *output,
                w1: w1.index(),
                b1: b1.index(),
                w2: w2.index(),
                b2: b2.index(),
            },
        };
        let header = Header {
            model_config: m.config.clone(),
            train_config: self.train_config.clone(),
            optimizer: self.optimizer.kind,
            types: m.bank.types().to_vec(),
            encoder,
            bank_dim: m.bank.dim(),
            bank_pairs: m.bank.pairs().iter().map(|(&(a, b), id)| (a, b, id.index())).collect(),
            loss_scales: m.loss_scales.map(|s| s.ids().map(|id| id.index())),
            step: self.step,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");

        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(json.len() as u64);
        w.0.extend_from_slice(&json);

        w.u64(m.params.len() as u64);
        for id in m.params.ids() {
            let p = m.params.get(id);
            w.bytes(p.name.as_bytes());
            w.u64(p.value.len() as u64);
            w.floats(&p.value);
        }

        w.u64(m.triplet_weights.len() as u64);
        for (key, id) in m.triplet_weights.iter() {
            w.bytes(key.anchor.as_str().as_bytes());
            w.bytes(key.positive.as_str().as_bytes());
            w.bytes(key.negative.as_str().as_bytes());
            w.u64(id.index() as u64);
        }

        let slots: Vec<(ParamId, &AdamSlot)> = self.optimizer.slots().collect();
        w.u64(slots.len() as u64);
        for (id, slot) in slots {
            w.u64(id.index() as u64);
            w.u64(slot.t);
            w.u64(slot.m.len() as u64);
            w.floats(&slot.m);
            w.floats(&slot.v);
        }

        match &self.frozen_ds {
            Some((epoch, ds)) => {
                w.u8(1);
                w.u64(*epoch);
                w.u64(ds.len() as u64);
                w.floats(ds);
            }
            None => w.u8(0),
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Version("not a checkpoint (bad magic)".into()));
        }
        r.pos = 8;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = r.len()?;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Version(format!("unreadable checkpoint header: {e}")))?;

        let mut params = ParamStore::new();
        let count = r.len()?;
        for _ in 0..count {
            let name = r.string()?;
            let n = r.len()?;
            params.add(name, r.floats(n)?);
        }
        let pid = |i: usize| -> Result<ParamId> {
            if i < count {
                Ok(ParamId(i))
            } else {
                Err(Error::Version(format!("param index {i} out of range")))
            }
        };

        let mut weights = TripletWeightTable::default();
        for _ in 0..r.len()? {
            let key = TripletKey {
                anchor: ItemId(r.string()?),
                positive: ItemId(r.string()?),
                negative: ItemId(r.string()?),
            };
            let id = pid(r.u64()? as usize)?;
            weights.push(key, id);
        }

        let mut optimizer = Optimizer::new(header.optimizer);
        for _ in 0..r.len()? {
            let id = pid(r.u64()? as usize)?;
            let t = r.u64()?;
            let n = r.len()?;
            let m = r.floats(n)?;
            let v = r.floats(n)?;
            optimizer.slots.insert(id, AdamSlot { t, m, v });
        }

        let frozen_ds = match r.u8()? {
            0 => None,
            1 => {
                let epoch = r.u64()?;
                let n = r.len()?;
                Some((epoch, r.floats(n)?))
            }
            f => return Err(Error::Version(format!("bad frozen-score flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Version("trailing bytes after checkpoint".into()));
        }

        let encoder = match header.encoder {
            EncoderLayout::Identity { dim } => Encoder::Identity { dim },
            EncoderLayout::Affine { input, hidden, output, w1, b1, w2, b2 } => {
                Encoder::Affine { input, hidden, output, w1: pid(w1)?, b1: pid(b1)?, w2: pid(w2)?, b2: pid(b2)? }
            }
        };
        let mut pairs = BTreeMap::new();
        for (a, b, id) in header.bank_pairs {
            pairs.insert((a, b), pid(id)?);
        }
        let loss_scales = match header.loss_scales {
            Some([a, b, c, d]) => Some(LossScales { satl: pid(a)?, sim: pid(b)?, l1: pid(c)?, l2: pid(d)? }),
            None => None,
        };
        let model = Model {
            config: header.model_config,
            encoder,
            bank: MaskBank::from_parts(header.bank_dim, header.types, pairs),
            triplet_weights: weights,
            loss_scales,
            params,
        };
        Ok(Checkpoint { model, optimizer, train_config: header.train_config, step: header.step, frozen_ds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::data::read_bytes(path)?)
    }
}
