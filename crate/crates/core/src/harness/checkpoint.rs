//! Self-describing binary container for tensors, parameter stores and fault
//! masks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "FTNSCKPT" | version u32 | entry count u32
//! per entry: name (u32 len + UTF-8) | dtype u8 | rank u32 | dims u64 × rank
//!            | quant flag u8 [bits u32 | frac_len i32 | scheme u8]
//!            | payload byte length u64 | payload
//! metadata: u64 len + UTF-8 JSON
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::FaultMask;
use crate::nn::params::ParamStore;
use crate::quant::{QuantSpec, Scheme};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FTNSCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Self::F64(_) => 0,
            Self::I64(_) => 1,
            Self::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F64(v) => v.len(),
            Self::I64(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub quant: Option<QuantSpec>,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    pub metadata: serde_json::Value,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
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

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
}

fn scheme_code(s: Scheme) -> u8 {
    match s {
        Scheme::CmosComplement => 0,
        Scheme::RramSymmetric => 1,
    }
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self { entries: Vec::new(), metadata }
    }

    pub fn push(&mut self, entry: Entry) -> Result<()> {
        let n: usize = entry.dims.iter().product();
        if n != entry.payload.len() {
            return Err(Error::Checkpoint(format!("{}: dims {:?} vs {} elements", entry.name, entry.dims, entry.payload.len())));
        }
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Checkpoint(format!("duplicate entry {}", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn add_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.push(Entry { name: name.into(), dims: t.shape().to_vec(), quant: t.quant(), payload: Payload::F64(t.data().to_vec()) })
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
        match &e.payload {
            Payload::F64(v) => Ok(Tensor::new(e.dims.clone(), v.clone())?.with_quant(e.quant)),
            _ => Err(Error::Checkpoint(format!("{name} is not an f64 tensor"))),
        }
    }

    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        for id in store.ids() {
            self.add_tensor(&format!("{prefix}/param/{}", store.name(id)), store.value(id))?;
        }
        for (k, v) in store.buffers() {
            self.push(Entry { name: format!("{prefix}/buffer/{k}"), dims: vec![v.len()], quant: None, payload: Payload::F64(v.clone()) })?;
        }
        Ok(())
    }

    /// Overwrite every parameter and buffer of `store` from the entries
    /// under `prefix`.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = self.tensor(&format!("{prefix}/param/{}", store.name(id)))?;
            store.set(id, t)?;
        }
        let keys: Vec<String> = store.buffers().keys().cloned().collect();
        for k in keys {
            let t = self.tensor(&format!("{prefix}/buffer/{k}"))?;
            store.set_buffer(k, t.into_data());
        }
        Ok(())
    }

    pub fn add_mask(&mut self, name: &str, mask: &FaultMask) -> Result<()> {
        let bytes = serde_json::to_vec(mask)?;
        self.push(Entry { name: name.into(), dims: vec![bytes.len()], quant: None, payload: Payload::U8(bytes) })
    }

    pub fn mask(&self, name: &str) -> Result<FaultMask> {
        match self.get(name).map(|e| &e.payload) {
            Some(Payload::U8(b)) => Ok(serde_json::from_slice(b)?),
            _ => Err(Error::Checkpoint(format!("missing mask {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| Error::Checkpoint("too many entries".into()))?.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.payload.dtype());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match e.quant {
                None => out.push(0),
                Some(q) => {
                    out.push(1);
                    out.extend_from_slice(&q.bits.to_le_bytes());
                    out.extend_from_slice(&q.frac_len.to_le_bytes());
                    out.push(scheme_code(q.scheme));
                }
            }
            let payload: Vec<u8> = match &e.payload {
                Payload::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
                Payload::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
                Payload::U8(v) => v.clone(),
            };
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let quant = match r.u8()? {
                0 => None,
                1 => {
                    let bits = r.u32()?;
                    let frac_len = r.i32()?;
                    let scheme = match r.u8()? {
                        0 => Scheme::CmosComplement,
                        1 => Scheme::RramSymmetric,
                        s => return Err(Error::Checkpoint(format!("unknown scheme code {s}"))),
                    };
                    Some(QuantSpec::new(bits, frac_len, scheme)?)
                }
                f => return Err(Error::Checkpoint(format!("bad quant flag {f}"))),
            };
            let plen = r.len()?;
            let raw = r.take(plen)?;
            let payload = match dtype {
                0 | 1 if plen % 8 != 0 => return Err(Error::Checkpoint(format!("{name}: payload not a multiple of 8 bytes"))),
                0 => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
                1 => Payload::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
                2 => Payload::U8(raw.to_vec()),
                d => return Err(Error::Checkpoint(format!("unknown dtype {d}"))),
            };
            let entry = Entry { name, dims, quant, payload };
            let n: usize = entry.dims.iter().product();
            if n != entry.payload.len() {
                return Err(Error::Checkpoint(format!("{}: dims disagree with payload", entry.name)));
            }
            entries.push(entry);
        }
        let mlen = r.len()?;
        let metadata = serde_json::from_slice(r.take(mlen)?)?;
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { entries, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Metadata stored alongside a model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: crate::nn::ArchSpec,
    pub in_channels: usize,
    pub classes: usize,
    pub input: [usize; 3],
    pub config_hash: Option<String>,
    pub seed: u64,
}

pub fn save_model(path: &Path, model: &crate::nn::Model, meta: &ModelMeta) -> Result<()> {
    let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
    ck.add_store("model", &model.store)?;
    ck.write(path)
}

pub fn load_model(path: &Path) -> Result<(crate::nn::Model, ModelMeta)> {
    let ck = Checkpoint::read(path)?;
    let meta: ModelMeta = serde_json::from_value(ck.metadata.clone())?;
    let mut model = crate::nn::Model::build(&meta.arch, meta.in_channels, meta.classes, meta.seed)?;
    ck.restore_store("model", &mut model.store)?;
    Ok((model, meta))
}
