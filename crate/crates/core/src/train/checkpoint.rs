//! Binary checkpoint: magic `FGCN`, a little-endian u32 format version, a
//! UTF-8 TOML header (model config and schema layout), the schema digest, a
//! dtype tag, then named tensors for parameters and BN statistics and an
//! optional Adam section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SchemaLayout;
use crate::error::{FgcnnError, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::adam::{AdamHyper, AdamState};
use crate::store::TensorStore;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"FGCN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    layout: SchemaLayout,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn dtype_tag(name: &str) -> u8 {
    if name == "f64" {
        1
    } else {
        0
    }
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

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        self.str(name);
        self.u32(t.ndim() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }

    fn store<T: Real>(&mut self, store: &TensorStore<T>) {
        self.u32(store.len() as u32);
        for (name, t) in store.iter() {
            self.tensor(name, t);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Width of stored reals: 4 or 8.
    width: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(FgcnnError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(FgcnnError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| FgcnnError::Corrupt(format!("{what} is not UTF-8")))
    }

    fn real<T: Real>(&mut self, what: &'static str) -> Result<T> {
        let b = self.take(self.width, what)?;
        Ok(if self.width == T::BYTES {
            T::read_le(b)
        } else if self.width == 8 {
            T::lit(f64::read_le(b))
        } else {
            T::lit(f64::from(f32::read_le(b)))
        })
    }

    fn tensor<T: Real>(&mut self) -> Result<(String, Tensor<T>)> {
        let name = self.str("tensor name")?;
        let ndim = self.u32("tensor rank")? as usize;
        if ndim > 8 {
            return Err(FgcnnError::Corrupt(format!("tensor `{name}` has rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64("tensor shape")? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(self.width) > self.bytes.len() - self.pos {
            return Err(FgcnnError::Truncated("tensor data"));
        }
        let data = (0..n).map(|_| self.real("tensor data")).collect::<Result<Vec<T>>>()?;
        Ok((name, Tensor::from_vec(&shape, data)?))
    }

    fn entries<T: Real>(&mut self) -> Result<Vec<(String, Tensor<T>)>> {
        let n = self.u32("tensor count")? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, optimizer: Option<&AdamState<T>>) -> Result<Vec<u8>> {
    let header = Header {
        model: model.config().clone(),
        layout: model.layout().clone(),
    };
    let text = toml::to_string(&header).map_err(|e| FgcnnError::Toml(e.to_string()))?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(&text);
    w.str(&model.layout().digest);
    w.u8(dtype_tag(T::NAME));
    w.store(model.params());
    w.store(model.state());
    match optimizer {
        None => w.u8(0),
        Some(opt) => {
            w.u8(1);
            w.u64(opt.t);
            for v in [opt.hyper.lr, opt.hyper.beta1, opt.hyper.beta2, opt.hyper.eps] {
                w.f64(v);
            }
            for (name, m) in model.params().names().iter().zip(&opt.m) {
                w.tensor(name, m);
            }
            for (name, v) in model.params().names().iter().zip(&opt.v) {
                w.tensor(name, v);
            }
        }
    }
    Ok(w.0)
}

/// Rebuilds a model from bytes. With `expected_digest`, refuses a checkpoint
/// trained on a different schema. Stored reals of the other precision are
/// converted.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], expected_digest: Option<&str>) -> Result<Checkpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FgcnnError::NotACheckpoint);
    }
    let mut r = Reader { bytes, pos: 4, width: 4 };
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(FgcnnError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let text = r.str("config header")?;
    let header: Header = toml::from_str(&text).map_err(|e| FgcnnError::Corrupt(format!("config header: {e}")))?;
    let digest = r.str("schema digest")?;
    if digest != header.layout.digest {
        return Err(FgcnnError::Corrupt("schema digest disagrees with the stored layout".into()));
    }
    if let Some(expected) = expected_digest {
        if expected != digest {
            return Err(FgcnnError::SchemaMismatch {
                expected: expected.to_string(),
                found: digest,
            });
        }
    }
    r.width = match r.u8("dtype tag")? {
        0 => 4,
        1 => 8,
        t => return Err(FgcnnError::Corrupt(format!("unknown dtype tag {t}"))),
    };
    let mut model = Model::<T>::new(&header.model, &header.layout, 0)?;
    model.params_mut().assign_all(r.entries()?)?;
    model.state_mut().assign_all(r.entries()?)?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let t = r.u64("optimizer step")?;
            let hyper = AdamHyper {
                lr: r.f64("optimizer")?,
                beta1: r.f64("optimizer")?,
                beta2: r.f64("optimizer")?,
                eps: r.f64("optimizer")?,
            };
            let mut m = model.params().zeros_like();
            let mut v = model.params().zeros_like();
            let n = model.params().len();
            m.assign_all((0..n).map(|_| r.tensor()).collect::<Result<_>>()?)?;
            v.assign_all((0..n).map(|_| r.tensor()).collect::<Result<_>>()?)?;
            Some(AdamState {
                hyper,
                t,
                m: m.tensors().to_vec(),
                v: v.tensors().to_vec(),
            })
        }
        f => return Err(FgcnnError::Corrupt(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(FgcnnError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, optimizer })
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, optimizer: Option<&AdamState<T>>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, optimizer)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path, expected_digest: Option<&str>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?, expected_digest)
}

/// Precision the checkpoint was written at, without decoding tensors.
pub fn stored_precision(bytes: &[u8]) -> Result<super::Precision> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FgcnnError::NotACheckpoint);
    }
    let mut r = Reader { bytes, pos: 4, width: 4 };
    r.u32("format version")?;
    r.str("config header")?;
    r.str("schema digest")?;
    Ok(match r.u8("dtype tag")? {
        1 => super::Precision::F64,
        _ => super::Precision::F32,
    })
}
