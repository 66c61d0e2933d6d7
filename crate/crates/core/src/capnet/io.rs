//! Binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "CAPN" | version u32 | config block | tensor count u32
//!   | { name_len u32 | name | rank u32 | dims u32.. | data }*
//!   | crc32 u32 over every preceding byte
//! ```
//!
//! The config block holds a precision byte (0 = f32, 1 = f64) that also fixes
//! the tensor element width, the image and layer sizes, the dropout rate as
//! f64, and the charset as a length-prefixed UTF-8 string.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::{build_model, CapNet};
use crate::capgen::Charset;
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::rng::Rng;
use crate::tensor::{Precision, Real, Tensor};

pub const MAGIC: [u8; 4] = *b"CAPN";
pub const VERSION: u32 = 1;

/// Every persisted tensor of `model`, by name, in file order.
fn named_tensors_mut<T: Real>(model: &mut CapNet<T>) -> Vec<(String, &mut Tensor<T>)> {
    let mut out = Vec::new();
    for layer in model.layers_mut() {
        match layer {
            Layer::Conv(l) => {
                out.push((format!("{}.weight", l.params.name), &mut l.params.weights));
                out.push((format!("{}.bias", l.params.name), &mut l.params.bias));
            }
            Layer::Dense(l) => {
                out.push((format!("{}.weight", l.params.name), &mut l.params.weights));
                out.push((format!("{}.bias", l.params.name), &mut l.params.bias));
            }
            Layer::BatchNorm(l) => {
                let name = l.params.name.clone();
                out.push((format!("{name}.gamma"), &mut l.params.weights));
                out.push((format!("{name}.beta"), &mut l.params.bias));
                out.push((format!("{name}.running_mean"), &mut l.running_mean));
                out.push((format!("{name}.running_var"), &mut l.running_var));
            }
            _ => {}
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_model<T: Real>(model: &CapNet<T>) -> Vec<u8> {
    let mut model = model.clone();
    let cfg = *model.config();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match T::PRECISION {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    put_u32(&mut out, cfg.image_width);
    put_u32(&mut out, cfg.image_height);
    for f in cfg.filters {
        put_u32(&mut out, f);
    }
    put_u32(&mut out, cfg.dense_width);
    out.extend_from_slice(&cfg.dropout.to_le_bytes());
    put_str(&mut out, &model.charset().as_string());

    let tensors = named_tensors_mut(&mut model);
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_str(&mut out, &name);
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not UTF-8")))
    }
}

/// A model of either precision, as found in a file.
#[derive(Debug, Clone)]
pub enum AnyCapNet {
    F32(CapNet<f32>),
    F64(CapNet<f64>),
}

impl AnyCapNet {
    pub fn charset(&self) -> &Charset {
        match self {
            AnyCapNet::F32(m) => m.charset(),
            AnyCapNet::F64(m) => m.charset(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyCapNet::F32(m) => m.config(),
            AnyCapNet::F64(m) => m.config(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyCapNet::F32(m) => encode_model(m),
            AnyCapNet::F64(m) => encode_model(m),
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<AnyCapNet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let precision = match r.take(1, "precision")?[0] {
        0 => Precision::F32,
        1 => Precision::F64,
        other => return Err(Error::Corrupt(format!("unknown precision tag {other}"))),
    };
    let image_width = r.u32("image width")?;
    let image_height = r.u32("image height")?;
    let mut filters = [0; 4];
    for f in &mut filters {
        *f = r.u32("filter count")?;
    }
    let dense_width = r.u32("dense width")?;
    let dropout = f64::from_le_bytes(r.take(8, "dropout")?.try_into().expect("8 bytes"));
    let charset = Charset::new(&r.string("charset")?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let config = ModelConfig { image_width, image_height, filters, dense_width, dropout, precision };
    config.validate().map_err(|e| Error::Corrupt(format!("stored config: {e}")))?;

    match precision {
        Precision::F32 => read_body::<f32>(&mut r, &config, &charset).map(AnyCapNet::F32),
        Precision::F64 => read_body::<f64>(&mut r, &config, &charset).map(AnyCapNet::F64),
    }
}

fn read_body<T: Real>(r: &mut Reader<'_>, config: &ModelConfig, charset: &Charset) -> Result<CapNet<T>> {
    let mut model = build_model::<T>(config, charset, &Rng::new(0))?;
    let count = r.u32("tensor count")?;
    let mut slots = named_tensors_mut(&mut model);
    if count != slots.len() {
        return Err(Error::Corrupt(format!(
            "file has {count} tensors, architecture needs {}",
            slots.len()
        )));
    }
    let width = T::PRECISION.byte_width();
    for (expected, slot) in slots.iter_mut() {
        let name = r.string("tensor name")?;
        if name != *expected {
            return Err(Error::Corrupt(format!("expected tensor {expected}, found {name}")));
        }
        let rank = r.u32("tensor rank")?;
        let dims = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {dims:?}, expected {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(slot.len() * width, "tensor data")?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(width)) {
            let v = T::read_le(chunk);
            if !v.is_finite() {
                return Err(Error::Corrupt(format!("tensor {name} holds a non-finite value")));
            }
            *dst = v;
        }
        if name.ends_with(".running_var") && slot.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Corrupt(format!("tensor {name} has negative variance")));
        }
    }
    drop(slots);

    let body_end = r.pos;
    let stored = r.take(4, "checksum")?;
    if r.pos != r.bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checksum",
            r.bytes.len() - r.pos
        )));
    }
    let stored = u32::from_le_bytes(stored.try_into().expect("4 bytes"));
    let found = crc32fast::hash(&r.bytes[..body_end]);
    if stored != found {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:08x}, computed {found:08x}"
        )));
    }
    Ok(model)
}

pub fn save_model<T: Real>(model: &CapNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyCapNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
