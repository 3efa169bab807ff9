//! Versioned binary model files.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic   8 bytes  "MLPMODEL"
//! version u32      currently 1
//! layers  u32
//! per layer: in_dim u32, out_dim u32
//! per layer: weights (out*in f64, row-major), bias (out f64)
//! ```
//!
//! Floats are stored as IEEE-754 bit patterns, so save/load round-trips are
//! byte-exact.

use super::{Layer, Model};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"MLPMODEL";
const VERSION: u32 = 1;

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_be_bytes());
    for layer in &model.layers {
        out.extend_from_slice(&(layer.in_dim as u32).to_be_bytes());
        out.extend_from_slice(&(layer.out_dim as u32).to_be_bytes());
    }
    for layer in &model.layers {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFile("truncated model data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_be_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        )))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::ModelFile("bad magic; not a model file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported model version {version}"
        )));
    }
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 1024 {
        return Err(Error::ModelFile(format!(
            "implausible layer count {layer_count}"
        )));
    }
    let mut dims = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        dims.push((in_dim, out_dim));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for (in_dim, out_dim) in dims {
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weights.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(r.f64()?);
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFile("trailing bytes after model data".into()));
    }
    Model::from_layers(layers).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn save_model<P: AsRef<Path>>(model: &Model, path: P) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Model> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::Ingestion {
        path: path.as_ref().display().to_string(),
        message: e.to_string(),
    })?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let model = Model::new(&[7, 5, 3], 13).unwrap();
        let bytes = model_to_bytes(&model);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(model, back);
        assert_eq!(bytes, model_to_bytes(&back));
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = Model::new(&[4, 4, 2], 3).unwrap();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let model = Model::new(&[3, 2], 0).unwrap();
        let mut bytes = model_to_bytes(&model);
        assert!(model_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(model_from_bytes(&bytes).is_err());
        assert!(matches!(
            load_model("/nonexistent/model.bin"),
            Err(Error::Ingestion { .. })
        ));
    }
}
