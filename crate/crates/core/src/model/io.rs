//! Model file: magic `AWEM`, `u32` version, `u32`-length-prefixed JSON
//! config, `u32` tensor count, then per tensor a `u32`-length-prefixed
//! name, `u32` rank, `u32` extents and little-endian `f32` values.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use awe_tensorkit::Tensor;

use super::config::ModelConfig;
use super::network::{param_specs, NetworkParams};
use super::AweModel;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"AWEM";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_model(model: &AweModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).map_err(|e| Error::json("model config", e))?;
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    put_u32(&mut out, model.params.tensors.len());
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf).map_err(|e| Error::io(self.path, e))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<AweModel> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    if r.bytes(4)? != MODEL_MAGIC {
        return Err(Error::Incompatible(format!("{}: not a model file", path.display())));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::Incompatible(format!(
            "format version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let n = r.u32()?;
    let cfg_bytes = r.bytes(n)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes).map_err(|e| Error::json("model config", e))?;
    config
        .validate()
        .map_err(|e| Error::Incompatible(format!("embedded config is invalid: {e}")))?;
    let specs = param_specs(&config);
    let count = r.u32()?;
    if count != specs.len() {
        return Err(Error::Incompatible(format!(
            "{count} tensors stored, config implies {}",
            specs.len()
        )));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for spec in &specs {
        let len = r.u32()?;
        let name =
            String::from_utf8(r.bytes(len)?).map_err(|_| Error::Incompatible("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::Incompatible(format!(
                "tensor `{name}` {shape:?} where config expects `{}` {:?}",
                spec.name, spec.shape
            )));
        }
        let numel: usize = shape.iter().product();
        let data = r
            .bytes(4 * numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(shape, data)?);
        names.push(name);
    }
    if (r.cur.position() as usize) != bytes.len() {
        return Err(Error::Incompatible("trailing bytes after the last tensor".into()));
    }
    let embedding_dim = config.embedding_dim();
    Ok(AweModel {
        config,
        params: NetworkParams {
            names,
            tensors,
            embedding_dim,
        },
    })
}

pub fn save_model(model: &AweModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<AweModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(path, &bytes)
}
