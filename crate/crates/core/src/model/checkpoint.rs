//! Binary checkpoint format.
//!
//! ```text
//! "LFCK"  u32 version  u32 config_len  config (UTF-8 key=value lines)
//! records until EOF, sorted by name:
//!   u32 name_len  name  u32 rank  u32 dims[rank]  f32 data[product(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{init_params, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialized bytes of `model`.
pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = model.config().to_kv();
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    for (name, tensor) in model.params().iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank())?;
        for &d in tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "checkpoint ends inside {what} at byte {}",
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses checkpoint bytes, checking every record against the shapes the
/// stored config requires.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "the magic bytes")? != CHECKPOINT_MAGIC {
        return Err(Error::Version("missing LFCK magic bytes".into()));
    }
    let version = r.u32("the format version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Version(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.u32("the config length")?;
    let text = std::str::from_utf8(r.take(len, "the config block")?)
        .map_err(|_| Error::Format("config block is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(text)?;
    let template = init_params::<f32>(&config, 0)?;

    let mut params = ParamStore::new();
    let mut previous: Option<String> = None;
    while !r.at_end() {
        let len = r.u32("a parameter name length")?;
        let name = std::str::from_utf8(r.take(len, "a parameter name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_owned();
        if previous.as_deref().is_some_and(|p| p >= name.as_str()) {
            return Err(Error::Format(format!("parameter `{name}` is out of order")));
        }
        let expected = template
            .get(&name)
            .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
        let rank = r.u32("a parameter rank")?;
        let shape = (0..rank).map(|_| r.u32("a parameter shape")).collect::<Result<Vec<_>>>()?;
        if shape != expected.shape() {
            return Err(Error::Format(format!(
                "parameter `{name}` has shape {shape:?}, config requires {:?}",
                expected.shape()
            )));
        }
        let raw = r.take(4 * expected.numel(), "parameter data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.insert(name.clone(), Tensor::new(shape, data)?)?;
        previous = Some(name);
    }
    if let Some(missing) = template.names().find(|n| params.get(n).is_none()) {
        return Err(Error::Truncated(format!("checkpoint has no record for `{missing}`")));
    }
    Model::from_params(config, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    model_from_bytes(&bytes)
}

/// Loads a checkpoint and rejects it unless its config equals `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if let Some(field) = model.config().first_difference(expected) {
        return Err(Error::config(
            field,
            format!(
                "checkpoint has {}, expected {}",
                model.config().get(field).unwrap_or_default(),
                expected.get(field).unwrap_or_default()
            ),
        ));
    }
    Ok(model)
}
