//! Versioned little-endian checkpoint container.
//!
//! ```text
//! magic "TLMCKPT\0" | version u32
//! config   u32 length + canonical TOML
//! metadata u32 length + TOML
//! count u32, then per tensor:
//!   name u32 length + UTF-8 | dtype u8 | rank u32 | dims u64 x rank | payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, ModelError, ParamStore};
use crate::numerics::Tensor;
use crate::scalar::{DType, Scalar};

const MAGIC: &[u8; 8] = b"TLMCKPT\0";
const VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub stage: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub subset_manifest_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub metadata: TrainingMetadata,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, &self.model.config().to_toml());
        write_str(&mut out, &toml::to_string(&self.metadata).expect("metadata serializes"));
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params.iter() {
            write_str(&mut out, &p.name);
            out.push(T::DTYPE as u8);
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a container. Tensors stored in the other float width are
    /// converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let config = ModelConfig::from_toml(&r.string()?)?;
        let metadata: TrainingMetadata =
            toml::from_str(&r.string()?).map_err(|e| corrupt(&format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let kinds = crate::model::layout(&config);
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let dtype = DType::from_tag(r.u8()?).ok_or_else(|| corrupt(&format!("{name}: unknown dtype")))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(corrupt(&format!("{name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflow"))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("size overflow"))?;
            let payload = r.take(n.checked_mul(dtype.size()).ok_or_else(|| corrupt("size overflow"))?)?;
            let data: Vec<T> = match dtype {
                DType::F32 => payload.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                DType::F64 => payload.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            let kind = kinds
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.kind)
                .ok_or_else(|| ModelError::UnexpectedTensor(name.clone()))?;
            if params.get(&name).is_some() {
                return Err(corrupt(&format!("duplicate tensor {name}")));
            }
            params.insert(name, kind, Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { model: Model::from_params(config, params)?, metadata })
    }
}

pub fn save_checkpoint<T: Scalar>(
    model: &Model<T>,
    metadata: &TrainingMetadata,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let ckpt = Checkpoint { model: model.clone(), metadata: metadata.clone() };
    fs::write(path, ckpt.to_bytes()).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::Corrupt(msg.to_string())
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
}
