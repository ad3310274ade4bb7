//! Binary checkpoint: magic `RGCK`, u32 version, the config text, graph sizes,
//! then every tensor as (name, shape, little-endian f64 payload).

use std::fs;
use std::path::{Path, PathBuf};

use super::config::TrainConfig;
use crate::data::RatingScale;
use crate::error::{Error, IoContext, Result};
use crate::model::ModelParams;

const MAGIC: &[u8; 4] = b"RGCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub scale: RatingScale,
    pub params: ModelParams,
    pub best_epoch: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                message: "truncated checkpoint".into(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.format("string is not UTF-8"))
    }

    fn format(&self, message: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_config_string());
        let shape = self.params.shape;
        for n in [shape.num_users, shape.num_items, shape.num_ratings, self.best_epoch] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.scale.min.to_le_bytes());
        out.extend_from_slice(&self.scale.max.to_le_bytes());
        let tensors = self.params.named_tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_str(&mut out, &name);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &s in t.shape() {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.format("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.format(&format!("unsupported checkpoint version {version}")));
        }
        let config = TrainConfig::from_config_str(&r.string()?)?;
        let num_users = r.u64()? as usize;
        let num_items = r.u64()? as usize;
        let num_ratings = r.u64()? as usize;
        let best_epoch = r.u64()? as usize;
        let scale = RatingScale::new(r.i32()?, r.i32()?)?;
        if scale.len() != num_ratings {
            return Err(r.format("rating scale does not match the rating count"));
        }
        let mut params = ModelParams::zeros(config.model_shape(num_users, num_items, num_ratings));
        let count = r.u32()? as usize;
        let mut tensors = params.named_tensors_mut();
        if count != tensors.len() {
            return Err(r.format(&format!("expected {} tensors, found {count}", tensors.len())));
        }
        for (name, t) in tensors.iter_mut() {
            let stored = r.string()?;
            if &stored != name {
                return Err(r.format(&format!("expected tensor {name}, found {stored}")));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if dims != t.shape() {
                return Err(r.format(&format!("tensor {name} has shape {dims:?}, expected {:?}", t.shape())));
            }
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        drop(tensors);
        if r.at != bytes.len() {
            return Err(r.format("trailing bytes after the last tensor"));
        }
        Ok(Self {
            config,
            scale,
            params,
            best_epoch,
        })
    }

    /// Write to a sibling temp file, then rename over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut tmp = PathBuf::from(path);
        tmp.as_mut_os_string().push(".tmp");
        fs::write(&tmp, self.to_bytes()).at(&tmp)?;
        fs::rename(&tmp, path).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?, path)
    }
}
