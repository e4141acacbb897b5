//! Self-describing little-endian checkpoint files.
//!
//! ```text
//! "UNTK"  u32 version
//! u32 in_channels  u32 out_channels  u32 base_width  u32 depth
//! u32 epoch  f64 best_val_loss
//! u32 record_count
//! record*: u32 name_len, name (utf-8), u8 dtype, u32 n, u32 c, u32 h, u32 w, raw data
//! ```
//!
//! Records cover every tensor of the model, running statistics included, in
//! [`UNetModel::named_tensors`] order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::unet::{UNetConfig, UNetModel};

pub const MAGIC: &[u8; 4] = b"UNTK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub version: u32,
    pub config: UNetConfig,
    pub epoch: u32,
    pub best_val_loss: f64,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &UNetModel<T>, epoch: u32, best_val_loss: f64) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, _, t)| {
                let mut t = t.clone();
                t.clear_grad();
                (name, t)
            })
            .collect();
        Checkpoint {
            version: VERSION,
            config: model.config(),
            epoch,
            best_val_loss,
            tensors,
        }
    }

    /// Rebuilds the model; every record must match the architecture by name and shape.
    pub fn to_model(&self) -> Result<UNetModel<T>> {
        let mut model = UNetModel::new(self.config, 0)?;
        let mut slots = model.named_tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for ((name, _, slot), (rec_name, rec)) in slots.iter_mut().zip(&self.tensors) {
            if name != rec_name || slot.shape() != rec.shape() {
                return Err(Error::Format(format!(
                    "record {rec_name} {} does not match {name} {}",
                    rec.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(rec.data());
        }
        drop(slots);
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let c = &self.config;
        for v in [c.in_channels, c.out_channels, c.base_width, c.depth] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE);
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.put_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"UNTK\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
        }
        let config = UNetConfig {
            in_channels: r.u32("config")? as usize,
            out_channels: r.u32("config")? as usize,
            base_width: r.u32("config")? as usize,
            depth: r.u32("config")? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("invalid config block: {e}")))?;
        let epoch = r.u32("epoch")?;
        let best_val_loss = f64::from_le_bytes(r.take(8, "best_val_loss")?.try_into().unwrap());
        let count = r.u32("record count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Corrupt {
                    offset: at,
                    detail: "tensor name is not utf-8".into(),
                })?
                .to_string();
            let at = r.pos;
            let dtype = r.take(1, "dtype")?[0];
            if dtype != T::DTYPE {
                return Err(Error::Format(format!(
                    "tensor {name} at byte {at} has dtype {dtype}, expected {}",
                    T::DTYPE
                )));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("shape")? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let at = r.pos;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(T::BYTES))
                .ok_or_else(|| Error::Corrupt {
                    offset: at,
                    detail: format!("shape {shape} overflows"),
                })?;
            let raw = r.take(len, "tensor data")?;
            let data = raw.chunks_exact(T::BYTES).map(T::get_le).collect();
            let tensor = Tensor::from_vec(shape, data).map_err(|e| Error::Corrupt {
                offset: at,
                detail: e.to_string(),
            })?;
            tensors.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt {
                offset: r.pos,
                detail: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            version,
            config,
            epoch,
            best_val_loss,
            tensors,
        })
    }
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
            None => Err(Error::Corrupt {
                offset: self.pos,
                detail: format!("truncated while reading {what} ({n} bytes wanted, {} left)", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
