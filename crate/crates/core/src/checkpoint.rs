//! `FSQ1` model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        b"FSQ1"
//! config_len   u64
//! config       config_len bytes of JSON (ModelConfig)
//! n_tensors    u64
//! per tensor, in `tensor_names` order:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rank       u32 (always 2)
//!   dims       rank x u64
//!   payload    prod(dims) x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{tensor_names, ModelConfig, ModelParams, Params};

const MAGIC: &[u8; 4] = b"FSQ1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        params.check_shapes(&config)?;
        Ok(Checkpoint { config, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let config = serde_json::to_vec(&self.config).map_err(std::io::Error::other)?;
        w.write_all(&(config.len() as u64).to_le_bytes())?;
        w.write_all(&config)?;
        let names = tensor_names(&self.config);
        let tensors = self.params.tensors();
        w.write_all(&(tensors.len() as u64).to_le_bytes())?;
        for (name, t) in names.iter().zip(tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {:?}, expected FSQ1",
                String::from_utf8_lossy(&magic)
            )));
        }
        let config_len = read_u64(&mut r, "config length")? as usize;
        let mut config = Vec::new();
        (&mut r).take(config_len as u64).read_to_end(&mut config)
            .map_err(|e| Error::Format(format!("reading config: {e}")))?;
        if config.len() != config_len {
            return Err(Error::Format("checkpoint truncated in config block".into()));
        }
        let config: ModelConfig = serde_json::from_slice(&config)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;

        let names = tensor_names(&config);
        let count = read_u64(&mut r, "tensor count")? as usize;
        if count != names.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, config implies {}",
                names.len()
            )));
        }
        let mut params = Params::<f32>::zeros(&config);
        for (want, slot) in names.iter().zip(params.tensors_mut()) {
            let name_len = read_u32(&mut r, "tensor name")? as usize;
            if name_len > 4096 {
                return Err(Error::Format(format!("tensor name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name, "tensor name")?;
            if name != want.as_bytes() {
                return Err(Error::Format(format!(
                    "expected tensor `{want}`, found `{}`",
                    String::from_utf8_lossy(&name)
                )));
            }
            let rank = read_u32(&mut r, want)?;
            if rank != 2 {
                return Err(Error::Format(format!("{want}: rank {rank}, expected 2")));
            }
            let rows = read_u64(&mut r, want)? as usize;
            let cols = read_u64(&mut r, want)? as usize;
            if (rows, cols) != slot.shape() {
                return Err(Error::Shape(format!(
                    "{want}: expected {:?}, found {:?}",
                    slot.shape(),
                    (rows, cols)
                )));
            }
            for v in slot.data_mut() {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b, want)?;
                *v = f32::from_le_bytes(b);
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint holds NaN or Inf".into()));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            layer_width: 6,
            heads: 3,
            ..ModelConfig::new(4)
        };
        let ck = Checkpoint::new(cfg.clone(), init_params(&cfg, 9).unwrap()).unwrap();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"FSQ1");
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_reported() {
        let cfg = ModelConfig {
            layer_width: 2,
            heads: 1,
            layers: 1,
            ..ModelConfig::new(2)
        };
        let bytes = Checkpoint::new(cfg.clone(), init_params(&cfg, 1).unwrap())
            .unwrap()
            .to_bytes();
        let err = Checkpoint::read_from(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(Checkpoint::read_from(&b"XXXX"[..]).is_err());
    }
}
