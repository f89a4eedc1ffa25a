//! Binary checkpoints.
//!
//! Layout (little endian): the 7-byte magic `SATCKPT`, a `u32` format
//! version, a `u64`-prefixed canonical JSON config, a `u64` tensor count,
//! then per tensor a `u32`-prefixed UTF-8 name, `u64` rows, `u64` cols and
//! `rows * cols` `f64` values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use sat_core::{ModelParams, Tensor};

use crate::config::RunConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 7] = b"SATCKPT";
pub const VERSION: u32 = 1;

/// Largest tensor or string accepted when reading, guarding against
/// allocating absurd sizes from a corrupt length field.
const MAX_LEN: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams,
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut w: impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = ckpt.config.to_canonical_json()?;
    buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for (name, t) in ckpt.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(Error::io("<checkpoint>"))
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Truncated);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(Error::Corrupt(format!("length field {n} is implausible")));
        }
        Ok(n as usize)
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(Error::io("<checkpoint>"))?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor(bytes);
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) { Error::Truncated } else { Error::BadMagic });
    }
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let cfg_len = c.len()?;
    let cfg = std::str::from_utf8(c.take(cfg_len)?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let config: RunConfig = serde_json::from_str(cfg)?;
    let count = c.len()?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|e| Error::Corrupt(e.to_string()))?.to_owned();
        let rows = c.len()?;
        let cols = c.len()?;
        let n = rows.checked_mul(cols).filter(|&n| (n as u64) <= MAX_LEN).ok_or(Error::Corrupt(format!(
            "tensor {name} of shape {rows}x{cols} is implausible"
        )))?;
        let raw = c.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        params.push(name, Tensor::from_vec(rows, cols, data)?);
    }
    if !c.0.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes", c.0.len())));
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_checkpoint(ckpt, &mut bytes)?;
    fs::write(path, bytes).map_err(Error::io(path))
}

/// Loads a checkpoint and checks its tensors against the layout its config
/// describes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let ckpt = read_checkpoint(io::BufReader::new(file))?;
    let model = ckpt.config.build_model()?;
    model.check_params(&ckpt.params)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sat_core::SatModel;

    fn sample() -> Checkpoint {
        let mut config = RunConfig::default();
        config.model.num_layers = 1;
        config.model.hidden_dim = 8;
        config.model.num_heads = 2;
        config.model.dropout = 0.1 + 0.2;
        let (_, params) = SatModel::new(config.model.clone(), 3).unwrap();
        Checkpoint { config, params }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(c, &mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let b = bytes(&c);
        let back = read_checkpoint(&b[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(bytes(&back), b);
        for (x, y) in back.params.tensors().iter().zip(c.params.tensors()) {
            assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn distinct_errors() {
        let b = bytes(&sample());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::BadMagic)));
        let mut v2 = b.clone();
        v2[7..11].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&v2[..]), Err(Error::UnsupportedVersion(2))));
        for cut in [3, 9, 20, b.len() / 2, b.len() - 1] {
            assert!(matches!(read_checkpoint(&b[..cut]), Err(Error::Truncated)), "cut {cut}");
        }
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra[..]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn files_are_validated_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.satckpt");
        let mut c = sample();
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
        c.config.model.hidden_dim = 16;
        c.config.model.num_heads = 4;
        save_checkpoint(&c, &p).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Core(_))));
    }
}
