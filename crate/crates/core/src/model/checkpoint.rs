//! Binary checkpoint format.
//!
//! Layout: the magic bytes `XLED`, a `u32` format version, aining
//! length-prefixed configuration block (`key=value` lines), then one record
//! per tensor in canonical order: `u32` name length, name bytes, `u64`
//! rank, `u64` dimensions, and the elements as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::Params;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"XLED";
const VERSION: u32 = 1;

/// Writes config and parameters; round-trips bit-exactly at `f32`.
pub fn save_checkpoint<F: Scalar>(
    params: &Params<F>,
    config: &ModelConfig,
    path: &Path,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    for (name, tensor) in params.named_tensors() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in tensor.data() {
            let v: f32 = num_traits::cast(x).unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint back into a config and `f32` parameters.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Params<f32>)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(4, "magic")? != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config block")?)
        .map_err(|_| Error::Config("config block is not UTF-8".into()))?;
    let config = ModelConfig::from_text(cfg_text)?;

    let mut params = Params::<f32>::zeros(&config);
    for (name, tensor) in params.named_tensors_mut() {
        let name_len = r.u32("tensor name length")? as usize;
        let got = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Config("tensor name is not UTF-8".into()))?;
        if got != name {
            return Err(Error::ShapeMismatch {
                name: format!("{got} (expected record {name})"),
                expected: tensor.shape().to_vec(),
                actual: vec![],
            });
        }
        let rank = r.u64("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("tensor dimension")? as usize);
        }
        if dims != tensor.shape() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: tensor.shape().to_vec(),
                actual: dims,
            });
        }
        let n = tensor.numel();
        let bytes = r.take(4 * n, "tensor data")?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *tensor = Tensor::new(tensor.shape().to_vec(), data)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - r.pos
        )));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 24,
            vocab_size: 11,
            max_offset: 8,
            dropout: 0.1,
            num_styles: 2,
            max_decode_len: 6,
            l2r: false,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny();
        let params = Params::<f32>::init(&config, &mut SeedRng::new(5));
        save_checkpoint(&params, &config, &path).unwrap();
        let (config2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(config, config2);
        for ((n1, t1), (n2, t2)) in
            params.named_tensors().iter().zip(params2.named_tensors().iter())
        {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let a: &[f32] = t1.data();
            let b: &[f32] = t2.data();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE____junk").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic(_))));
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny();
        let params = Params::<f32>::zeros(&config);
        save_checkpoint(&params, &config, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadVersion(9))));
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny();
        let params = Params::<f32>::zeros(&config);
        save_checkpoint(&params, &config, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn config_tensor_disagreement_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny();
        let params = Params::<f32>::zeros(&config);
        save_checkpoint(&params, &config, &path).unwrap();
        // Rewrite the stored vocab_size so the first tensor record (the
        // embedding) no longer matches the config-derived shape.
        let bytes = std::fs::read(&path).unwrap();
        let text = config.to_text();
        let patched = text.replace("vocab_size=11", "vocab_size=12");
        assert_eq!(text.len(), patched.len());
        let mut out = bytes.clone();
        let start = 12;
        out[start..start + text.len()].copy_from_slice(patched.as_bytes());
        std::fs::write(&path, out).unwrap();
        match load_checkpoint(&path) {
            Err(Error::ShapeMismatch { name, expected, actual }) => {
                assert_eq!(name, "embed");
                assert_eq!(expected, vec![12, 16]);
                assert_eq!(actual, vec![11, 16]);
            }
            other => panic!("expected a shape mismatch, got {other:?}"),
        }
    }
}
