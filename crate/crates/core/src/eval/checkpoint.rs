//! `STKF` checkpoints: model config plus every parameter tensor at full
//! precision.
//!
//! Layout (little-endian): magic `STKF`, version `u32`, config length `u32`
//! followed by that many bytes of `key=value` lines, parameter count `u32`,
//! then per parameter: name length `u16`, name bytes, rank `u8`, one `u32`
//! per dim, and the `f64` data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, ModelParams};
use crate::rng;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STKF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(params: &ModelParams, config: &ModelConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text: String = config.to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let flat = params.flat();
    out.extend_from_slice(&(flat.len() as u32).to_le_bytes());
    for (name, t) in flat {
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::param(format!("parameter name `{name}` too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::CorruptCheckpoint {
            offset,
            reason: reason.into(),
        }
    }
}

/// Parses a checkpoint; tensors are validated against the layout the
/// stored config implies.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelParams, ModelConfig)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(c.corrupt(0, "bad magic"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(c.corrupt(4, format!("unsupported version {version}")));
    }
    let cfg_at = c.pos;
    let cfg_len = c.u32("config length")? as usize;
    let text = std::str::from_utf8(c.take(cfg_len, "config block")?)
        .map_err(|_| c.corrupt(cfg_at + 4, "config block is not utf-8"))?;
    let pairs = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split_once('=').unwrap_or((l, "")));
    let config = ModelConfig::from_pairs(pairs).map_err(|e| c.corrupt(cfg_at + 4, e.to_string()))?;
    config.validate().map_err(|e| c.corrupt(cfg_at + 4, e.to_string()))?;

    let count = c.u32("parameter count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = c.pos;
        let name_len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(name_len, "parameter name")?)
            .map_err(|_| c.corrupt(at + 2, "parameter name is not utf-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let data_at = c.pos;
        let raw = c.take(
            len.checked_mul(8)
                .ok_or_else(|| c.corrupt(data_at, "tensor too large"))?,
            "tensor data",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| c.corrupt(at, e.to_string()))?;
        entries.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(c.corrupt(c.pos, "trailing bytes after the last tensor"));
    }
    let layout = build_model(&config, &mut rng::seeded(0))?;
    let params = ModelParams::from_flat(entries, &layout).map_err(|e| c.corrupt(cfg_at, e.to_string()))?;
    Ok((params, config))
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, config)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    parse_checkpoint(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Loads a checkpoint that must match `expected` parameter for parameter.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let (params, stored) = load_checkpoint(path)?;
    let layout = build_model(expected, &mut rng::seeded(0))?;
    let entries = params.flat().into_iter().map(|(n, t)| (n, t.clone())).collect();
    ModelParams::from_flat(entries, &layout).map_err(|e| {
        Error::config(format!(
            "checkpoint {} (attention_enabled={}, mode={}) does not fit the requested model: {e}",
            path.display(),
            stored.attention_enabled,
            stored.mode
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn tiny(attention: bool) -> ModelConfig {
        ModelConfig {
            conv_channels: [2, 3, 4],
            image_feature_size: 8,
            metadata_feature_size: 4,
            attention_enabled: attention,
            ..ModelConfig::for_mode(Mode::Multimodal, 7)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny(true);
        let params = build_model(&cfg, &mut rng::seeded(3)).unwrap();
        let bytes = checkpoint_bytes(&params, &cfg).unwrap();
        assert_eq!(&bytes[..4], b"STKF");
        let (p, c) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(c, cfg);
        for ((na, a), (nb, b)) in params.flat().iter().zip(p.flat()) {
            assert_eq!(na, &nb);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(checkpoint_bytes(&p, &c).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_magic_are_reported_with_offsets() {
        let cfg = tiny(false);
        let bytes = checkpoint_bytes(&build_model(&cfg, &mut rng::seeded(1)).unwrap(), &cfg).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = parse_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CorruptCheckpoint { .. }), "cut {cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            parse_checkpoint(&bad),
            Err(Error::CorruptCheckpoint { offset: 0, .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            parse_checkpoint(&bad),
            Err(Error::CorruptCheckpoint { offset: 4, .. })
        ));
    }

    #[test]
    fn attention_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.stkf");
        let off = tiny(false);
        save_checkpoint(&build_model(&off, &mut rng::seeded(2)).unwrap(), &off, &path).unwrap();
        assert!(load_checkpoint_for(&path, &off).is_ok());
        let err = load_checkpoint_for(&path, &tiny(true)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
