//! CT volumes and the `SVOL` on-disk format.
//!
//! Layout (little-endian): magic `SVOL`, format version `u32`, dims
//! `D,H,W` as three `u32`, spacing `sz,sy,sx` in mm as three `f32`, then
//! `D·H·W` `f32` voxels in z-major, then y, then x order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SVOL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 12;

/// A scan in Hounsfield units. `dims` and `spacing` are both ordered
/// `(z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!("volume dims {dims:?} must be positive")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::param(format!("volume spacing {spacing:?} must be positive")));
        }
        let len: usize = dims.iter().product();
        if voxels.len() != len {
            return Err(Error::shape(format!(
                "volume {dims:?} needs {len} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Volume { dims, spacing, voxels })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self> {
        Volume::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f64] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.voxels[self.index(z, y, x)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `1×D×H×W` tensor view of the voxels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.dims[0], self.dims[1], self.dims[2]], self.voxels.clone()).expect("volume dims are valid")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(SVOL_MAGIC);
        out.extend_from_slice(&SVOL_VERSION.to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &s in &self.spacing {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        for &v in &self.voxels {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: origin.to_string(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != SVOL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != SVOL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dims = [word(8) as usize, word(12) as usize, word(16) as usize];
        let float = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
        let spacing = [float(20), float(24), float(28)];
        let len: usize = dims.iter().product();
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * len {
            return Err(bad(format!(
                "expected {} voxel bytes for {dims:?}, found {}",
                4 * len,
                body.len()
            )));
        }
        let voxels = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Volume::new(dims, spacing, voxels).map_err(|e| bad(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Volume::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svol_round_trip_at_f32_precision() {
        let v = Volume::new(
            [2, 3, 4],
            [5.0, 1.0, 0.5],
            (0..24).map(|i| i as f64 * 1.5 - 3.0).collect(),
        )
        .unwrap();
        let back = Volume::from_bytes(&v.to_bytes(), "mem").unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn header_layout() {
        let v = Volume::filled([1, 1, 2], [5.0, 1.0, 1.0], 40.0).unwrap();
        let b = v.to_bytes();
        assert_eq!(&b[..4], b"SVOL");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 5.0);
        assert_eq!(b.len(), 32 + 8);
    }

    #[test]
    fn malformed_inputs() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let mut b = v.to_bytes();
        assert!(Volume::from_bytes(&b[..b.len() - 1], "t").is_err());
        b[0] = b'X';
        assert!(Volume::from_bytes(&b, "t").is_err());
        assert!(Volume::new([2, 2, 2], [1.0, 0.0, 1.0], vec![0.0; 8]).is_err());
        assert!(Volume::new([2, 2, 0], [1.0; 3], vec![]).is_err());
    }
}
