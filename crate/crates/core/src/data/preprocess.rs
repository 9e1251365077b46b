//! CT preprocessing: resample to a common voxel size, window the intensities,
//! crop/pad to a fixed grid, (training only) augment, then standardize.

use rand::Rng;

use super::augment::{augment, AugmentConfig};
use super::volume::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Target voxel size `(z, y, x)` in mm.
pub const TARGET_SPACING: [f64; 3] = [5.0, 1.0, 1.0];
pub const HU_WINDOW: (f64, f64) = (40.0, 100.0);
pub const CANONICAL_DIMS: [usize; 3] = [32, 192, 192];
/// Fill value for padding and for samples pulled from outside the volume.
pub const BACKGROUND_HU: f64 = HU_WINDOW.0;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_spacing: [f64; 3],
    pub hu_window: (f64, f64),
    pub target_dims: [usize; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: TARGET_SPACING,
            hu_window: HU_WINDOW,
            target_dims: CANONICAL_DIMS,
        }
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Trilinear sample at fractional `(z, y, x)`; coordinates are clamped to the grid.
pub(crate) fn sample_clamped(v: &Volume, z: f64, y: f64, x: f64) -> f64 {
    let [d, h, w] = v.dims();
    let split = |c: f64, n: usize| -> (usize, usize, f64) {
        let c = c.clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let (z0, z1, tz) = split(z, d);
    let (y0, y1, ty) = split(y, h);
    let (x0, x1, tx) = split(x, w);
    let row = |zz, yy| lerp(v.get(zz, yy, x0), v.get(zz, yy, x1), tx);
    let plane = |zz| lerp(row(zz, y0), row(zz, y1), ty);
    lerp(plane(z0), plane(z1), tz)
}

/// Trilinear resampling onto `target_spacing`. New dims are
/// `round(old · old_spacing / target_spacing)`; voxel centres are aligned.
pub fn resample(v: &Volume, target_spacing: [f64; 3]) -> Result<Volume> {
    if target_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::param(format!(
            "target spacing {target_spacing:?} must be positive"
        )));
    }
    let old = v.dims();
    let sp = v.spacing();
    let mut dims = [0usize; 3];
    let mut ratio = [0f64; 3];
    for a in 0..3 {
        dims[a] = ((old[a] as f64 * sp[a] / target_spacing[a]).round() as usize).max(1);
        ratio[a] = target_spacing[a] / sp[a];
    }
    if dims == old && ratio == [1.0; 3] {
        return Ok(v.clone());
    }
    let src = |i: usize, a: usize| (i as f64 + 0.5) * ratio[a] - 0.5;
    let mut voxels = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[0] {
        let sz = src(z, 0);
        for y in 0..dims[1] {
            let sy = src(y, 1);
            for x in 0..dims[2] {
                voxels.push(sample_clamped(v, sz, sy, src(x, 2)));
            }
        }
    }
    Volume::new(dims, target_spacing, voxels)
}

pub fn clip_hu(v: &Volume, lo: f64, hi: f64) -> Volume {
    let mut out = v.clone();
    for x in out.voxels_mut() {
        *x = x.clamp(lo, hi);
    }
    out
}

/// Centre crop or symmetric pad (with [`BACKGROUND_HU`]) per axis. When the
/// difference is odd the extra voxel is taken from / added to the high side.
pub fn crop_or_pad(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    crop_or_pad_with(v, target, BACKGROUND_HU)
}

pub fn crop_or_pad_with(v: &Volume, target: [usize; 3], fill: f64) -> Result<Volume> {
    let old = v.dims();
    if old == target {
        return Ok(v.clone());
    }
    // signed offset of target index 0 in source coordinates
    let offset: Vec<isize> = (0..3)
        .map(|a| {
            if old[a] >= target[a] {
                ((old[a] - target[a]) / 2) as isize
            } else {
                -(((target[a] - old[a]) / 2) as isize)
            }
        })
        .collect();
    let mut out = Volume::filled(target, v.spacing(), fill)?;
    for z in 0..target[0] {
        let sz = z as isize + offset[0];
        if sz < 0 || sz >= old[0] as isize {
            continue;
        }
        for y in 0..target[1] {
            let sy = y as isize + offset[1];
            if sy < 0 || sy >= old[1] as isize {
                continue;
            }
            for x in 0..target[2] {
                let sx = x as isize + offset[2];
                if sx < 0 || sx >= old[2] as isize {
                    continue;
                }
                let i = out.index(z, y, x);
                out.voxels_mut()[i] = v.get(sz as usize, sy as usize, sx as usize);
            }
        }
    }
    Ok(out)
}

/// Per-volume standardization to a `1×D×H×W` tensor.
pub fn normalize(v: &Volume) -> Tensor {
    let n = v.voxels().len() as f64;
    let mean = v.voxels().iter().sum::<f64>() / n;
    let var = v.voxels().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    let t = v.to_tensor();
    t.map(|x| (x - mean) / std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Resample,
    Clip,
    CropOrPad,
    Augment,
    Normalize,
}

/// Record of the stages a volume went through, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipelineTrace {
    pub stages: Vec<Stage>,
}

impl PipelineTrace {
    /// Errors unless the stages are exactly resample → clip → crop/pad →
    /// (augment) → normalize, with augment present iff `training`.
    pub fn check(&self, training: bool) -> Result<()> {
        use Stage::*;
        let expected: &[Stage] = if training {
            &[Resample, Clip, CropOrPad, Augment, Normalize]
        } else {
            &[Resample, Clip, CropOrPad, Normalize]
        };
        if self.stages == expected {
            Ok(())
        } else {
            Err(Error::config(format!(
                "pipeline ran {:?}, expected {expected:?}",
                self.stages
            )))
        }
    }
}

/// A volume that went through the deterministic front half of the
/// pipeline, together with its trace. Only [`Preprocessor::prepare`]
/// creates these.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    volume: Volume,
    trace: PipelineTrace,
}

impl Prepared {
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn trace(&self) -> &PipelineTrace {
        &self.trace
    }
}

#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Self {
        Preprocessor { config }
    }

    /// The deterministic front half: resample, window, crop/pad.
    pub fn prepare(&self, v: &Volume) -> Result<Prepared> {
        let (lo, hi) = self.config.hu_window;
        if !(lo < hi) {
            return Err(Error::param(format!("HU window ({lo}, {hi}) is empty")));
        }
        let mut trace = PipelineTrace::default();
        let r = resample(v, self.config.target_spacing)?;
        trace.stages.push(Stage::Resample);
        let c = clip_hu(&r, lo, hi);
        trace.stages.push(Stage::Clip);
        let volume = crop_or_pad_with(&c, self.config.target_dims, lo)?;
        trace.stages.push(Stage::CropOrPad);
        Ok(Prepared { volume, trace })
    }

    /// The back half: augmentation when an RNG is supplied, then
    /// standardization. The full trace is checked before returning.
    pub fn finish<R: Rng + ?Sized>(
        &self,
        prepared: &Prepared,
        augmentation: Option<(&AugmentConfig, &mut R)>,
    ) -> Result<(Tensor, PipelineTrace)> {
        let mut trace = prepared.trace.clone();
        let training = augmentation.is_some();
        let t = match augmentation {
            Some((cfg, rng)) => {
                let a = augment(&prepared.volume, cfg, self.config.hu_window, rng);
                trace.stages.push(Stage::Augment);
                normalize(&a)
            }
            None => normalize(&prepared.volume),
        };
        trace.stages.push(Stage::Normalize);
        trace.check(training)?;
        Ok((t, trace))
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        v: &Volume,
        augmentation: Option<(&AugmentConfig, &mut R)>,
    ) -> Result<(Tensor, PipelineTrace)> {
        self.finish(&self.prepare(v)?, augmentation)
    }
}
