//! Training-time augmentation of windowed volumes.
//!
//! All geometric transforms are in-plane (y/x): slices are 5 mm thick, so
//! through-plane warps are not physically meaningful.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::preprocess::sample_clamped;
use super::volume::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_prob: f64,
    pub rotation_prob: f64,
    pub max_rotation_deg: f64,
    pub elastic_prob: f64,
    /// Gaussian smoothing of the displacement noise, in voxels.
    pub elastic_sigma: f64,
    /// Largest displacement after scaling, in voxels.
    pub elastic_magnitude: f64,
    /// Additive noise in HU; 0 disables it.
    pub noise_sigma: f64,
    /// Value for samples pulled from outside the volume.
    pub fill: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            flip_prob: 0.5,
            rotation_prob: 0.5,
            max_rotation_deg: 10.0,
            elastic_prob: 0.5,
            elastic_sigma: 4.0,
            elastic_magnitude: 8.0,
            noise_sigma: 2.0,
            fill: super::preprocess::BACKGROUND_HU,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }
}

/// Mirror along x (`horizontal`) or y (vertical).
pub fn flip(v: &Volume, horizontal: bool) -> Volume {
    let [d, h, w] = v.dims();
    let mut out = v.clone();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                let i = out.index(z, y, x);
                out.voxels_mut()[i] = v.get(z, sy, sx);
            }
        }
    }
    out
}

/// Bilinear in-plane sample; anything outside the slice reads as `fill`.
fn sample_plane(v: &Volume, z: usize, y: f64, x: f64, fill: f64) -> f64 {
    let [_, h, w] = v.dims();
    if y < -0.5 || x < -0.5 || y > h as f64 - 0.5 || x > w as f64 - 0.5 {
        return fill;
    }
    sample_clamped(v, z as f64, y, x)
}

/// Rotation about the z axis through the slice centre.
pub fn rotate_z(v: &Volume, degrees: f64, fill: f64) -> Volume {
    let [d, h, w] = v.dims();
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = v.clone();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // inverse map: rotate output coordinates by -angle
                let sy = c * dy - s * dx + cy;
                let sx = s * dy + c * dx + cx;
                let i = out.index(z, y, x);
                out.voxels_mut()[i] = sample_plane(v, z, sy, sx, fill);
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

/// Separable Gaussian blur of an `h×w` field with clamped borders.
fn blur2d(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[y * w + clamp(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Smooth random in-plane displacement, shared by all slices.
pub fn elastic<R: Rng + ?Sized>(v: &Volume, sigma: f64, magnitude: f64, fill: f64, rng: &mut R) -> Volume {
    let [d, h, w] = v.dims();
    let mut noise = || -> Vec<f64> {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        blur2d(&raw, h, w, sigma)
    };
    let mut dy = noise();
    let mut dx = noise();
    let peak = dy
        .iter()
        .zip(&dx)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        let k = magnitude / peak;
        dy.iter_mut().chain(dx.iter_mut()).for_each(|v| *v *= k);
    }
    let mut out = v.clone();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let j = y * w + x;
                let i = out.index(z, y, x);
                out.voxels_mut()[i] = sample_plane(v, z, y as f64 + dy[j], x as f64 + dx[j], fill);
            }
        }
    }
    out
}

/// Random flips, rotation, elastic warp and additive noise, followed by a
/// re-clip to `window`.
pub fn augment<R: Rng + ?Sized>(v: &Volume, cfg: &AugmentConfig, window: (f64, f64), rng: &mut R) -> Volume {
    if !cfg.enabled {
        return v.clone();
    }
    let mut out = v.clone();
    if rng.random::<f64>() < cfg.flip_prob {
        out = flip(&out, true);
    }
    if rng.random::<f64>() < cfg.flip_prob {
        out = flip(&out, false);
    }
    if rng.random::<f64>() < cfg.rotation_prob {
        let angle = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        out = rotate_z(&out, angle, cfg.fill);
    }
    if rng.random::<f64>() < cfg.elastic_prob {
        out = elastic(&out, cfg.elastic_sigma, cfg.elastic_magnitude, cfg.fill, rng);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        for x in out.voxels_mut() {
            *x += normal.sample(rng);
        }
    }
    for x in out.voxels_mut() {
        *x = x.clamp(window.0, window.1);
    }
    out
}
