//! Synthetic stroke cohorts with a planted, controllable signal.
//!
//! Each patient gets a latent severity driven by their mRS label (or, for a
//! `label_noise` fraction of patients, by a uniformly drawn label). The
//! severity can be routed into the image (size and darkness of a hypodense
//! lesion), into a handful of clinical fields, split between the two, or
//! nowhere. Whichever modality does not carry it receives an independent
//! decoy severity with the same distribution, so the marginals never leak
//! the signal choice.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::metadata::{CohortManifest, PatientRecord, Split, NUM_MRS};
use super::preprocess::TARGET_SPACING;
use super::split::split_cohort;
use super::volume::Volume;
use crate::error::{Error, Result};
use crate::rng;

/// The class profile of the reference cohort (mRS 0..6).
pub const DEFAULT_CLASS_COUNTS: [usize; NUM_MRS] = [7, 36, 84, 87, 133, 45, 108];
pub const DESK_DIMS: [usize; 3] = [16, 48, 48];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalSpec {
    Image,
    Metadata,
    /// Image and metadata each carry a partial view; only together do they
    /// recover the severity.
    Split,
    None,
}

impl SignalSpec {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalSpec::Image => "image",
            SignalSpec::Metadata => "metadata",
            SignalSpec::Split => "split",
            SignalSpec::None => "none",
        }
    }
}

impl fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(SignalSpec::Image),
            "metadata" => Ok(SignalSpec::Metadata),
            "split" => Ok(SignalSpec::Split),
            "none" => Ok(SignalSpec::None),
            _ => Err(Error::param(format!(
                "unknown signal {s:?} (image|metadata|split|none)"
            ))),
        }
    }
}

/// Continuous clinical fields as (name, mean, sd, direction). The first
/// [`INFORMATIVE`] carry the metadata share of the severity.
const CONTINUOUS: [(&str, f64, f64, f64); 8] = [
    ("nihss", 16.0, 6.0, 1.0),
    ("age", 68.0, 12.0, 1.0),
    ("aspects", 8.0, 1.5, -1.0),
    ("collateral_score", 2.0, 0.8, -1.0),
    ("glucose", 7.0, 2.0, 0.0),
    ("sbp", 150.0, 22.0, 0.0),
    ("onset_to_door_min", 180.0, 60.0, 0.0),
    ("inr", 1.1, 0.15, 0.0),
];
const INFORMATIVE: usize = 4;
const CATEGORICAL: [(&str, &[&str]); 3] = [
    ("sex", &["F", "M"]),
    ("occlusion_site", &["ICA", "M1", "M2"]),
    ("prestroke_mrs:cat", &["0", "1", "2"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_counts: Vec<usize>,
    pub signal: SignalSpec,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Fraction of patients whose planted severity follows a random label.
    pub label_noise: f64,
    /// Within-class spread of the severity.
    pub severity_sd: f64,
    /// Spread of the component that separates the image and metadata views
    /// under [`SignalSpec::Split`].
    pub split_sd: f64,
    /// Effect of severity on each informative clinical field, in field sds.
    pub metadata_effect: f64,
    /// Severity offset of the lesion for treated patients: at equal outcome,
    /// a treated patient shows a larger lesion. 0 disables the interaction.
    pub treatment_interaction: f64,
    pub missing_rate: f64,
    pub train_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_counts: DEFAULT_CLASS_COUNTS.to_vec(),
            signal: SignalSpec::Image,
            dims: DESK_DIMS,
            spacing: TARGET_SPACING,
            label_noise: 0.1,
            severity_sd: 0.2,
            split_sd: 0.5,
            metadata_effect: 3.0,
            treatment_interaction: 0.0,
            missing_rate: 0.05,
            train_fraction: 0.8,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid value `{p}` for `{key}`")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

impl SynthSpec {
    pub fn with_signal(signal: SignalSpec) -> Self {
        SynthSpec {
            signal,
            ..Default::default()
        }
    }

    pub fn num_patients(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// Applies one `key=value` setting; `false` when the key is not a
    /// generator key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "class_counts" => self.class_counts = parse_list(key, value)?,
            "signal" => self.signal = value.trim().parse()?,
            "dims" => {
                self.dims = parse_list::<usize>(key, value)?
                    .try_into()
                    .map_err(|_| Error::config("`dims` needs three comma-separated values"))?
            }
            "spacing" => {
                self.spacing = parse_list::<f64>(key, value)?
                    .try_into()
                    .map_err(|_| Error::config("`spacing` needs three comma-separated values"))?
            }
            "label_noise" => self.label_noise = parse_one(key, value)?,
            "severity_sd" => self.severity_sd = parse_one(key, value)?,
            "split_sd" => self.split_sd = parse_one(key, value)?,
            "metadata_effect" => self.metadata_effect = parse_one(key, value)?,
            "treatment_interaction" => self.treatment_interaction = parse_one(key, value)?,
            "missing_rate" => self.missing_rate = parse_one(key, value)?,
            "train_fraction" => self.train_fraction = parse_one(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[String]| v.join(",");
        vec![
            (
                "class_counts",
                list(&self.class_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>()),
            ),
            ("signal", self.signal.to_string()),
            ("dims", list(&self.dims.map(|d| d.to_string()))),
            ("spacing", list(&self.spacing.map(|d| format!("{d:?}")))),
            ("label_noise", format!("{:?}", self.label_noise)),
            ("severity_sd", format!("{:?}", self.severity_sd)),
            ("split_sd", format!("{:?}", self.split_sd)),
            ("metadata_effect", format!("{:?}", self.metadata_effect)),
            ("treatment_interaction", format!("{:?}", self.treatment_interaction)),
            ("missing_rate", format!("{:?}", self.missing_rate)),
            ("train_fraction", format!("{:?}", self.train_fraction)),
        ]
    }
}

/// Generated cohort held in memory. `manifest.records[i]` pairs with
/// `volumes[i]`.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub manifest: CohortManifest,
    pub volumes: Vec<Volume>,
    /// Severity routed into the image, per patient.
    pub image_latent: Vec<f64>,
    /// Severity routed into the clinical fields, per patient.
    pub metadata_latent: Vec<f64>,
}

fn standard_normal() -> Normal<f64> {
    Normal::new(0.0, 1.0).unwrap()
}

/// Severity implied by a label: roughly centred, unit steps of 0.5.
fn severity<R: Rng + ?Sized>(label: usize, sd: f64, rng: &mut R) -> f64 {
    (label as f64 - 3.0) / 2.0 + sd * standard_normal().sample(rng)
}

/// Head phantom: air outside an ellipse, a dense rim, brain tissue inside,
/// and an ellipsoidal hypodense lesion whose extent and depth grow with
/// `lesion` in [0, 1].
fn phantom<R: Rng + ?Sized>(dims: [usize; 3], spacing: [f64; 3], lesion: f64, rng: &mut R) -> Volume {
    let [d, h, w] = dims;
    let tissue = rng.random_range(62.0..70.0);
    let noise = Normal::new(0.0, rng.random_range(3.5..5.0)).unwrap();
    let (ry, rx) = (0.45 * h as f64, 0.4 * w as f64);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    let semi_yx = 2.0 + 0.22 * h.min(w) as f64 * lesion;
    let semi_z = 1.0 + 0.3 * d as f64 * lesion;
    let drop = 10.0 + 20.0 * lesion;
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let lz = (d as f64 - 1.0) / 2.0 + rng.random_range(-0.15..0.15) * d as f64;
    let ly = cy + rng.random_range(-0.15..0.15) * h as f64;
    let lx = cx + side * 0.18 * w as f64 + rng.random_range(-0.05..0.05) * w as f64;

    let mut voxels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r = ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2);
                let v = if r > 1.0 {
                    -1000.0
                } else if r > 0.85 {
                    1000.0
                } else {
                    let q = ((z as f64 - lz) / semi_z).powi(2)
                        + ((y as f64 - ly) / semi_yx).powi(2)
                        + ((x as f64 - lx) / semi_yx).powi(2);
                    let base = if q <= 1.0 { tissue - drop } else { tissue };
                    base + noise.sample(rng)
                };
                voxels.push(v);
            }
        }
    }
    Volume::new(dims, spacing, voxels).expect("phantom dims are valid")
}

pub fn generate_synthetic_cohort(n: usize, spec: &SynthSpec, seed: u64) -> Result<SyntheticCohort> {
    if spec.class_counts.len() != NUM_MRS {
        return Err(Error::param(format!(
            "need {NUM_MRS} class counts, got {}",
            spec.class_counts.len()
        )));
    }
    let total: usize = spec.class_counts.iter().sum();
    if total != n || n == 0 {
        return Err(Error::param(format!(
            "class counts {:?} sum to {total}, not n = {n}",
            spec.class_counts
        )));
    }
    if !(0.0..=1.0).contains(&spec.label_noise) || !(0.0..=1.0).contains(&spec.missing_rate) {
        return Err(Error::param("label_noise and missing_rate must lie in [0, 1]"));
    }

    let mut labels: Vec<usize> = (0..NUM_MRS)
        .flat_map(|k| std::iter::repeat_n(k, spec.class_counts[k]))
        .collect();
    labels.shuffle(&mut rng::stream(seed, &[1]));

    let feature_names: Vec<String> = CONTINUOUS
        .iter()
        .map(|c| c.0.to_string())
        .chain(CATEGORICAL.iter().map(|c| c.0.to_string()))
        .collect();
    let mut records = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    let mut image_latent = Vec::with_capacity(n);
    let mut metadata_latent = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        let mut r = rng::stream(seed, &[2, i as u64]);
        let planted = if r.random::<f64>() < spec.label_noise {
            r.random_range(0..NUM_MRS)
        } else {
            y
        };
        let s = severity(planted, spec.severity_sd, &mut r);
        // decoys follow the same marginal but ignore this patient's label
        let mut decoy = || {
            let k = labels[r.random_range(0..n)];
            severity(k, spec.severity_sd, &mut r)
        };
        let (a, b) = match spec.signal {
            SignalSpec::Image => (s, decoy()),
            SignalSpec::Metadata => (decoy(), s),
            SignalSpec::None => (decoy(), decoy()),
            SignalSpec::Split => {
                let u = spec.split_sd * standard_normal().sample(&mut r);
                (s / 2.0 + u, s / 2.0 - u)
            }
        };
        let treatment = u8::from(r.random::<bool>());
        let shown = a + spec.treatment_interaction * f64::from(treatment);
        let lesion = ((shown + 1.5) / 3.0).clamp(0.0, 1.0);
        volumes.push(phantom(spec.dims, spec.spacing, lesion, &mut r));

        let mut fields = Vec::with_capacity(feature_names.len());
        for (j, &(_, mean, sd, dir)) in CONTINUOUS.iter().enumerate() {
            let effect = if j < INFORMATIVE {
                spec.metadata_effect * dir * b
            } else {
                0.0
            };
            let value = mean + sd * (effect + standard_normal().sample(&mut r));
            let missing = r.random::<f64>() < spec.missing_rate;
            fields.push((!missing).then(|| format!("{value:.4}")));
        }
        for (_, levels) in CATEGORICAL {
            fields.push(Some(levels[r.random_range(0..levels.len())].to_string()));
        }
        let id = format!("P{i:04}");
        records.push(PatientRecord {
            volume_path: format!("volumes/{id}.svol"),
            id,
            treatment,
            mrs: y as u8,
            split: Split::Unassigned,
            fields,
        });
        image_latent.push(shown);
        metadata_latent.push(b);
    }
    let mut manifest = CohortManifest {
        feature_names,
        records,
        base_dir: None,
    };
    split_cohort(&mut manifest, spec.train_fraction, seed)?;
    Ok(SyntheticCohort {
        manifest,
        volumes,
        image_latent,
        metadata_latent,
    })
}

impl SyntheticCohort {
    /// Writes `manifest.csv` and `volumes/*.svol` under `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("volumes"))?;
        for (r, v) in self.manifest.records.iter().zip(&self.volumes) {
            v.write(&dir.join(&r.volume_path))?;
        }
        let path = dir.join("manifest.csv");
        self.manifest.write(&path)?;
        Ok(path)
    }
}
