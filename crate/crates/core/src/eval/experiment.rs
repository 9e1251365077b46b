//! End-to-end runs: cohort → samples → training → test-split report, with
//! artifacts written for provenance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::save_checkpoint;
use super::config::{parse_kv, to_kv};
use super::report::{ablation_table, Experiment, MetricsReport};
use crate::data::{CohortManifest, MetadataEncoder, PreprocessConfig, Preprocessor, Split, Volume};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, build_model, parse_value, Mode, ModelConfig, ModelParams, Network};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{batch_tensors, train, History, Sample, TrainConfig};

const INIT: u64 = 11;
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Dichotomised,
            manifest: None,
            out_dir: None,
            seed: 0,
            model: ModelConfig::for_mode(Mode::Multimodal, 2),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

fn triple<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let v: Vec<T> = value.split(',').map(|p| parse_value(key, p)).collect::<Result<_>>()?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::config(format!("`{key}` needs three comma-separated values"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "seed" => self.seed = parse_value(key, value)?,
            "target_spacing" => self.preprocess.target_spacing = triple(key, value)?,
            "target_dims" => self.preprocess.target_dims = triple(key, value)?,
            "hu_window" => {
                let v: Vec<f64> = value.split(',').map(|p| parse_value(key, p)).collect::<Result<_>>()?;
                match v.as_slice() {
                    [lo, hi] => self.preprocess.hu_window = (*lo, *hi),
                    _ => return Err(Error::config("`hu_window` needs two comma-separated values")),
                }
            }
            _ => {
                if !self.model.set(key, value)? && !self.train.set(key, value)? {
                    return Err(Error::config(format!("unknown configuration key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_kv(&text, &path.display().to_string())?)?;
        Ok(cfg)
    }

    /// Fills in derived settings (class count, metadata width, seeds,
    /// window) and validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        self.model.num_classes = self.experiment.num_classes();
        self.model.metadata_dim = self.model.mode.metadata_dim();
        self.train.seed = self.seed;
        self.train.hu_window = self.preprocess.hu_window;
        self.model.validate()?;
        self.train.validate(self.model.num_classes)?;
        Ok(())
    }

    /// Every setting as `key=value` text; reading it back reproduces the run.
    pub fn to_text(&self) -> String {
        let p = &self.preprocess;
        let join = |v: &[String]| v.join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("experiment", self.experiment.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some(m) = &self.manifest {
            pairs.push(("manifest", m.display().to_string()));
        }
        if let Some(o) = &self.out_dir {
            pairs.push(("out_dir", o.display().to_string()));
        }
        pairs.push(("target_spacing", join(&p.target_spacing.map(|v| format!("{v:?}")))));
        pairs.push(("target_dims", join(&p.target_dims.map(|v| v.to_string()))));
        pairs.push(("hu_window", format!("{:?},{:?}", p.hu_window.0, p.hu_window.1)));
        pairs.extend(self.model.to_pairs());
        pairs.extend(self.train.to_pairs().into_iter().filter(|(k, _)| *k != "seed"));
        to_kv(&pairs)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub history: History,
    pub params: ModelParams,
    pub test_ids: Vec<String>,
    pub test_probs: Tensor,
}

/// Turns manifest rows into training/evaluation samples. `volumes`, when
/// given, pairs with `manifest.records`; otherwise volumes are read from
/// disk.
pub fn build_samples(
    manifest: &CohortManifest,
    indices: &[usize],
    encoder: &MetadataEncoder,
    cfg: &RunConfig,
    volumes: Option<&[Volume]>,
) -> Result<Vec<Sample>> {
    let pre = Preprocessor::new(cfg.preprocess.clone());
    let mode = cfg.model.mode;
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &manifest.records[i];
        let image = if mode.uses_image() {
            let prepared = match volumes {
                Some(v) => pre.prepare(&v[i]),
                None => {
                    let path = manifest.resolve_volume(r);
                    Volume::read(&path).and_then(|v| pre.prepare(&v))
                }
            };
            Some(prepared.map_err(|e| e.context(format!("preparing volume of {}", r.id)))?)
        } else {
            None
        };
        let (meta, _) = encoder.encode(manifest, r, mode)?;
        out.push(Sample {
            image,
            meta,
            label: cfg.experiment.label(r.mrs as usize)?,
        });
    }
    Ok(out)
}

/// Class probabilities for `samples` in evaluation mode.
pub fn predict_samples(params: &ModelParams, model: &ModelConfig, samples: &[Sample]) -> Result<Tensor> {
    let net = Network::new(model.clone())?;
    let pre = Preprocessor::default();
    let c = model.num_classes;
    let mut probs = Vec::with_capacity(samples.len() * c);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images = if model.mode.uses_image() {
            chunk
                .iter()
                .map(|s| {
                    let p = s.image.as_ref().ok_or_else(|| Error::config("sample has no image"))?;
                    pre.finish::<rng::Rng>(p, None).map(|(t, _)| t)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let metas: Vec<&[f64]> = chunk.iter().map(|s| s.meta.as_slice()).collect();
        let (image, meta) = batch_tensors(&images, &metas)?;
        let pass = net.forward(params, image.as_ref(), &meta, false, &mut rng::seeded(0))?;
        probs.extend_from_slice(pass.probs.data());
    }
    Tensor::new(&[samples.len(), c], probs)
}

/// Trains on the manifest's training rows and scores the test rows.
pub fn run_on_cohort(cfg: &RunConfig, manifest: &CohortManifest, volumes: Option<&[Volume]>) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let train_idx = manifest.indices(Split::Train);
    let test_idx = manifest.indices(Split::Test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::config(format!(
            "manifest needs train and test rows, has {} and {}",
            train_idx.len(),
            test_idx.len()
        )));
    }
    let encoder = MetadataEncoder::fit(manifest)?;
    let train_samples = build_samples(manifest, &train_idx, &encoder, &cfg, volumes)?;
    let test_samples = build_samples(manifest, &test_idx, &encoder, &cfg, volumes)?;

    let init = build_model(&cfg.model, &mut rng::stream(cfg.seed, &[INIT]))?;
    let (params, history) = train(init, &train_samples, &cfg.train, &cfg.model)?;
    let test_probs = predict_samples(&params, &cfg.model, &test_samples)?;
    let truth: Vec<usize> = test_samples.iter().map(|s| s.label).collect();
    let report = MetricsReport::evaluate(
        &test_probs,
        &truth,
        cfg.experiment,
        cfg.model.mode,
        cfg.model.attention_enabled,
    )?;
    let test_ids: Vec<String> = test_idx.iter().map(|&i| manifest.records[i].id.clone()).collect();

    let outcome = RunOutcome {
        report,
        history,
        params,
        test_ids,
        test_probs,
    };
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(dir, &cfg, &outcome, &truth)?;
    }
    Ok(outcome)
}

/// Rows scored by a trained model.
#[derive(Debug, Clone)]
pub struct Scored {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub probs: Tensor,
}

/// Scores the rows of `split` (every row when `None`) with trained
/// parameters. The metadata encoder is refitted on the training rows, as in
/// [`run_on_cohort`].
pub fn score_manifest(
    cfg: &RunConfig,
    params: &ModelParams,
    manifest: &CohortManifest,
    split: Option<Split>,
) -> Result<Scored> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    let idx = match split {
        Some(s) => manifest.indices(s),
        None => (0..manifest.records.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::config(format!(
            "manifest has no {} rows to score",
            split.map_or("", |s| s.as_str())
        )));
    }
    let encoder = MetadataEncoder::fit(manifest)?;
    let samples = build_samples(manifest, &idx, &encoder, &cfg, None)?;
    Ok(Scored {
        ids: idx.iter().map(|&i| manifest.records[i].id.clone()).collect(),
        labels: samples.iter().map(|s| s.label).collect(),
        probs: predict_samples(params, &cfg.model, &samples)?,
    })
}

pub fn predictions_csv(ids: &[String], truth: Option<&[usize]>, probs: &Tensor) -> String {
    let c = probs.dim(1);
    let pred = argmax_rows(probs);
    let mut s = String::from("id,");
    if truth.is_some() {
        s.push_str("truth,");
    }
    s.push_str("prediction");
    for k in 0..c {
        write!(s, ",p{k}").unwrap();
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        s.push(',');
        if let Some(t) = truth {
            write!(s, "{},", t[i]).unwrap();
        }
        write!(s, "{}", pred[i]).unwrap();
        for p in &probs.data()[i * c..(i + 1) * c] {
            write!(s, ",{p:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn write_artifacts(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome, truth: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    std::fs::write(dir.join("report.txt"), outcome.report.to_text())?;
    std::fs::write(dir.join("history.csv"), outcome.history.to_csv())?;
    std::fs::write(
        dir.join("predictions.csv"),
        predictions_csv(&outcome.test_ids, Some(truth), &outcome.test_probs),
    )?;
    save_checkpoint(&outcome.params, &cfg.model, &dir.join("model.stkf"))
}

/// Reads the manifest named in the config and runs the experiment.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::config("no manifest given"))?;
    let context = format!("{} run, mode {}", cfg.experiment, cfg.model.mode);
    let manifest = CohortManifest::read(path).map_err(|e| e.context(context.clone()))?;
    run_on_cohort(cfg, &manifest, None).map_err(|e| e.context(context))
}

/// The same run with attention on and off, each in its own subdirectory,
/// plus `ablation.csv` comparing them.
pub fn run_ablation(cfg: &RunConfig, manifest: &CohortManifest, volumes: Option<&[Volume]>) -> Result<[RunOutcome; 2]> {
    let variant = |on: bool| -> Result<RunOutcome> {
        let mut c = cfg.clone();
        c.model.attention_enabled = on;
        c.out_dir = cfg
            .out_dir
            .as_ref()
            .map(|d| d.join(if on { "attention_on" } else { "attention_off" }));
        run_on_cohort(&c, manifest, volumes).map_err(|e| e.context(format!("ablation attention_enabled={on}")))
    };
    let on = variant(true)?;
    let off = variant(false)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::write(
            dir.join("ablation.csv"),
            ablation_table(&[on.report.clone(), off.report.clone()]),
        )?;
    }
    Ok([on, off])
}
