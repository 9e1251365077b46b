use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use evtnet::data::{generate_synthetic_cohort, CohortManifest, Preprocessor, Split, SynthSpec, Volume};
use evtnet::eval::{
    ablation_table, load_checkpoint, parse_kv, predictions_csv, run_ablation, run_experiment, score_manifest, to_kv,
    Experiment, MetricsReport, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "evtnet",
    version,
    about = "Stroke outcome prediction from CT volumes and clinical metadata"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value config file ('#' starts a comment).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override one setting; repeatable, applied after the file.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            out.extend(parse_kv(&text, &path.display().to_string())?);
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("`--set {s}` is not KEY=VALUE"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// image_only | metadata_only | multimodal
    #[arg(long)]
    mode: Option<String>,
    /// dichotomised | individual
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply(&self.cfg.pairs()?)?;
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(m) = &self.mode {
            cfg.set("mode", m)?;
        }
        if let Some(e) = &self.experiment {
            cfg.set("experiment", e)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest.csv + volumes/).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// image | metadata | split | none
        #[arg(long)]
        signal: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Resample, window and crop every volume of a manifest; writes a new
    /// manifest pointing at the prepared volumes.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train on the manifest's train rows and evaluate on its test rows.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also train with attention disabled and write ablation.csv.
        #[arg(long)]
        ablation: bool,
    },
    /// Score a checkpoint on labelled rows and write a metrics report.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | test | all
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write class probabilities for manifest rows.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | test | all
        #[arg(long, default_value = "all")]
        split: String,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine report files into the ablation table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    Ok(match s {
        "all" => None,
        other => Some(other.parse()?),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest_of(cfg: &RunConfig) -> Result<CohortManifest> {
    let path = cfg
        .manifest
        .as_ref()
        .context("no manifest given (--manifest or `manifest=` in the config)")?;
    Ok(CohortManifest::read(path)?)
}

/// Checkpoint weights plus the run config they belong to: the model
/// settings come from the checkpoint, everything else from `run`.
fn checkpoint_config(run: &RunArgs, checkpoint: &Path) -> Result<(RunConfig, evtnet::model::ModelParams)> {
    let mut cfg = run.run_config()?;
    let (params, model) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    cfg.experiment = match model.num_classes {
        2 => Experiment::Dichotomised,
        7 => Experiment::Individual,
        c => bail!("checkpoint has {c} classes; expected 2 or 7"),
    };
    cfg.model = model;
    cfg.resolve()?;
    Ok((cfg, params))
}

fn synth(cfg: &ConfigArgs, out_dir: &Path, signal: Option<&str>, seed: u64) -> Result<()> {
    let mut spec = SynthSpec::default();
    let mut seed = seed;
    for (k, v) in cfg.pairs()? {
        if k == "seed" {
            seed = v.parse().with_context(|| format!("invalid seed `{v}`"))?;
        } else if !spec.set(&k, &v)? {
            bail!("unknown synth setting `{k}`");
        }
    }
    if let Some(s) = signal {
        spec.set("signal", s)?;
    }
    let n = spec.num_patients();
    let cohort = generate_synthetic_cohort(n, &spec, seed)?;
    let manifest = cohort.write(out_dir)?;
    let mut pairs = vec![("seed", seed.to_string())];
    pairs.extend(spec.to_pairs());
    write(&out_dir.join("config.txt"), &to_kv(&pairs))?;
    info!("wrote {n} patients ({} signal) to {}", spec.signal, manifest.display());
    println!("{}", manifest.display());
    Ok(())
}

fn preprocess(run: &RunArgs, out_dir: &Path) -> Result<()> {
    let cfg = run.run_config()?;
    let mut manifest = manifest_of(&cfg)?;
    let pre = Preprocessor::new(cfg.preprocess.clone());
    fs::create_dir_all(out_dir.join("volumes"))?;
    let sources: Vec<PathBuf> = manifest.records.iter().map(|r| manifest.resolve_volume(r)).collect();
    for (r, src) in manifest.records.iter_mut().zip(sources) {
        let v = Volume::read(&src).with_context(|| format!("reading volume of {}", r.id))?;
        let prepared = pre
            .prepare(&v)
            .with_context(|| format!("preparing volume of {}", r.id))?;
        let rel = format!("volumes/{}.svol", r.id);
        prepared.volume().write(&out_dir.join(&rel))?;
        r.volume_path = rel;
    }
    manifest.base_dir = Some(out_dir.to_path_buf());
    manifest.write(&out_dir.join("manifest.csv"))?;
    write(&out_dir.join("config.txt"), &cfg.to_text())?;
    info!("prepared {} volumes into {}", manifest.records.len(), out_dir.display());
    Ok(())
}

fn train(run: &RunArgs, out_dir: Option<&Path>, ablation: bool) -> Result<()> {
    let mut cfg = run.run_config()?;
    if let Some(d) = out_dir {
        cfg.out_dir = Some(d.to_path_buf());
    }
    if cfg.out_dir.is_none() {
        warn!("no out_dir given; artifacts will not be written");
    }
    if ablation {
        let manifest = manifest_of(&cfg)?;
        if let Some(d) = &cfg.out_dir {
            fs::create_dir_all(d)?;
        }
        let [on, off] = run_ablation(&cfg, &manifest, None)?;
        print!("{}", ablation_table(&[on.report, off.report]));
    } else {
        let outcome = run_experiment(&cfg)?;
        let h = &outcome.history;
        info!(
            "best epoch {} of {} (val loss {:.5}{})",
            h.best_epoch,
            h.records.len(),
            h.best_val_loss,
            if h.stopped_early { ", stopped early" } else { "" }
        );
        print!("{}", outcome.report.to_text());
    }
    Ok(())
}

fn eval(run: &RunArgs, checkpoint: &Path, split: &str, out_dir: Option<&Path>) -> Result<()> {
    let (cfg, params) = checkpoint_config(run, checkpoint)?;
    let manifest = manifest_of(&cfg)?;
    let scored = score_manifest(&cfg, &params, &manifest, parse_split(split)?)?;
    let report = MetricsReport::evaluate(
        &scored.probs,
        &scored.labels,
        cfg.experiment,
        cfg.model.mode,
        cfg.model.attention_enabled,
    )?;
    if let Some(d) = out_dir {
        write(&d.join("config.txt"), &cfg.to_text())?;
        write(&d.join("report.txt"), &report.to_text())?;
        write(
            &d.join("predictions.csv"),
            &predictions_csv(&scored.ids, Some(&scored.labels), &scored.probs),
        )?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn predict(run: &RunArgs, checkpoint: &Path, split: &str, out: Option<&Path>) -> Result<()> {
    let (cfg, params) = checkpoint_config(run, checkpoint)?;
    let manifest = manifest_of(&cfg)?;
    let scored = score_manifest(&cfg, &params, &manifest, parse_split(split)?)?;
    let csv = predictions_csv(&scored.ids, None, &scored.probs);
    match out {
        Some(path) => {
            write(path, &csv)?;
            write(&path.with_extension("config.txt"), &cfg.to_text())?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            MetricsReport::parse(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ablation_table(&reports);
    match out {
        Some(path) => write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth {
            cfg,
            out_dir,
            signal,
            seed,
        } => synth(cfg, out_dir, signal.as_deref(), *seed),
        Command::Preprocess { run, out_dir } => preprocess(run, out_dir),
        Command::Train { run, out_dir, ablation } => train(run, out_dir.as_deref(), *ablation),
        Command::Eval {
            run,
            checkpoint,
            split,
            out_dir,
        } => eval(run, checkpoint, split, out_dir.as_deref()),
        Command::Predict {
            run,
            checkpoint,
            split,
            out,
        } => predict(run, checkpoint, split, out.as_deref()),
        Command::Report { reports, out } => report(reports, out.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
