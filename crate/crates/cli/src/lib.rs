//! Command implementations behind the `st3d` binary. Each command writes
//! its report to the given writer and returns a [`CliError`] that maps to
//! the process exit code.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use st3d::data::{center_clips, AugmentedData, Dataset, Manifest};
use st3d::gradcheck::{render_report, run_all, GradcheckOptions, LayerKind};
use st3d::inference::{evaluate_split, format_prediction, predict_dataset, round_display, ClipGeometry, SplitMetrics};
use st3d::resnet::render_layer_table;
use st3d::train::{fit, format_metrics_line, load_checkpoint, save_checkpoint, Checkpoint, MetricsLog, TrainState};
use st3d::{Network, Rng};

pub use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] st3d::Error),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Installs the global worker pool; `None` keeps rayon's default.
pub fn set_threads(threads: Option<usize>) -> CliResult {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn open_manifest(path: Option<&Path>, root: Option<&Path>, what: &str) -> CliResult<Manifest> {
    let path =
        path.ok_or_else(|| CliError::Config(format!("no {what} manifest: pass --manifest or set data.manifest")))?;
    Ok(Manifest::load(path, root)?)
}

fn resolve_classes(cfg: &RunConfig, manifest: &Manifest) -> CliResult<usize> {
    let found = manifest.num_classes();
    match cfg.model.classes {
        Some(k) if k < found => Err(CliError::Config(format!(
            "classes = {k} but the manifest lists {found} classes"
        ))),
        Some(k) => Ok(k),
        None => Ok(found),
    }
}

pub fn last_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("last.ckpt")
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:04}.ckpt"))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult {
    cfg.validate()?;
    let mut train_cfg = cfg.train_config();
    if train_cfg.lr0 == 0.0 {
        train_cfg.max_epochs = 1;
        writeln!(out, "lr is 0: dry run of one epoch")?;
    }
    let manifest = open_manifest(cfg.data.manifest.as_deref(), cfg.data.root.as_deref(), "training")?;
    let classes = resolve_classes(cfg, &manifest)?;
    let spec = cfg.arch_spec(classes)?;
    let dataset = Dataset::open(&manifest)?;
    let val = match &cfg.data.val_manifest {
        Some(p) => {
            let m = Manifest::load(p, cfg.data.root.as_deref())?;
            if m.num_classes() > classes {
                return Err(CliError::Config(format!(
                    "validation manifest lists {} classes",
                    m.num_classes()
                )));
            }
            Dataset::open(&m)?
        }
        None => dataset.clone(),
    };
    let val_clips = center_clips(&val, cfg.augment.clip_len, cfg.augment.crop_size)?;

    let mut state = match resume {
        Some(path) => {
            let state = load_checkpoint::<f32>(path)?;
            if *state.net.spec() != spec {
                return Err(CliError::Config(format!(
                    "checkpoint {} holds {}, config describes {}",
                    path.display(),
                    state.net.spec(),
                    spec
                )));
            }
            writeln!(out, "resumed from {} after epoch {}", path.display(), state.epoch)?;
            state
        }
        None => TrainState::<f32>::new(&spec, &train_cfg)?,
    };
    writeln!(out, "{spec}")?;
    writeln!(out, "parameters: {}", state.net.param_count())?;
    writeln!(out, "videos: {} train, {} validation", dataset.len(), val.len())?;

    let mut data = AugmentedData::new(dataset, cfg.augment_config(manifest.mean));
    data.producers = cfg.train.producers;
    data.capacity = cfg.train.queue_capacity;

    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let log = MetricsLog::open(&dir.join("metrics.tsv"))?;
    let every = cfg.train.checkpoint_every;
    let history = fit(&mut state, &train_cfg, &data, &val_clips, |stats, state| {
        log.append(stats)?;
        let _ = writeln!(out, "{}", format_metrics_line(stats));
        save_checkpoint(state, &last_checkpoint_path(dir))?;
        if stats.epoch % every == 0 {
            save_checkpoint(state, &epoch_checkpoint_path(dir, stats.epoch))?;
        }
        Ok(true)
    })?;
    if history.is_empty() {
        save_checkpoint(&state, &last_checkpoint_path(dir))?;
    }
    let reason = if state.schedule.exhausted() {
        "schedule exhausted"
    } else {
        "epoch limit"
    };
    writeln!(
        out,
        "stopped after epoch {} ({reason}); lr {}; checkpoint {}",
        state.epoch,
        state.schedule.lr(),
        last_checkpoint_path(dir).display()
    )?;
    Ok(())
}

/// Network and clip geometry from a checkpoint plus an evaluation manifest.
fn load_for_eval(cfg: &RunConfig, checkpoint: &Path) -> CliResult<(Network<f32>, Dataset, ClipGeometry)> {
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let mut net = Network::build(&ckpt.arch, &mut Rng::new(0))?;
    ckpt.load_into(&mut net)?;
    let manifest = open_manifest(cfg.data.manifest.as_deref(), cfg.data.root.as_deref(), "evaluation")?;
    if manifest.num_classes() > ckpt.arch.num_classes {
        return Err(CliError::Config(format!(
            "manifest lists {} classes, network has {}",
            manifest.num_classes(),
            ckpt.arch.num_classes
        )));
    }
    let dataset = Dataset::open(&manifest)?;
    let [_, clip_len, crop_size, _] = ckpt.arch.input_shape;
    let geom = ClipGeometry {
        clip_len,
        crop_size,
        mean: manifest.mean,
    };
    Ok((net, dataset, geom))
}

pub fn format_metrics(m: &SplitMetrics) -> String {
    let top_k = format!("top-{}", m.k);
    format!(
        "videos  {}\ntop-1   {:.1}\n{top_k:<7} {:.1}\naverage {:.1}\n",
        m.videos,
        round_display(m.top1, 1),
        round_display(m.top5, 1),
        round_display(m.average, 1)
    )
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &mut dyn Write) -> CliResult {
    let (net, dataset, geom) = load_for_eval(cfg, checkpoint)?;
    let metrics = evaluate_split(&net, &dataset, &geom, cfg.eval.batch_size)?;
    write!(out, "{}", format_metrics(&metrics))?;
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, dest: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let (net, dataset, geom) = load_for_eval(cfg, checkpoint)?;
    let preds = predict_dataset(&net, &dataset, &geom, cfg.eval.batch_size)?;
    let mut text = String::new();
    for (item, pred) in dataset.items.iter().zip(&preds) {
        text.push_str(&format_prediction(&item.id, pred, &dataset.classes));
        text.push('\n');
    }
    match dest {
        Some(path) => {
            std::fs::write(path, text)?;
            writeln!(out, "{} predictions written to {}", preds.len(), path.display())?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn cmd_inspect(cfg: &RunConfig, out: &mut dyn Write) -> CliResult {
    cfg.validate()?;
    let spec = cfg.arch_spec(cfg.model.classes.unwrap_or(st3d::resnet::KINETICS_CLASSES))?;
    write!(out, "{}", render_layer_table(&spec)?)?;
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, corrupt: Option<&str>, out: &mut dyn Write) -> CliResult {
    let corrupt = match corrupt {
        None => None,
        Some(name) => Some(LayerKind::parse(name).ok_or_else(|| {
            let known: Vec<&str> = LayerKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("unknown layer {name:?}; expected one of {}", known.join(", ")))
        })?),
    };
    let results = run_all(&GradcheckOptions { seed, corrupt })?;
    write!(out, "{}", render_report(&results))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.layer.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
