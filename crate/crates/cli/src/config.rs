//! Run configuration: a TOML file with `[model]`, `[train]`, `[augment]`,
//! `[eval]`, `[data]` and `[output]` tables, overridden by command-line
//! flags. Every table and key is optional; unknown keys are rejected.
//!
//! ```toml
//! [model]
//! depth = 34
//! classes = 400                    # default: class count of the manifest
//! stage_channels = [64, 128, 256, 512]
//!
//! [train]
//! lr = 0.1
//! momentum = 0.9
//! weight_decay = 0.001
//! decay_batchnorm = true
//! batch_size = 256
//! plateau_patience = 10
//! plateau_min_delta = 1e-4
//! max_epochs = 200
//! seed = 0
//! producers = 1                    # augmentation threads
//! queue_capacity = 64
//! checkpoint_every = 1
//!
//! [augment]
//! clip_len = 16
//! crop_size = 112
//! scales = [1.0, 0.8408964152537145, 0.7071067811865476, 0.5946035575013605, 0.5]
//! flip_prob = 0.5
//!
//! [eval]
//! batch_size = 8
//!
//! [data]
//! manifest = "kinetics/train.tsv"  # relative paths resolve against this file
//! val_manifest = "kinetics/val.tsv"
//! root = "kinetics/frames"         # default: the manifest's directory
//!
//! [output]
//! dir = "runs/resnet34"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use st3d::data::{default_scales, AugmentConfig, CLIP_LEN, CROP_SIZE, FLIP_PROB};
use st3d::resnet::DEFAULT_STAGE_CHANNELS;
use st3d::train::{
    TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_MAX_EPOCHS, DEFAULT_MIN_DELTA, DEFAULT_MOMENTUM,
    DEFAULT_PATIENCE, DEFAULT_WEIGHT_DECAY, MAX_LR_DROPS,
};
use st3d::ArchSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub depth: usize,
    pub classes: Option<usize>,
    pub stage_channels: [usize; 4],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            depth: 34,
            classes: None,
            stage_channels: DEFAULT_STAGE_CHANNELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_batchnorm: bool,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub producers: usize,
    pub queue_capacity: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            decay_batchnorm: true,
            batch_size: DEFAULT_BATCH_SIZE,
            plateau_patience: DEFAULT_PATIENCE,
            plateau_min_delta: DEFAULT_MIN_DELTA,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
            producers: 1,
            queue_capacity: 64,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub clip_len: usize,
    pub crop_size: usize,
    pub scales: Vec<f64>,
    pub flip_prob: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            clip_len: CLIP_LEN,
            crop_size: CROP_SIZE,
            scales: default_scales(),
            flip_prob: FLIP_PROB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { batch_size: 8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
    pub data: DataSection,
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub classes: Option<usize>,
    pub root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative data and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.manifest, &mut cfg.data.val_manifest, &mut cfg.data.root] {
            if let Some(p) = p {
                *p = base.join(&*p);
            }
        }
        cfg.output.dir = base.join(&cfg.output.dir);
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.depth {
            self.model.depth = v;
        }
        if o.classes.is_some() {
            self.model.classes = o.classes;
        }
        if o.root.is_some() {
            self.data.root = o.root.clone();
        }
        if o.manifest.is_some() {
            self.data.manifest = o.manifest.clone();
        }
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.epochs {
            self.train.max_epochs = v;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field before any compute starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.model.depth != 18 && self.model.depth != 34 {
            return bad(format!("depth must be 18 or 34, got {}", self.model.depth));
        }
        if self.model.classes == Some(0) {
            return bad("classes must be positive".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.augment_config([0.0; 3])
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.producers == 0 || self.train.queue_capacity == 0 || self.train.checkpoint_every == 0 {
            return bad("producers, queue_capacity and checkpoint_every must be positive".into());
        }
        if self.eval.batch_size == 0 {
            return bad("eval batch_size must be positive".into());
        }
        self.arch_spec(self.model.classes.unwrap_or(1)).map(|_| ())
    }

    pub fn arch_spec(&self, classes: usize) -> Result<ArchSpec, CliError> {
        let a = &self.augment;
        let spec = ArchSpec::new(self.model.depth, classes)
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_stage_channels(self.model.stage_channels)
            .with_input([3, a.clip_len, a.crop_size, a.crop_size]);
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr0: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            decay_batchnorm: t.decay_batchnorm,
            batch_size: t.batch_size,
            max_lr_drops: MAX_LR_DROPS,
            plateau_patience: t.plateau_patience,
            plateau_min_delta: t.plateau_min_delta,
            max_epochs: t.max_epochs,
            seed: t.seed,
        }
    }

    pub fn augment_config(&self, mean: [f32; 3]) -> AugmentConfig {
        AugmentConfig {
            clip_len: self.augment.clip_len,
            crop_size: self.augment.crop_size,
            scales: self.augment.scales.clone(),
            flip_prob: self.augment.flip_prob,
            mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_recipe() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        let t = cfg.train_config();
        assert_eq!(
            (t.lr0, t.momentum, t.weight_decay, t.batch_size),
            (0.1, 0.9, 0.001, 256)
        );
        assert_eq!(cfg.arch_spec(400).unwrap().param_count(), 63_544_912);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.model.classes = Some(7);
        cfg.data.manifest = Some("a/b.tsv".into());
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(RunConfig::parse("[optimizer]\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        for text in [
            "[model]\ndepth = 50",
            "[model]\nclasses = 0",
            "[augment]\nscales = [1.0, 1.5]",
            "[augment]\nscales = [1.0, 0.0]",
            "[augment]\nscales = [0.5, 1.0]",
            "[train]\nlr = -0.1",
            "[train]\nweight_decay = -1e-3",
            "[train]\nmomentum = -0.5",
            "[train]\nplateau_min_delta = -1.0",
            "[augment]\nflip_prob = 1.5",
            "[augment]\nclip_len = 0",
        ] {
            let parsed = RunConfig::parse(text);
            assert!(parsed.and_then(|c| c.validate()).is_err(), "{text}");
        }
        assert!(RunConfig::parse("[train]\nbatch_size = -4").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let mut cfg = RunConfig::parse("[train]\nseed = 3\nlr = 0.05\n[model]\ndepth = 18").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            depth: Some(34),
            lr: Some(0.0),
            ..Default::default()
        });
        assert_eq!((cfg.train.seed, cfg.model.depth, cfg.train.lr), (9, 34, 0.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\nmanifest = \"d/train.tsv\"\n[output]\ndir = \"out\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.manifest.unwrap(), dir.path().join("d/train.tsv"));
        assert_eq!(cfg.output.dir, dir.path().join("out"));
    }
}
