//! Experiment configuration files.
//!
//! Configs are TOML (`key = value` with nested sections). Unknown keys
//! are hard errors everywhere — a typo must fail loudly rather than
//! silently fall back to a default and corrupt an experiment arm. The
//! seed and fold count are deliberately required so a saved config pins
//! the arm completely.
//!
//! Relative paths inside a config resolve against the directory
//! containing the config file, so a config and its data can move
//! together.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use voxaug_core::nn::ModelConfig;
use voxaug_core::{AugmentSpec, SplitSpec, TrainMode, TrainParams, TrainSetup};

/// One training arm: dataset, model, augmentation, protocol, output.
///
/// ```toml
/// manifest = "data/manifest.csv"
/// out_dir = "runs/flip-fixed"
/// n_folds = 10
/// base_seed = 1234
/// workers = 4              # optional; omit to use all cores
///
/// [model]                  # optional overrides; input shape comes
/// conv_channels = [8, 8, 16]   # from the dataset unless set here
/// kernel = 3
/// pool_after = [0, 1]
/// dense_units = 16
///
/// [augment]
/// kind = "flip"
/// probability = 0.5
///
/// [mode]
/// mode = "fixed"
/// epochs = 150
///
/// [params]                 # optional
/// batch_size = 16
/// [params.adam]
/// lr = 1e-5
/// beta1 = 0.9
/// beta2 = 0.999
/// eps = 1e-7
///
/// [split]                  # optional
/// ratios = [0.70, 0.15, 0.15]
/// stratify = true
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub n_folds: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub model: ModelOverrides,
    pub augment: AugmentSpec,
    pub mode: TrainMode,
    #[serde(default)]
    pub params: TrainParams,
    #[serde(default)]
    pub split: SplitSpec,
}

/// Optional model hyperparameter overrides. Anything left out keeps the
/// default architecture; the input shape defaults to the dataset's.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub input_shape: Option<(usize, usize, usize)>,
    pub conv_channels: Option<Vec<usize>>,
    pub kernel: Option<usize>,
    pub pool_after: Option<Vec<usize>>,
    pub dense_units: Option<usize>,
    pub output_units: Option<usize>,
}

impl ModelOverrides {
    /// Materialize a full model config on a dataset shape.
    pub fn build(&self, dataset_shape: (usize, usize, usize)) -> ModelConfig {
        let mut cfg = ModelConfig::with_input(self.input_shape.unwrap_or(dataset_shape));
        if let Some(c) = &self.conv_channels {
            cfg.conv_channels = c.clone();
        }
        if let Some(k) = self.kernel {
            cfg.kernel = k;
        }
        if let Some(p) = &self.pool_after {
            cfg.pool_after = p.iter().copied().collect();
        }
        if let Some(d) = self.dense_units {
            cfg.dense_units = d;
        }
        if let Some(o) = self.output_units {
            cfg.output_units = o;
        }
        cfg
    }
}

impl RunConfig {
    /// Parse a config file and resolve its relative paths against the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.manifest = resolve(base, &cfg.manifest);
        cfg.out_dir = resolve(base, &cfg.out_dir);
        Ok(cfg)
    }

    /// Everything checkable before data is loaded. The model config is
    /// validated later, once the dataset shape is known.
    pub fn validate(&self) -> Result<(), String> {
        if !self.manifest.is_file() {
            return Err(format!(
                "manifest {} does not exist",
                self.manifest.display()
            ));
        }
        if self.n_folds < 2 {
            return Err(format!("n_folds must be at least 2, got {}", self.n_folds));
        }
        self.augment.validate().map_err(|e| e.to_string())?;
        self.mode.validate().map_err(|e| e.to_string())?;
        if self.params.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        self.split.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn setup(&self, dataset_shape: (usize, usize, usize)) -> TrainSetup {
        TrainSetup {
            model: self.model.build(dataset_shape),
            augment: self.augment.clone(),
            mode: self.mode.clone(),
            params: self.params.clone(),
            split: self.split.clone(),
        }
    }
}

/// Download source description for the fetch command.
///
/// ```toml
/// template = "https://host/path/{pipeline}/{strategy}/{derivative}/{file_id}_{derivative}.nii.gz"
/// pipeline = "ccs"
/// strategy = "filt_global"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchFileConfig {
    pub template: String,
    #[serde(default)]
    pub pipeline: Option<String>,
    #[serde(default)]
    pub strategy: Option<String>,
}

impl FetchFileConfig {
    pub fn load(path: &Path) -> Result<FetchFileConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            manifest = "m.csv"
            out_dir = "runs/none"
            n_folds = 10
            base_seed = 7

            [augment]
            kind = "none"

            [mode]
            mode = "early-stop"
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.n_folds, 10);
        assert_eq!(cfg.base_seed, 7);
        assert_eq!(cfg.workers, None);
        assert!(matches!(cfg.augment, AugmentSpec::NoAugment));
        assert!(matches!(
            cfg.mode,
            TrainMode::EarlyStop {
                patience: 50,
                max_epochs: 1000
            }
        ));
        assert_eq!(cfg.params.batch_size, 16);
        assert_eq!(cfg.split.ratios, (0.70, 0.15, 0.15));
        let model = cfg.model.build((61, 73, 61));
        assert_eq!(model.input_shape, (61, 73, 61));
        assert_eq!(model.conv_channels, vec![8, 8, 16]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = "manifest = \"m\"\nout_dir = \"o\"\nn_folds = 2\nbase_seed = 1\nbananas = 3\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n";
        assert!(toml::from_str::<RunConfig>(top).is_err());
        let nested = "manifest = \"m\"\nout_dir = \"o\"\nn_folds = 2\nbase_seed = 1\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\nepochz = 5\n";
        assert!(toml::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn seed_and_fold_count_have_no_defaults() {
        let missing_seed = "manifest = \"m\"\nout_dir = \"o\"\nn_folds = 2\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n";
        assert!(toml::from_str::<RunConfig>(missing_seed).is_err());
        let missing_folds = "manifest = \"m\"\nout_dir = \"o\"\nbase_seed = 1\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n";
        assert!(toml::from_str::<RunConfig>(missing_folds).is_err());
    }

    #[test]
    fn compose_and_overrides_round_trip_from_toml() {
        let text = r#"
            manifest = "m.csv"
            out_dir = "runs/combo"
            n_folds = 2
            base_seed = 3

            [model]
            conv_channels = [2]
            pool_after = []
            dense_units = 4

            [augment]
            kind = "compose"
            specs = [
                { kind = "flip", probability = 0.5 },
                { kind = "rotate", max_deg = 7.5 },
            ]

            [mode]
            mode = "fixed"
            epochs = 3

            [params]
            batch_size = 4
            [params.adam]
            lr = 1e-3
            beta1 = 0.9
            beta2 = 0.999
            eps = 1e-7

            [split]
            ratios = [0.6, 0.2, 0.2]
            seed = 0
            stratify = true
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.augment.label(), "compose(flip(0.5)+rotate(7.5))");
        let model = cfg.model.build((7, 7, 7));
        assert_eq!(model.conv_channels, vec![2]);
        assert!(model.pool_after.is_empty());
        assert_eq!(model.dense_units, 4);
        assert_eq!(cfg.params.adam.lr, 1e-3);
        assert_eq!(cfg.split.ratios, (0.6, 0.2, 0.2));
    }

    #[test]
    fn validate_reports_missing_manifest_and_bad_counts() {
        let text = "manifest = \"/definitely/not/here.csv\"\nout_dir = \"o\"\nn_folds = 2\nbase_seed = 1\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().unwrap_err().contains("does not exist"));

        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, "file_id,label,path\n").unwrap();
        let text = format!(
            "manifest = {:?}\nout_dir = \"o\"\nn_folds = 1\nbase_seed = 1\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n",
            manifest.display().to_string()
        );
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().unwrap_err().contains("n_folds"));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("exp");
        std::fs::create_dir_all(&sub).unwrap();
        let cfg_path = sub.join("run.toml");
        std::fs::write(
            &cfg_path,
            "manifest = \"data/m.csv\"\nout_dir = \"runs/a\"\nn_folds = 2\nbase_seed = 1\n\n[augment]\nkind = \"none\"\n\n[mode]\nmode = \"fixed\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.manifest, sub.join("data/m.csv"));
        assert_eq!(cfg.out_dir, sub.join("runs/a"));
    }

    #[test]
    fn fetch_config_parses_and_rejects_typos() {
        let ok = "template = \"http://h/{pipeline}/{strategy}/{derivative}/{file_id}.nii.gz\"\npipeline = \"ccs\"\n";
        let cfg: FetchFileConfig = toml::from_str(ok).unwrap();
        assert_eq!(cfg.pipeline.as_deref(), Some("ccs"));
        assert_eq!(cfg.strategy, None);
        assert!(toml::from_str::<FetchFileConfig>("template = \"x\"\nstrateg = \"y\"\n").is_err());
    }
}
