//! Shared plumbing: output-directory conventions, config-file overlays, and
//! dataset loading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use become_net::datapipe::{load_dataset, Dataset, Side};
use become_net::network::NetworkConfig;
use become_net::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{TrainFlags, Variant};

/// A prepared output directory. `run.log` collects milestone lines without
/// timestamps so that identical runs leave byte-identical logs.
pub struct RunDir {
    root: PathBuf,
    log: fs::File,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating output directory {}", root.display()))?;
        let log = fs::File::create(root.join("run.log"))?;
        Ok(Self { root: root.to_path_buf(), log })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Append one line to `run.log` and mirror it to the logger.
    pub fn note(&mut self, line: &str) -> Result<()> {
        log::info!("{line}");
        writeln!(self.log, "{line}")?;
        Ok(())
    }

    /// Write the resolved-configuration echo every command must leave behind.
    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<()> {
        self.write_json("config.json", config)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Pin the global worker pool size; 0 keeps one thread per core.
pub fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

/// Optional override file: `{"network": {...}, "train": {...}}`. Omitted
/// fields keep their defaults; command-line flags win over the file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkPatch,
    pub train: TrainPatch,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkPatch {
    pub dropout_p: Option<f64>,
    pub conv_channels: Option<[usize; 3]>,
    pub landmark_channels: Option<usize>,
    pub fc_units: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPatch {
    pub batch_size: Option<usize>,
    pub lr_base: Option<f64>,
    pub lr_max: Option<f64>,
    pub clr_stepsize: Option<usize>,
    pub sharpness: Option<f64>,
    pub alpha: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub enable_multitask: Option<bool>,
    pub enable_bgc: Option<bool>,
    pub threshold: Option<f64>,
}

pub fn load_config_file(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Load one or more manifests and merge them into a single sample pool.
/// Separate AU-labeled and expression-labeled corpora can train one model
/// this way; the manifests must agree on AU names, class count, and side.
pub fn load_merged(paths: &[PathBuf]) -> Result<Dataset<f64>> {
    ensure!(!paths.is_empty(), "at least one --data manifest is required");
    let mut merged: Option<Dataset<f64>> = None;
    for path in paths {
        let part = load_dataset::<f64>(path)
            .with_context(|| format!("loading {}", path.display()))?;
        merged = Some(match merged {
            None => part,
            Some(mut acc) => {
                ensure!(
                    acc.au_names == part.au_names,
                    "{}: AU names differ from the first manifest",
                    path.display()
                );
                ensure!(
                    acc.expr_count == part.expr_count,
                    "{}: expression count differs from the first manifest",
                    path.display()
                );
                ensure!(
                    acc.side == part.side,
                    "{}: face side differs from the first manifest",
                    path.display()
                );
                acc.samples.extend(part.samples);
                acc
            }
        });
    }
    let data = merged.expect("paths is non-empty");
    data.validate()?;
    Ok(data)
}

/// Fully resolved model and training settings for one run.
#[derive(Serialize)]
pub struct Resolved {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

/// Overlay order: built-in defaults, then the config file, then flags. The
/// network dimensions always come from the dataset itself.
pub fn resolve(data: &Dataset<f64>, file: &ConfigFile, flags: &TrainFlags) -> Result<Resolved> {
    if let Some(variant) = flags.variant {
        let matches = match variant {
            Variant::F => data.side == Side::Full,
            Variant::H => data.side != Side::Full,
        };
        if !matches {
            bail!(
                "--variant {:?} expects a {} dataset but the manifest holds {} faces",
                variant,
                if variant == Variant::F { "full-face" } else { "half-face" },
                data.side.as_str()
            );
        }
    }

    let sample = data.samples.first().context("dataset has no samples")?;
    let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
    let landmarks = sample.landmarks.shape()[0];
    let mut network = NetworkConfig::with_dims(h, w, landmarks, data.au_count(), data.expr_count);
    let np = &file.network;
    if let Some(v) = np.dropout_p {
        network.dropout_p = v;
    }
    if let Some(v) = np.conv_channels {
        network.conv_channels = v;
    }
    if let Some(v) = np.landmark_channels {
        network.landmark_channels = v;
    }
    if let Some(v) = np.fc_units {
        network.fc_units = v;
    }
    if let Some(v) = flags.dropout {
        network.dropout_p = v;
    }
    if let Some(v) = flags.conv_channels {
        network.conv_channels = v.0;
    }
    if let Some(v) = flags.landmark_channels {
        network.landmark_channels = v;
    }
    if let Some(v) = flags.fc_units {
        network.fc_units = v;
    }
    network.validate()?;

    let mut train = TrainConfig::default();
    let tp = &file.train;
    if let Some(v) = tp.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = tp.lr_base {
        train.lr_base = v;
    }
    if let Some(v) = tp.lr_max {
        train.lr_max = v;
    }
    if let Some(v) = tp.clr_stepsize {
        train.clr_stepsize = Some(v);
    }
    if let Some(v) = tp.sharpness {
        train.sharpness = v;
    }
    if let Some(v) = tp.alpha {
        train.alpha = v;
    }
    if let Some(v) = tp.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = tp.patience {
        train.patience = v;
    }
    if let Some(v) = tp.seed {
        train.seed = v;
    }
    if let Some(v) = tp.enable_multitask {
        train.enable_multitask = v;
    }
    if let Some(v) = tp.enable_bgc {
        train.enable_bgc = v;
    }
    if let Some(v) = tp.threshold {
        train.threshold = v;
    }
    if let Some(v) = flags.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = flags.lr_base {
        train.lr_base = v;
    }
    if let Some(v) = flags.lr_max {
        train.lr_max = v;
    }
    if let Some(v) = flags.clr_stepsize {
        train.clr_stepsize = Some(v);
    }
    if let Some(v) = flags.sharpness {
        train.sharpness = v;
    }
    if let Some(v) = flags.alpha {
        train.alpha = v;
    }
    if let Some(v) = flags.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = flags.patience {
        train.patience = v;
    }
    if let Some(v) = flags.seed {
        train.seed = v;
    }
    if flags.no_multitask {
        train.enable_multitask = false;
    }
    if flags.no_bgc {
        train.enable_bgc = false;
    }
    if let Some(v) = flags.threshold {
        train.threshold = v;
    }
    train.validate()?;

    Ok(Resolved { network, train })
}

/// Input paths exactly as the user gave them, for the config echo.
pub fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
