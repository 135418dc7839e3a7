//! Flag and config-file settings. Every key may come from `--key value` or
//! from the TOML file named by `--config`, never from both.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use spatial_pretrain::data::DatasetFormat;
use spatial_pretrain::network::InitRule;
use spatial_pretrain::schedule::TrainingSchedule;
use spatial_pretrain::surgery::Amplitude;
use spatial_pretrain::train::ContinueMode;

use crate::error::CliError;

#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// TOML file with any of the keys below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Target architecture file.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// idx | cifar-binary
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use at most this many training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// layer-count | fan-in
    #[arg(long)]
    pub init: Option<String>,
    /// scale | preserve
    #[arg(long)]
    pub amplitude: Option<String>,
    /// target | pretrain
    #[arg(long)]
    pub network: Option<String>,
    /// Pre-train checkpoint to resize.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to resume training from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Scale plan (JSON); written by `derive`, read by `resize-continue`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Comma-separated pre-train epochs to resize at.
    #[arg(long, value_delimiter = ',')]
    pub resize_epochs: Option<Vec<usize>>,
    /// scheduled | extra
    #[arg(long)]
    pub mode: Option<String>,
    /// Longest hold in extra mode.
    #[arg(long)]
    pub max_hold: Option<usize>,
    /// Train the uninterrupted target too (experiment).
    #[arg(long)]
    pub baseline: Option<bool>,
    /// Save a checkpoint every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Built-in schedule: desk | overfeat
    #[arg(long)]
    pub preset: Option<String>,
    /// Explicit schedule; config file only.
    #[arg(skip)]
    pub schedule: Option<TrainingSchedule>,
}

macro_rules! merge_fields {
    ($flags:ident, $file:ident; $($f:ident),*) => {
        Settings {
            config: $flags.config,
            $($f: match ($flags.$f, $file.$f) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage(format!(
                        "'{}' is set both on the command line and in the config file",
                        stringify!($f).replace('_', "-")
                    )))
                }
                (a, b) => a.or(b),
            },)*
        }
    };
}

impl Settings {
    /// Combines flags with the config file, if one was named.
    pub fn resolve(self) -> Result<Settings, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = load_config(&path)?;
        let flags = self;
        Ok(merge_fields!(flags, file;
            arch, data, format, seed, out, train_limit, test_limit, init, amplitude, network,
            checkpoint, resume, plan, resize_epochs, mode, max_hold, baseline, checkpoint_every,
            preset, schedule))
    }

    pub fn required<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("missing --{key}")))
    }

    pub fn format(&self) -> Result<DatasetFormat, CliError> {
        self.format
            .as_deref()
            .map_or(Ok(DatasetFormat::CifarBinary), |s| s.parse().map_err(CliError::from))
    }

    pub fn init(&self) -> Result<InitRule, CliError> {
        match self.init.as_deref() {
            None | Some("layer-count") => Ok(InitRule::LayerCount),
            Some("fan-in") => Ok(InitRule::FanIn),
            Some(o) => Err(CliError::Usage(format!("--init must be layer-count or fan-in, got '{o}'"))),
        }
    }

    pub fn amplitude(&self) -> Result<Option<Amplitude>, CliError> {
        match self.amplitude.as_deref() {
            None => Ok(None),
            Some("scale") => Ok(Some(Amplitude::Scale)),
            Some("preserve") => Ok(Some(Amplitude::Preserve)),
            Some(o) => Err(CliError::Usage(format!("--amplitude must be scale or preserve, got '{o}'"))),
        }
    }

    pub fn pretrain_network(&self) -> Result<bool, CliError> {
        match self.network.as_deref() {
            None | Some("target") => Ok(false),
            Some("pretrain") => Ok(true),
            Some(o) => Err(CliError::Usage(format!("--network must be target or pretrain, got '{o}'"))),
        }
    }

    pub fn schedule(&self) -> Result<TrainingSchedule, CliError> {
        let s = match (&self.schedule, self.preset.as_deref()) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage("give either a [schedule] table or --preset, not both".into()))
            }
            (Some(s), None) => s.clone(),
            (None, None | Some("desk")) => TrainingSchedule::desk(),
            (None, Some("overfeat")) => TrainingSchedule::overfeat(),
            (None, Some(o)) => return Err(CliError::Usage(format!("--preset must be desk or overfeat, got '{o}'"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn mode(&self, schedule: &TrainingSchedule) -> Result<ContinueMode, CliError> {
        match self.mode.as_deref() {
            None | Some("scheduled") => Ok(ContinueMode::Scheduled),
            Some("extra") => Ok(ContinueMode::Extra {
                max_hold: self.max_hold.unwrap_or(schedule.total_epochs),
            }),
            Some(o) => Err(CliError::Usage(format!("--mode must be scheduled or extra, got '{o}'"))),
        }
    }
}

fn load_config(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}
