//! Run configuration and its flat `key = value` text form.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wcnn::network::{NetworkSpec, SubbandMode};
use wcnn::train::TrainConfig;
use wcnn::{Error, Result};

/// Where the images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `root/<class>/<group>/<image>.ppm`
    Directory(PathBuf),
    /// A named generator preset.
    Synthetic(String),
}

/// Which train/test partition(s) to run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitSpec {
    /// Synthetic data: holdout of group 0. Directories: every group split.
    Auto,
    /// Train on one group of every class.
    Holdout(usize),
    /// One run per sample group, reported as mean and std.
    Groups,
    /// Train and test membership from list files.
    Lists { train: PathBuf, test: PathBuf },
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Auto => f.write_str("auto"),
            SplitSpec::Holdout(g) => write!(f, "holdout:{g}"),
            SplitSpec::Groups => f.write_str("groups"),
            SplitSpec::Lists { train, test } => {
                write!(f, "lists:{},{}", train.display(), test.display())
            }
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Argument(format!(
                "bad split {s:?} (expected auto, groups, holdout:<group> or lists:<train>,<test>)"
            ))
        };
        match s.split_once(':') {
            None if s == "auto" => Ok(SplitSpec::Auto),
            None if s == "groups" => Ok(SplitSpec::Groups),
            Some(("holdout", g)) => g.parse().map(SplitSpec::Holdout).map_err(|_| bad()),
            Some(("lists", rest)) => {
                let (train, test) = rest.split_once(',').ok_or_else(bad)?;
                if train.is_empty() || test.is_empty() {
                    return Err(bad());
                }
                Ok(SplitSpec::Lists {
                    train: train.into(),
                    test: test.into(),
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub data_seed: u64,
    pub split: SplitSpec,
    pub levels: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub subband_mode: SubbandMode,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synthetic("gratings4".into()),
            synthetic_train: 100,
            synthetic_test: 50,
            data_seed: 0,
            split: SplitSpec::Auto,
            levels: 3,
            base_channels: NetworkSpec::DEFAULT_BASE_CHANNELS,
            stages: NetworkSpec::DEFAULT_STAGES,
            subband_mode: SubbandMode::All,
            train: TrainConfig::default(),
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Argument(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Argument(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Keys in the order they are written; only one of `data` and
    /// `synthetic` appears.
    pub const KEYS: [&'static str; 23] = [
        "data",
        "synthetic",
        "synthetic_train",
        "synthetic_test",
        "data_seed",
        "split",
        "levels",
        "base_channels",
        "stages",
        "subband_mode",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "batch_size",
        "epochs",
        "seed",
        "crop_source_size",
        "crop_target_size",
        "flip",
        "target_accuracy",
        "log_wall_time",
        "out",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data" => self.data = DataSource::Directory(value.into()),
            "synthetic" => self.data = DataSource::Synthetic(value.into()),
            "synthetic_train" => self.synthetic_train = parse(key, value)?,
            "synthetic_test" => self.synthetic_test = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "split" => self.split = value.parse()?,
            "levels" => self.levels = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "stages" => self.stages = parse(key, value)?,
            "subband_mode" => self.subband_mode = value.parse()?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "crop_source_size" => t.crop_source_size = parse(key, value)?,
            "crop_target_size" => t.crop_target_size = parse(key, value)?,
            "flip" => t.flip_enabled = parse_bool(key, value)?,
            "target_accuracy" => {
                t.target_accuracy = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "log_wall_time" => t.log_wall_time = parse_bool(key, value)?,
            "out" => self.out = value.into(),
            other => return Err(Error::Argument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    n + 1
                ))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Argument(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every field, one per line, in [`Self::KEYS`] order. Paths and preset
    /// names must not contain `#` or line breaks.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::Directory(p) => put("data", &p.display()),
            DataSource::Synthetic(name) => put("synthetic", name),
        }
        put("synthetic_train", &self.synthetic_train);
        put("synthetic_test", &self.synthetic_test);
        put("data_seed", &self.data_seed);
        put("split", &self.split);
        put("levels", &self.levels);
        put("base_channels", &self.base_channels);
        put("stages", &self.stages);
        put("subband_mode", &self.subband_mode);
        put("learning_rate", &t.learning_rate);
        put("adam_beta1", &t.adam_beta1);
        put("adam_beta2", &t.adam_beta2);
        put("adam_eps", &t.adam_eps);
        put("batch_size", &t.batch_size);
        put("epochs", &t.epochs);
        put("seed", &t.seed);
        put("crop_source_size", &t.crop_source_size);
        put("crop_target_size", &t.crop_target_size);
        put("flip", &t.flip_enabled);
        match t.target_accuracy {
            Some(a) => put("target_accuracy", &a),
            None => put("target_accuracy", &"none"),
        }
        put("log_wall_time", &t.log_wall_time);
        put("out", &self.out.display());
        s
    }

    pub fn network_spec(&self, channels: usize, classes: usize) -> NetworkSpec {
        let side = self.train.crop_target_size;
        NetworkSpec::new([channels, side, side], self.levels, classes)
            .with_base_channels(self.base_channels)
            .with_stages(self.stages)
            .with_subband_mode(self.subband_mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic(_) = self.data {
            if self.synthetic_train == 0 || self.synthetic_test == 0 {
                return Err(Error::Argument(
                    "synthetic_train and synthetic_test must be positive".into(),
                ));
            }
        }
        self.network_spec(3, 2).validate()
    }
}
