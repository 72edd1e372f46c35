//! Run configuration: `section.key = value` text, one entry per line.
//!
//! | key | value |
//! |---|---|
//! | `run.setting` | `basic`, `large`, `more_symbols` |
//! | `run.scheme` | `ujscc`, `me1`, `me2`, `te` |
//! | `run.seed` | unsigned integer |
//! | `run.dataset` | CIFAR-10 binary directory or `synthetic:<count>` |
//! | `run.out` | output directory |
//! | `model.c1`, `model.c2` | channel counts replacing the setting's |
//! | `train.epochs` | maximum epochs |
//! | `train.batch_size`, `train.lr`, `train.lr_halving_epochs`, `train.patience` | schedule |
//! | `train.batches_per_epoch` | cap on mini-batches per epoch |
//! | `train.limit` | cap on training images before the validation split |
//! | `train.val_fraction` | share of training images held out, in (0, 1) |
//! | `train.alpha`, `train.lambda` | comma-separated, one value per order |
//! | `channel.boundaries` | `b_1..b_{K-1}` in dB, comma-separated |
//! | `channel.train_bounds` | `b_0..b_K` in dB, comma-separated |
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ujscc_core::channel::SnrPolicy;
use ujscc_core::codec::{ArchitectureConfig, Setting};
use ujscc_core::pipeline::{TrainConfig, TrainingScheme};

pub const DATA_DIR_ENV: &str = "UJSCC_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic(usize),
    Cifar(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synthetic:") {
            Some(n) => {
                let n: usize = n.trim().parse().with_context(|| format!("bad synthetic image count in `{s}`"))?;
                if n == 0 {
                    bail!("synthetic dataset needs at least one image");
                }
                Ok(DatasetSpec::Synthetic(n))
            }
            None if s.is_empty() => bail!("empty dataset path"),
            None => Ok(DatasetSpec::Cifar(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Synthetic(n) => write!(f, "synthetic:{n}"),
            DatasetSpec::Cifar(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setting: Setting,
    pub scheme: TrainingScheme,
    pub seed: u64,
    pub dataset: Option<DatasetSpec>,
    pub out: PathBuf,
    pub c1: Option<usize>,
    pub c2: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_halving_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batches_per_epoch: Option<usize>,
    pub limit: Option<usize>,
    pub val_fraction: f64,
    pub alpha: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub boundaries: Option<Vec<f64>>,
    pub train_bounds: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            setting: Setting::Basic,
            scheme: TrainingScheme::Ujscc,
            seed: 0,
            dataset: None,
            out: PathBuf::from("runs"),
            c1: None,
            c2: None,
            epochs: None,
            batch_size: None,
            lr: None,
            lr_halving_epochs: None,
            patience: None,
            batches_per_epoch: None,
            limit: None,
            val_fraction: 0.1,
            alpha: None,
            lambda: None,
            boundaries: None,
            train_bounds: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse `{v}`: {e}"))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| num::<f64>(key, s.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `section.key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "run.setting" => self.setting = v.parse()?,
            "run.scheme" => self.scheme = v.parse()?,
            "run.seed" => self.seed = num(key, v)?,
            "run.dataset" => self.dataset = Some(v.parse()?),
            "run.out" => self.out = PathBuf::from(v),
            "model.c1" => self.c1 = Some(num(key, v)?),
            "model.c2" => self.c2 = Some(num(key, v)?),
            "train.epochs" => self.epochs = Some(num(key, v)?),
            "train.batch_size" => self.batch_size = Some(num(key, v)?),
            "train.lr" => self.lr = Some(num(key, v)?),
            "train.lr_halving_epochs" => self.lr_halving_epochs = Some(num(key, v)?),
            "train.patience" => self.patience = Some(num(key, v)?),
            "train.batches_per_epoch" => self.batches_per_epoch = Some(num(key, v)?),
            "train.limit" => self.limit = Some(num(key, v)?),
            "train.val_fraction" => {
                let f: f64 = num(key, v)?;
                if !(f > 0.0 && f < 1.0) {
                    bail!("{key}: must lie in (0, 1), got {f}");
                }
                self.val_fraction = f;
            }
            "train.alpha" => self.alpha = Some(list(key, v)?),
            "train.lambda" => self.lambda = Some(list(key, v)?),
            "channel.boundaries" => self.boundaries = Some(list(key, v)?),
            "channel.train_bounds" => self.train_bounds = Some(list(key, v)?),
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Applies every entry of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `section.key = value`", i + 1))?;
            self.set(k, v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Canonical text form; unset overrides are omitted.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    /// The text stored in checkpoints: everything but the output directory,
    /// so identical runs written to different places stay byte-identical.
    pub fn snapshot(&self) -> String {
        self.render(false)
    }

    fn render(&self, with_out: bool) -> String {
        let mut lines = vec![
            format!("run.setting = {}", self.setting),
            format!("run.scheme = {}", self.scheme),
            format!("run.seed = {}", self.seed),
        ];
        if let Some(d) = &self.dataset {
            lines.push(format!("run.dataset = {d}"));
        }
        if with_out {
            lines.push(format!("run.out = {}", self.out.display()));
        }
        let mut opt = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                lines.push(format!("{key} = {v}"));
            }
        };
        opt("model.c1", self.c1.map(|v| v.to_string()));
        opt("model.c2", self.c2.map(|v| v.to_string()));
        opt("train.epochs", self.epochs.map(|v| v.to_string()));
        opt("train.batch_size", self.batch_size.map(|v| v.to_string()));
        opt("train.lr", self.lr.map(|v| v.to_string()));
        opt("train.lr_halving_epochs", self.lr_halving_epochs.map(|v| v.to_string()));
        opt("train.patience", self.patience.map(|v| v.to_string()));
        opt("train.batches_per_epoch", self.batches_per_epoch.map(|v| v.to_string()));
        opt("train.limit", self.limit.map(|v| v.to_string()));
        opt("train.val_fraction", Some(self.val_fraction.to_string()));
        opt("train.alpha", self.alpha.as_deref().map(join));
        opt("train.lambda", self.lambda.as_deref().map(join));
        opt("channel.boundaries", self.boundaries.as_deref().map(join));
        opt("channel.train_bounds", self.train_bounds.as_deref().map(join));
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    pub fn arch(&self) -> Result<ArchitectureConfig> {
        let base = ArchitectureConfig::for_setting(self.setting);
        let (c1, c2) = (self.c1.unwrap_or(base.c1), self.c2.unwrap_or(base.c2));
        let arch = base.with_channels(c1, c2);
        arch.validate()?;
        Ok(arch)
    }

    pub fn policy(&self) -> Result<SnrPolicy> {
        let d = SnrPolicy::default();
        Ok(SnrPolicy::new(
            self.boundaries.clone().unwrap_or(d.boundaries),
            self.train_bounds.clone().unwrap_or(d.train_bounds),
        )?)
    }

    /// Published hyperparameters for the scheme with this run's overrides.
    pub fn train_config(&self, arch: &ArchitectureConfig) -> Result<TrainConfig> {
        let mut c = TrainConfig::defaults(arch, self.scheme);
        c.seed = self.seed;
        c.policy = self.policy()?;
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.lr_halving_epochs {
            c.lr_halving_epochs = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        c.batches_per_epoch = self.batches_per_epoch.or(c.batches_per_epoch);
        if let Some(v) = &self.alpha {
            c.alpha = v.clone();
        }
        if let Some(v) = &self.lambda {
            c.lambda = v.clone();
        }
        c.validate(arch.num_orders())?;
        Ok(c)
    }

    /// The configured dataset, falling back to `UJSCC_DATA_DIR`.
    pub fn resolve_dataset(&self) -> Result<DatasetSpec> {
        if let Some(d) = &self.dataset {
            return Ok(d.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Ok(DatasetSpec::Cifar(PathBuf::from(dir))),
            _ => bail!("no dataset given: pass --dataset or set {DATA_DIR_ENV}"),
        }
    }
}
