//! Experiment configuration as line-oriented `key = value` text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::AdamConfig;
use crate::env::ExpertConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::policy::{Architecture, Mode};
use crate::train::TrainSettings;

/// Every knob of a run. Defaults reproduce the reference hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Actions per predicted chunk.
    pub chunk: usize,
    /// Executed actions fed back as history. Must equal `chunk`.
    pub history: usize,
    pub k_max: usize,
    /// Neighbours per sample in the dispersion table.
    pub neighbors: usize,
    pub lambda_rec: f64,
    pub lambda_div: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub scheduler_lr: f64,
    pub cosine_decay: bool,
    pub seed: u64,
    pub demos: usize,
    /// Map file; `None` selects the built-in map.
    pub map: Option<PathBuf>,
    pub out: PathBuf,
    pub eval_rollouts: usize,
    pub eval_seed: u64,
    pub rollout_horizon: usize,
    pub replan_every: usize,
    pub field_hidden: Vec<usize>,
    pub scheduler_hidden: Vec<usize>,
    /// Expert waypoint noise before and through the passages.
    pub jitter: f64,
    /// Expert waypoint noise on the shared route after the passages.
    pub gate_jitter: f64,
    /// Save an intermediate checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Noise scales for the variance sweep.
    pub sweep_sigmas: Vec<f64>,
    pub sweep_epochs: usize,
    pub sweep_demos: usize,
    pub sweep_rollouts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            mode: Mode::Mars,
            chunk: 8,
            history: 8,
            k_max: 10,
            neighbors: 20,
            lambda_rec: 1.0,
            lambda_div: 1.0,
            batch: 32,
            epochs: 50,
            lr: 1e-3,
            scheduler_lr: 1e-2,
            cosine_decay: true,
            seed: 0,
            demos: 200,
            map: None,
            out: PathBuf::from("runs/default"),
            eval_rollouts: 100,
            eval_seed: 1_000_000,
            rollout_horizon: 150,
            replan_every: 8,
            field_hidden: arch.field_hidden,
            scheduler_hidden: arch.scheduler_hidden,
            jitter: ExpertConfig::default().jitter,
            gate_jitter: ExpertConfig::default().gate_jitter,
            checkpoint_every: 5,
            sweep_sigmas: vec![0.0, 1.0, 4.0, 10.0],
            sweep_epochs: 30,
            sweep_demos: 200,
            sweep_rollouts: 100,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in echo order.
pub const KEYS: &[&str] = &[
    "mode",
    "chunk",
    "history",
    "k_max",
    "neighbors",
    "lambda_rec",
    "lambda_div",
    "batch",
    "epochs",
    "lr",
    "scheduler_lr",
    "cosine_decay",
    "seed",
    "demos",
    "map",
    "out",
    "eval_rollouts",
    "eval_seed",
    "rollout_horizon",
    "replan_every",
    "field_hidden",
    "scheduler_hidden",
    "jitter",
    "gate_jitter",
    "checkpoint_every",
    "sweep_sigmas",
    "sweep_epochs",
    "sweep_demos",
    "sweep_rollouts",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = v.parse()?,
            "chunk" => self.chunk = parse(key, v)?,
            "history" => self.history = parse(key, v)?,
            "k_max" => self.k_max = parse(key, v)?,
            "neighbors" => self.neighbors = parse(key, v)?,
            "lambda_rec" => self.lambda_rec = parse(key, v)?,
            "lambda_div" => self.lambda_div = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "scheduler_lr" => self.scheduler_lr = parse(key, v)?,
            "cosine_decay" => self.cosine_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "demos" => self.demos = parse(key, v)?,
            "map" => self.map = (!v.is_empty() && v != "default").then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "eval_rollouts" => self.eval_rollouts = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "rollout_horizon" => self.rollout_horizon = parse(key, v)?,
            "replan_every" => self.replan_every = parse(key, v)?,
            "field_hidden" => self.field_hidden = parse_list(key, v)?,
            "scheduler_hidden" => self.scheduler_hidden = parse_list(key, v)?,
            "jitter" => self.jitter = parse(key, v)?,
            "gate_jitter" => self.gate_jitter = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "sweep_sigmas" => self.sweep_sigmas = parse_list(key, v)?,
            "sweep_epochs" => self.sweep_epochs = parse(key, v)?,
            "sweep_demos" => self.sweep_demos = parse(key, v)?,
            "sweep_rollouts" => self.sweep_rollouts = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Text form of one field, the inverse of [`set`](Self::set).
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mode" => self.mode.to_string(),
            "chunk" => self.chunk.to_string(),
            "history" => self.history.to_string(),
            "k_max" => self.k_max.to_string(),
            "neighbors" => self.neighbors.to_string(),
            "lambda_rec" => self.lambda_rec.to_string(),
            "lambda_div" => self.lambda_div.to_string(),
            "batch" => self.batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "scheduler_lr" => self.scheduler_lr.to_string(),
            "cosine_decay" => self.cosine_decay.to_string(),
            "seed" => self.seed.to_string(),
            "demos" => self.demos.to_string(),
            "map" => self.map.as_ref().map_or("default".into(), |p| p.display().to_string()),
            "out" => self.out.display().to_string(),
            "eval_rollouts" => self.eval_rollouts.to_string(),
            "eval_seed" => self.eval_seed.to_string(),
            "rollout_horizon" => self.rollout_horizon.to_string(),
            "replan_every" => self.replan_every.to_string(),
            "field_hidden" => join(&self.field_hidden),
            "scheduler_hidden" => join(&self.scheduler_hidden),
            "jitter" => self.jitter.to_string(),
            "gate_jitter" => self.gate_jitter.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "sweep_sigmas" => join(&self.sweep_sigmas),
            "sweep_epochs" => self.sweep_epochs.to_string(),
            "sweep_demos" => self.sweep_demos.to_string(),
            "sweep_rollouts" => self.sweep_rollouts.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                what: "config",
                detail: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Malformed {
                what: "config",
                detail: format!("line {}: {e}", lineno + 1),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field as `key = value`, parseable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.mode.validate()?;
        if self.chunk == 0 {
            return fail("chunk must be positive".into());
        }
        if self.history != self.chunk {
            return fail(format!(
                "history ({}) must equal chunk ({}): the history prior has the chunk's shape",
                self.history, self.chunk
            ));
        }
        if self.k_max == 0 || self.neighbors == 0 || self.batch == 0 || self.replan_every == 0 {
            return fail("k_max, neighbors, batch and replan_every must be positive".into());
        }
        if self.replan_every > self.chunk {
            return fail(format!(
                "replan_every ({}) exceeds the chunk ({})",
                self.replan_every, self.chunk
            ));
        }
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_div", self.lambda_div),
            ("jitter", self.jitter),
            ("gate_jitter", self.gate_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("scheduler_lr", self.scheduler_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.demos == 0 || self.sweep_demos == 0 {
            return fail("demo counts must be positive".into());
        }
        if self.field_hidden.contains(&0) || self.scheduler_hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if let Some(s) = self.sweep_sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return fail(format!("sweep sigmas must be non-negative, got {s}"));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            field_hidden: self.field_hidden.clone(),
            scheduler_hidden: self.scheduler_hidden.clone(),
        }
    }

    pub fn expert(&self) -> ExpertConfig {
        ExpertConfig {
            jitter: self.jitter,
            gate_jitter: self.gate_jitter,
            ..ExpertConfig::default()
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            scheduler_adam: AdamConfig {
                lr: self.scheduler_lr,
                ..AdamConfig::default()
            },
            loss: LossConfig {
                lambda_rec: self.lambda_rec,
                lambda_div: self.lambda_div,
                ..LossConfig::default()
            },
            cosine_decay: self.cosine_decay,
        }
    }
}
