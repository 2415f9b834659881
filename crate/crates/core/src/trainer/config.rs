//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional
//! and defaults to the toy preset; `frames` defaults to the task's clip length.
//! The model's output channel count is not a key: it follows from the task
//! (1 for binary tasks, background plus `n_classes` for AVSS).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{SynthConfig, Task};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::AdamWConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub task: Task,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Clips per step, stacked along the frame axis.
    pub batch_size: usize,
    /// Seeds parameter init and the order of training clips.
    pub seed: u64,
    /// Base seed of the train/val/test split.
    pub data_seed: u64,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    pub eval_every: usize,
    /// Clips scored per evaluation.
    pub eval_clips: usize,
    /// Object categories in the synthetic data.
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub checkpoint_path: Option<PathBuf>,
    /// Directory receiving `steps.csv` and `eval.csv`.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy(Task::S4)
    }
}

impl TrainConfig {
    pub fn toy(task: Task) -> Self {
        let mut c = TrainConfig {
            model: ModelConfig::toy(),
            task,
            steps: 2000,
            lr: 1.5e-4,
            weight_decay: 1e-4,
            batch_size: 2,
            seed: 0,
            data_seed: 0,
            eval_every: 200,
            eval_clips: 30,
            n_classes: 6,
            noise_sigma: 0.05,
            checkpoint_path: None,
            log_path: None,
        };
        c.model.frames = task.default_frames();
        c.model.n_class = output_classes(task, c.n_classes);
        c
    }

    /// Tiny preset for smoke runs.
    pub fn micro(task: Task) -> Self {
        let mut c = Self::toy(task);
        c.model = ModelConfig::micro();
        c.model.n_class = output_classes(task, c.n_classes);
        c.steps = 20;
        c.eval_every = 10;
        c.eval_clips = 4;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth().validate()?;
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be finite and > 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.eval_clips == 0 {
            return Err(Error::config(
                "batch_size and eval_clips must be at least 1",
            ));
        }
        let want = output_classes(self.task, self.n_classes);
        if self.model.n_class != want {
            return Err(Error::config(format!(
                "task {} with {} object classes needs {want} output channels, model has {}",
                self.task, self.n_classes, self.model.n_class
            )));
        }
        Ok(())
    }

    /// Data generator settings implied by the model extents.
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            height: self.model.height,
            width: self.model.width,
            audio_dim: self.model.d_model,
            n_classes: self.n_classes,
            noise_sigma: self.noise_sigma,
            frames: Some(self.model.frames),
            ..SynthConfig::default()
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Canonical text form; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("write to String");
        };
        kv("task", &self.task);
        kv("steps", &self.steps);
        kv("lr", &self.lr);
        kv("weight_decay", &self.weight_decay);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("data_seed", &self.data_seed);
        kv("eval_every", &self.eval_every);
        kv("eval_clips", &self.eval_clips);
        kv("n_classes", &self.n_classes);
        kv("noise_sigma", &self.noise_sigma);
        kv("d_model", &m.d_model);
        kv("n_head", &m.n_head);
        kv("n_enc_layers", &m.n_enc_layers);
        kv("n_dec_layers", &m.n_dec_layers);
        kv("n_query", &m.n_query);
        kv("height", &m.height);
        kv("width", &m.width);
        kv("frames", &m.frames);
        kv("use_learnable_queries", &m.use_learnable_queries);
        kv("mixer", &m.mixer);
        kv("lambda_mix", &m.lambda_mix);
        kv("stub_width", &m.stub_width);
        if let Some(p) = &self.checkpoint_path {
            kv("checkpoint_path", &p.display());
        }
        if let Some(p) = &self.log_path {
            kv("log_path", &p.display());
        }
        s
    }

    /// Parses and validates. Errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, (usize, String)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {line_no}: expected `key = value`, got `{line}`"
                ))
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::config(format!("line {line_no}: unknown key `{k}`")));
            }
            if let Some((first, _)) = entries.get(k) {
                return Err(Error::config(format!(
                    "line {line_no}: duplicate key `{k}` (first set on line {first})"
                )));
            }
            entries.insert(k.to_string(), (line_no, v.trim().to_string()));
        }

        let p = Fields { entries: &entries };
        let task: Task = p.get("task")?.unwrap_or(Task::S4);
        let mut c = TrainConfig::toy(task);
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = p.get($key)? {
                    $field = v;
                }
            };
        }
        set!("steps", c.steps);
        set!("lr", c.lr);
        set!("weight_decay", c.weight_decay);
        set!("batch_size", c.batch_size);
        set!("seed", c.seed);
        set!("data_seed", c.data_seed);
        set!("eval_every", c.eval_every);
        set!("eval_clips", c.eval_clips);
        set!("n_classes", c.n_classes);
        set!("noise_sigma", c.noise_sigma);
        set!("d_model", c.model.d_model);
        set!("n_head", c.model.n_head);
        set!("n_enc_layers", c.model.n_enc_layers);
        set!("n_dec_layers", c.model.n_dec_layers);
        set!("n_query", c.model.n_query);
        set!("height", c.model.height);
        set!("width", c.model.width);
        set!("frames", c.model.frames);
        set!("use_learnable_queries", c.model.use_learnable_queries);
        set!("mixer", c.model.mixer);
        set!("lambda_mix", c.model.lambda_mix);
        set!("stub_width", c.model.stub_width);
        c.checkpoint_path = p.get::<String>("checkpoint_path")?.map(PathBuf::from);
        c.log_path = p.get::<String>("log_path")?.map(PathBuf::from);
        c.model.n_class = output_classes(task, c.n_classes);
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for TrainConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub fn output_classes(task: Task, n_classes: usize) -> usize {
    if task.is_semantic() {
        n_classes + 1
    } else {
        1
    }
}

const KEYS: &[&str] = &[
    "task",
    "steps",
    "lr",
    "weight_decay",
    "batch_size",
    "seed",
    "data_seed",
    "eval_every",
    "eval_clips",
    "n_classes",
    "noise_sigma",
    "d_model",
    "n_head",
    "n_enc_layers",
    "n_dec_layers",
    "n_query",
    "height",
    "width",
    "frames",
    "use_learnable_queries",
    "mixer",
    "lambda_mix",
    "stub_width",
    "checkpoint_path",
    "log_path",
];

struct Fields<'a> {
    entries: &'a HashMap<String, (usize, String)>,
}

impl Fields<'_> {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                Error::config(format!("line {line}: invalid value `{v}` for `{key}`: {e}"))
            }),
        }
    }
}
