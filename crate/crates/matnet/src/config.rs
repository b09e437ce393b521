//! Flat `key = value` configuration text with `[section]` headers.
//!
//! ```text
//! [train]
//! problem = atsp
//! size = 10
//! [model]
//! layers = 3
//! init_b = one_hot:10
//! ```

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use matnet_core::encoder::{EncoderConfig, InitScheme, UpdateMode};
use matnet_core::model;

use crate::error::{AppError, Result};

/// Parsed entries keyed by `section.key` (or just `key` before any header).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| AppError::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| AppError::config(key, format!("cannot parse `{v}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Atsp,
    Ffsp,
}

impl FromStr for Problem {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "atsp" => Ok(Problem::Atsp),
            "ffsp" => Ok(Problem::Ffsp),
            _ => Err(()),
        }
    }
}

impl Problem {
    pub fn as_str(self) -> &'static str {
        match self {
            Problem::Atsp => "atsp",
            Problem::Ffsp => "ffsp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtspGenerator {
    Tmat,
    Euclidean,
}

impl AtspGenerator {
    pub fn scale(self) -> f64 {
        match self {
            AtspGenerator::Tmat => matnet_core::atsp::TMAT_SCALE,
            AtspGenerator::Euclidean => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub problem: Problem,
    /// Cities (ATSP) or jobs (FFSP).
    pub size: usize,
    pub stages: usize,
    pub machines: usize,
    pub generator: AtspGenerator,
    pub encoder: EncoderConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub instances_per_epoch: usize,
    pub epochs: usize,
    pub grad_accum: usize,
    /// FFSP machine-order trajectories per instance.
    pub trajectories: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale ATSP preset: 10 cities, 3 layers, 64 wide.
    pub fn atsp_toy() -> Self {
        TrainConfig {
            problem: Problem::Atsp,
            size: 10,
            stages: 0,
            machines: 0,
            generator: AtspGenerator::Tmat,
            encoder: model::atsp_toy(10),
            lr: 1e-3,
            batch_size: 50,
            instances_per_epoch: 1000,
            epochs: 30,
            grad_accum: 1,
            trajectories: 0,
            seed: 1,
        }
    }

    /// Desk-scale FFSP preset: 3 stages of 4 machines, 10 jobs.
    pub fn ffsp_toy() -> Self {
        TrainConfig {
            problem: Problem::Ffsp,
            size: 10,
            stages: 3,
            machines: 4,
            generator: AtspGenerator::Tmat,
            encoder: model::ffsp_toy(4),
            lr: 1e-3,
            batch_size: 50,
            instances_per_epoch: 1000,
            epochs: 30,
            grad_accum: 1,
            trajectories: 24,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(AppError::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("train.size", self.size)?;
        positive("train.batch_size", self.batch_size)?;
        positive("train.instances_per_epoch", self.instances_per_epoch)?;
        positive("train.grad_accum", self.grad_accum)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AppError::config("train.lr", "must be positive"));
        }
        if self.grad_accum > self.batch_size {
            return Err(AppError::config("train.grad_accum", "cannot exceed batch_size"));
        }
        match self.problem {
            Problem::Atsp => {
                if self.size < 2 {
                    return Err(AppError::config("train.size", "ATSP needs at least 2 cities for a baseline"));
                }
            }
            Problem::Ffsp => {
                positive("train.stages", self.stages)?;
                positive("train.machines", self.machines)?;
                if self.trajectories < 2 {
                    return Err(AppError::config("train.trajectories", "need at least 2 for a baseline"));
                }
            }
        }
        self.encoder.validate()?;
        Ok(())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, origin)?;
        let problem: Problem = kv
            .typed("train.problem")?
            .ok_or_else(|| AppError::config("train.problem", "missing (atsp or ffsp)"))?;
        let mut c = match problem {
            Problem::Atsp => TrainConfig::atsp_toy(),
            Problem::Ffsp => TrainConfig::ffsp_toy(),
        };
        for key in kv.keys() {
            if !KNOWN.contains(&key) {
                return Err(AppError::config(key, "unknown key"));
            }
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = kv.typed($key)? {
                    $field = v;
                }
            };
        }
        set!(c.size, "train.size");
        set!(c.stages, "train.stages");
        set!(c.machines, "train.machines");
        set!(c.lr, "train.lr");
        set!(c.batch_size, "train.batch_size");
        set!(c.instances_per_epoch, "train.instances_per_epoch");
        set!(c.epochs, "train.epochs");
        set!(c.grad_accum, "train.grad_accum");
        set!(c.trajectories, "train.trajectories");
        set!(c.seed, "train.seed");
        if let Some(g) = kv.get("train.generator") {
            c.generator = match g {
                "tmat" => AtspGenerator::Tmat,
                "euclidean" => AtspGenerator::Euclidean,
                _ => return Err(AppError::config("train.generator", format!("unknown generator `{g}`"))),
            };
        }
        let e = &mut c.encoder;
        set!(e.layers, "model.layers");
        set!(e.d_model, "model.d_model");
        set!(e.heads, "model.heads");
        set!(e.d_ff, "model.d_ff");
        set!(e.mixer_hidden, "model.mixer_hidden");
        set!(e.share_update_fn, "model.share_update_fn");
        if let Some(v) = kv.get("model.clip") {
            e.clip = if v == "none" {
                None
            } else {
                Some(v.parse().map_err(|_| AppError::config("model.clip", format!("cannot parse `{v}`")))?)
            };
        }
        if let Some(v) = kv.get("model.update_mode") {
            e.update_mode = parse_update_mode(v).ok_or_else(|| AppError::config("model.update_mode", format!("unknown mode `{v}`")))?;
        }
        if let Some(v) = kv.get("model.init_a") {
            e.init_a = parse_init(v).ok_or_else(|| AppError::config("model.init_a", format!("unknown scheme `{v}`")))?;
        }
        if let Some(v) = kv.get("model.init_b") {
            e.init_b = parse_init(v).ok_or_else(|| AppError::config("model.init_b", format!("unknown scheme `{v}`")))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Canonical text: every field, fixed order; parses back to `self`.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let mut s = String::new();
        writeln!(s, "[train]").unwrap();
        writeln!(s, "problem = {}", self.problem.as_str()).unwrap();
        writeln!(s, "size = {}", self.size).unwrap();
        writeln!(s, "stages = {}", self.stages).unwrap();
        writeln!(s, "machines = {}", self.machines).unwrap();
        let g = match self.generator {
            AtspGenerator::Tmat => "tmat",
            AtspGenerator::Euclidean => "euclidean",
        };
        writeln!(s, "generator = {g}").unwrap();
        writeln!(s, "lr = {:?}", self.lr).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "instances_per_epoch = {}", self.instances_per_epoch).unwrap();
        writeln!(s, "epochs = {}", self.epochs).unwrap();
        writeln!(s, "grad_accum = {}", self.grad_accum).unwrap();
        writeln!(s, "trajectories = {}", self.trajectories).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "[model]").unwrap();
        writeln!(s, "layers = {}", e.layers).unwrap();
        writeln!(s, "d_model = {}", e.d_model).unwrap();
        writeln!(s, "heads = {}", e.heads).unwrap();
        writeln!(s, "d_ff = {}", e.d_ff).unwrap();
        writeln!(s, "mixer_hidden = {}", e.mixer_hidden).unwrap();
        match e.clip {
            Some(c) => writeln!(s, "clip = {c:?}").unwrap(),
            None => writeln!(s, "clip = none").unwrap(),
        }
        writeln!(s, "update_mode = {}", update_mode_str(e.update_mode)).unwrap();
        writeln!(s, "share_update_fn = {}", e.share_update_fn).unwrap();
        writeln!(s, "init_a = {}", init_str(e.init_a)).unwrap();
        writeln!(s, "init_b = {}", init_str(e.init_b)).unwrap();
        s
    }
}

const KNOWN: &[&str] = &[
    "train.problem",
    "train.size",
    "train.stages",
    "train.machines",
    "train.generator",
    "train.lr",
    "train.batch_size",
    "train.instances_per_epoch",
    "train.epochs",
    "train.grad_accum",
    "train.trajectories",
    "train.seed",
    "model.layers",
    "model.d_model",
    "model.heads",
    "model.d_ff",
    "model.mixer_hidden",
    "model.clip",
    "model.update_mode",
    "model.share_update_fn",
    "model.init_a",
    "model.init_b",
];

fn parse_update_mode(v: &str) -> Option<UpdateMode> {
    match v {
        "parallel" => Some(UpdateMode::Parallel),
        "seq_a_first" => Some(UpdateMode::SeqAFirst),
        "seq_b_first" => Some(UpdateMode::SeqBFirst),
        _ => None,
    }
}

fn update_mode_str(m: UpdateMode) -> &'static str {
    match m {
        UpdateMode::Parallel => "parallel",
        UpdateMode::SeqAFirst => "seq_a_first",
        UpdateMode::SeqBFirst => "seq_b_first",
    }
}

fn parse_init(v: &str) -> Option<InitScheme> {
    match v.split_once(':') {
        None if v == "zeros" => Some(InitScheme::Zeros),
        None if v == "random" => Some(InitScheme::RandomVectors),
        Some(("one_hot", n)) => n.parse().ok().map(InitScheme::OneHotPool),
        Some(("learned", n)) => n.parse().ok().map(InitScheme::LearnedPool),
        _ => None,
    }
}

fn init_str(s: InitScheme) -> String {
    match s {
        InitScheme::Zeros => "zeros".into(),
        InitScheme::RandomVectors => "random".into(),
        InitScheme::OneHotPool(n) => format!("one_hot:{n}"),
        InitScheme::LearnedPool(n) => format!("learned:{n}"),
    }
}
