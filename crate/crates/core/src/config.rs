//! Flat `key = value` hyper-parameter sets.
//!
//! Each config knows its own keys; unknown keys are reported to the caller
//! so a front end can combine several configs and still reject typos.

use std::fmt::Display;
use std::str::FromStr;

use serde::Serialize;

use crate::conv::LayerCombine;
use crate::discriminator::{DEFAULT_GLOBAL_DIM, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::model::{ModelKind, DEFAULT_DIM, DEFAULT_LIGHTGCN_LAYERS};

/// A set of named parameters settable from strings.
pub trait KeyValues {
    /// Sets `key`; `Ok(false)` if the key does not belong to this config.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
    /// Every key with its current value, in a fixed order.
    fn to_kv(&self) -> Vec<(&'static str, String)>;
    fn validate(&self) -> Result<()>;
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

fn parse_combine(key: &str, value: &str) -> Result<LayerCombine> {
    match value.trim().to_ascii_lowercase().as_str() {
        "sum" => Ok(LayerCombine::Sum),
        "mean" => Ok(LayerCombine::Mean),
        other => Err(Error::Config(format!("{key}: expected sum or mean, got {other:?}"))),
    }
}

fn combine_name(c: LayerCombine) -> &'static str {
    match c {
        LayerCombine::Sum => "sum",
        LayerCombine::Mean => "mean",
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Ablation {
    /// Feed `e^base` to the discriminator without community propagation.
    pub no_cgcn: bool,
    /// Drop the discriminator and the adversarial loss.
    pub no_cd: bool,
    /// Uniform negatives (`alpha = 0`).
    pub no_cns: bool,
    /// Score with the debiased model alone (`eta = 1`).
    pub no_uis: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingConfig {
    #[serde(serialize_with = "ser_display")]
    pub base: ModelKind,
    pub dim: usize,
    /// LightGCN depth.
    pub layers: usize,
    pub cgcn_layers: usize,
    #[serde(serialize_with = "ser_combine")]
    pub cgcn_combine: LayerCombine,
    pub hidden: usize,
    pub global_dim: usize,
    pub learning_rate: f64,
    pub l2_base: f64,
    pub l2_disc: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub eval_every: usize,
    /// Evaluations without a validation Recall@20 improvement before stopping.
    pub patience: usize,
    pub ablation: Ablation,
}

fn ser_display<S: serde::Serializer>(v: &ModelKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn ser_combine<S: serde::Serializer>(v: &LayerCombine, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(combine_name(*v))
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            base: ModelKind::LightGcn,
            dim: DEFAULT_DIM,
            layers: DEFAULT_LIGHTGCN_LAYERS,
            cgcn_layers: 2,
            cgcn_combine: LayerCombine::Sum,
            hidden: DEFAULT_HIDDEN,
            global_dim: DEFAULT_GLOBAL_DIM,
            learning_rate: 1e-3,
            l2_base: 1e-3,
            l2_disc: 1e-7,
            batch_size: 2048,
            epochs: 1000,
            seed: 42,
            alpha: 0.5,
            beta: 0.5,
            eval_every: 10,
            patience: 20,
            ablation: Ablation::default(),
        }
    }
}

impl TrainingConfig {
    /// Negative-sampling mixture actually used after ablation.
    pub fn effective_alpha(&self) -> f64 {
        if self.ablation.no_cns {
            0.0
        } else {
            self.alpha
        }
    }
}

impl KeyValues for TrainingConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "base" => self.base = value.trim().parse()?,
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "cgcn_layers" => self.cgcn_layers = parse(key, value)?,
            "cgcn_combine" => self.cgcn_combine = parse_combine(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "global_dim" => self.global_dim = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "l2_base" => self.l2_base = parse(key, value)?,
            "l2_disc" => self.l2_disc = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "no_cgcn" => self.ablation.no_cgcn = parse_bool(key, value)?,
            "no_cd" => self.ablation.no_cd = parse_bool(key, value)?,
            "no_cns" => self.ablation.no_cns = parse_bool(key, value)?,
            "no_uis" => self.ablation.no_uis = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base", self.base.to_string()),
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("cgcn_layers", self.cgcn_layers.to_string()),
            ("cgcn_combine", combine_name(self.cgcn_combine).to_string()),
            ("hidden", self.hidden.to_string()),
            ("global_dim", self.global_dim.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("l2_base", self.l2_base.to_string()),
            ("l2_disc", self.l2_disc.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("no_cgcn", self.ablation.no_cgcn.to_string()),
            ("no_cd", self.ablation.no_cd.to_string()),
            ("no_cns", self.ablation.no_cns.to_string()),
            ("no_uis", self.ablation.no_uis.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("global_dim", self.global_dim),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (k, v) in [("l2_base", self.l2_base), ("l2_disc", self.l2_disc), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be a finite non-negative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineConfig {
    /// MMR relevance/diversity trade-off in [0, 1].
    pub lambda: f64,
    /// Fairness regularizer strength.
    pub gamma: f64,
    /// IPS propensity of cross-community interactions, in (0, 1].
    pub delta: f64,
    /// MMR candidate pool per user.
    pub pool_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 0.1,
            delta: 0.5,
            pool_size: 1000,
        }
    }
}

impl KeyValues for BaselineConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "pool_size" => self.pool_size = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lambda", self.lambda.to_string()),
            ("gamma", self.gamma.to_string()),
            ("delta", self.delta.to_string()),
            ("pool_size", self.pool_size.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be positive".into()));
        }
        Ok(())
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies pairs to the first config that accepts each key.
pub fn apply_kv(pairs: &[(String, String)], targets: &mut [&mut dyn KeyValues]) -> Result<()> {
    'pairs: for (k, v) in pairs {
        for t in targets.iter_mut() {
            if t.set(k, v)? {
                continue 'pairs;
            }
        }
        return Err(Error::Config(format!("unknown key {k:?}")));
    }
    Ok(())
}
