//! Key resolution: config file, then `--set`, then dedicated flags.

use std::collections::BTreeMap;
use std::fs;

use cdcgcn::config::{apply_kv, parse_kv_text, BaselineConfig, KeyValues, TrainingConfig};
use cdcgcn::eval::{CgiMode, DEFAULT_KS};
use cdcgcn::Error;

use crate::args::{Common, TrainFlags};

/// Keys owned by the command line itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub resolution: f64,
    pub ks: Vec<usize>,
    pub cgi: CgiMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            ks: DEFAULT_KS.to_vec(),
            cgi: CgiMode::PerUser,
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> cdcgcn::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let out: cdcgcn::Result<Vec<T>> = value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{key}: cannot parse {s:?}: {e}")))
        })
        .collect();
    let out = out?;
    if out.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(out)
}

impl KeyValues for RunConfig {
    fn set(&mut self, key: &str, value: &str) -> cdcgcn::Result<bool> {
        match key {
            "resolution" => {
                self.resolution = value
                    .trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("resolution: cannot parse {value:?}: {e}")))?
            }
            "ks" => self.ks = parse_list(key, value)?,
            "cgi" => {
                self.cgi = match value.trim() {
                    "per_user" | "per-user" => CgiMode::PerUser,
                    "pooled" => CgiMode::Pooled,
                    other => return Err(Error::Config(format!("cgi: expected per_user or pooled, got {other:?}"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> Vec<(&'static str, String)> {
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        let cgi = match self.cgi {
            CgiMode::PerUser => "per_user",
            CgiMode::Pooled => "pooled",
        };
        vec![
            ("resolution", self.resolution.to_string()),
            ("ks", ks.join(",")),
            ("cgi", cgi.to_string()),
        ]
    }

    fn validate(&self) -> cdcgcn::Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::Config(format!("resolution must be positive, got {}", self.resolution)));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("ks must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Resolved {
    pub train: TrainingConfig,
    pub baseline: BaselineConfig,
    pub run: RunConfig,
}

impl Resolved {
    /// Every key with its resolved value.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let sets: [&dyn KeyValues; 3] = [&self.train, &self.baseline, &self.run];
        for s in sets {
            for (k, v) in s.to_kv() {
                out.insert(k.to_string(), v);
            }
        }
        out
    }
}

/// `--help` footer listing every key and its default.
pub fn keys_help() -> String {
    let snapshot = Resolved::default().snapshot();
    let width = snapshot.keys().map(String::len).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (config file or --set key=value; flags win):\n");
    for (k, v) in snapshot {
        s.push_str(&format!("  {k:<width$}  [default: {v}]\n"));
    }
    s
}

/// Collects overriding pairs from the dedicated training flags.
pub fn train_flag_pairs(f: &TrainFlags, out: &mut Vec<(String, String)>) {
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("base", f.base.clone());
    push("dim", f.dim.map(|v| v.to_string()));
    push("epochs", f.epochs.map(|v| v.to_string()));
    push("learning_rate", f.learning_rate.map(|v| v.to_string()));
    push("batch_size", f.batch_size.map(|v| v.to_string()));
}

pub fn opt_pair<V: ToString>(key: &str, v: Option<V>, out: &mut Vec<(String, String)>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

/// Resolves all keys for one invocation; `flags` are applied last.
pub fn resolve(common: &Common, flags: Vec<(String, String)>) -> cdcgcn::Result<Resolved> {
    let mut pairs = Vec::new();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        pairs.extend(parse_kv_text(&text)?);
    }
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    opt_pair("seed", common.seed, &mut pairs);
    pairs.extend(flags);
    let mut r = Resolved::default();
    apply_kv(&pairs, &mut [&mut r.train, &mut r.baseline, &mut r.run])?;
    r.train.validate()?;
    r.baseline.validate()?;
    r.run.validate()?;
    Ok(r)
}
