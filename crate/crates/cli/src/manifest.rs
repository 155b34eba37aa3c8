//! Run directory bookkeeping: layout, `manifest.json`, fingerprints and the
//! per-run lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use cdcgcn::dataset::{ITEM_IDS_FILE, META_FILE, TEST_FILE, TRAIN_FILE, USER_IDS_FILE, VAL_FILE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::DataError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const COMMUNITIES_FILE: &str = "communities.tsv";
pub const DEBIASED_TEST_FILE: &str = "test_debiased.tsv";

/// Files that make up the dataset fingerprint, in hashing order.
const SPLIT_FILES: [&str; 6] = [TRAIN_FILE, VAL_FILE, TEST_FILE, USER_IDS_FILE, ITEM_IDS_FILE, META_FILE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    /// Plain embedding model (pretrained base or a baseline).
    Base,
    /// Debiased model with discriminator and fusion weights.
    Cdcgcn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Relative to the run directory.
    pub path: String,
    pub kind: CheckpointKind,
    /// Base checkpoint fused at inference, by name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<String>,
    /// Dataset fingerprint the checkpoint was trained on.
    pub dataset: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Every resolved key the stage ran with.
    pub config: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// sha256 over the split files.
    pub dataset: Option<String>,
    /// sha256 of `community/communities.tsv`.
    pub communities: Option<String>,
    /// Dataset fingerprint the communities were detected on.
    pub communities_dataset: Option<String>,
    pub checkpoints: BTreeMap<String, Checkpoint>,
    /// Produced files relative to the run directory.
    pub artifacts: Vec<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

/// A run directory and its manifest, held under the lock.
pub struct Run {
    pub root: PathBuf,
    pub manifest: RunManifest,
    _lock: Lock,
}

impl Run {
    pub fn open(root: &Path) -> anyhow::Result<Self> {
        for sub in ["splits", "community", "checkpoints", "logs", "reports"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        let lock = Lock::acquire(&root.join(LOCK_FILE))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| DataError(format!("{}: {e}", path.display())))?
        } else {
            RunManifest::default()
        };
        Ok(Self {
            root: root.to_owned(),
            manifest,
            _lock: lock,
        })
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn communities_path(&self) -> PathBuf {
        self.root.join("community").join(COMMUNITIES_FILE)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Records an artifact; every listed path must exist.
    pub fn artifact(&mut self, path: &Path) -> anyhow::Result<()> {
        if !path.exists() {
            bail!("artifact {} was not written", path.display());
        }
        let rel = path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().into_owned();
        if !self.manifest.artifacts.contains(&rel) {
            self.manifest.artifacts.push(rel);
            self.manifest.artifacts.sort();
        }
        Ok(())
    }

    pub fn stage(&mut self, name: &str, config: BTreeMap<String, String>, seconds: f64) {
        self.manifest.stages.insert(name.to_owned(), StageRecord { config, seconds });
    }

    pub fn save(&self) -> anyhow::Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&tmp, json + "\n").with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Dataset fingerprint of the split on disk; fails unless it matches the
    /// manifest.
    pub fn require_dataset(&self) -> anyhow::Result<String> {
        let Some(recorded) = &self.manifest.dataset else {
            return Err(DataError(format!("{}: no split recorded, run `split` first", self.root.display())).into());
        };
        let current = dataset_fingerprint(&self.splits())?;
        if &current != recorded {
            return Err(DataError(format!("{}: split files changed since `split` ran", self.splits().display())).into());
        }
        Ok(current)
    }

    /// Dataset fingerprint, also checking that the communities were detected
    /// on this split and are unchanged.
    pub fn require_communities(&self) -> anyhow::Result<String> {
        let ds = self.require_dataset()?;
        let path = self.communities_path();
        let (Some(recorded), Some(on)) = (&self.manifest.communities, &self.manifest.communities_dataset) else {
            return Err(DataError(format!("{}: no communities recorded, run `detect` first", self.root.display())).into());
        };
        if on != &ds {
            return Err(DataError("communities were detected on a different split, rerun `detect`".into()).into());
        }
        if &file_fingerprint(&path)? != recorded {
            return Err(DataError(format!("{}: changed since `detect` ran", path.display())).into());
        }
        Ok(ds)
    }

    /// A checkpoint trained on the current split.
    pub fn require_checkpoint(&self, name: &str, dataset: &str) -> anyhow::Result<Checkpoint> {
        let Some(c) = self.manifest.checkpoints.get(name) else {
            let known: Vec<&str> = self.manifest.checkpoints.keys().map(String::as_str).collect();
            return Err(DataError(format!("no checkpoint named {name:?} (known: {})", known.join(", "))).into());
        };
        if c.dataset != dataset {
            return Err(DataError(format!("checkpoint {name:?} was trained on a different split")).into());
        }
        if !self.path(&c.path).exists() {
            return Err(DataError(format!("{}: missing", self.path(&c.path).display())).into());
        }
        Ok(c.clone())
    }
}

pub fn file_fingerprint(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Hash of the split files, each prefixed by its name and length.
pub fn dataset_fingerprint(dir: &Path) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    for name in SPLIT_FILES {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| DataError(format!("{}: {e}", p.display())))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exclusive lock file removed on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(path: &Path) -> anyhow::Result<Self> {
        match fs::OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path.to_owned()))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(path).unwrap_or_default();
                Err(DataError(format!(
                    "{} is held by process {} (delete it if that process is gone)",
                    path.display(),
                    owner.trim()
                ))
                .into())
            }
            Err(e) => Err(DataError(format!("{}: {e}", path.display())).into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}
