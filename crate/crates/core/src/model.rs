//! Embedding-table base recommenders: plain matrix factorization and
//! LightGCN. Both score a pair by the inner product of their base
//! embeddings; they differ only in how base embeddings derive from the raw
//! tables.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::conv::{BipartiteConv, LayerCombine, Tables};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_LIGHTGCN_LAYERS: usize = 3;
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mf,
    LightGcn,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Mf => 0,
            ModelKind::LightGcn => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Mf),
            1 => Ok(ModelKind::LightGcn),
            _ => Err(Error::Checkpoint(format!("unknown model kind {c}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mf => "mf",
            ModelKind::LightGcn => "lightgcn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(ModelKind::Mf),
            "lightgcn" => Ok(ModelKind::LightGcn),
            other => Err(Error::Config(format!("unknown base model {other:?} (expected mf or lightgcn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    pub kind: ModelKind,
    /// LightGCN propagation depth; ignored for MF.
    pub layers: usize,
    pub seed: u64,
    /// Layer-0 tables, the trainable parameters.
    pub tables: Tables<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// Entries drawn from N(0, 0.1^2) with a generator derived from `seed`.
    pub fn init(num_users: usize, num_items: usize, dim: usize, kind: ModelKind, layers: usize, seed: u64) -> Self {
        let mut rng = rng::rng_for(seed, stream::INIT_BASE);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid normal");
        let mut draw = |rows: usize| Array2::from_shape_simple_fn((rows, dim), || T::of(normal.sample(&mut rng)));
        let users = draw(num_users);
        let items = draw(num_items);
        Self {
            kind,
            layers,
            seed,
            tables: Tables { users, items },
        }
    }

    pub fn dim(&self) -> usize {
        self.tables.dim()
    }

    pub fn num_users(&self) -> usize {
        self.tables.users.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.tables.items.nrows()
    }

    /// `e^base`: the raw tables for MF, the LightGCN layer mean otherwise.
    pub fn base_embeddings(&self, conv: &BipartiteConv<T>) -> Tables<T> {
        match self.kind {
            ModelKind::Mf => self.tables.clone(),
            ModelKind::LightGcn => lightgcn_propagate(self, conv).expect("kind checked"),
        }
    }

    /// Pulls a gradient on `e^base` back to the raw tables.
    pub fn backprop_base(&self, conv: &BipartiteConv<T>, grad_base: Tables<T>) -> Tables<T> {
        match self.kind {
            ModelKind::Mf => grad_base,
            ModelKind::LightGcn => conv.backward(&grad_base, self.layers, LayerCombine::Mean),
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.tables.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "{what}: embedding tables contain NaN/Inf (squared norm {})",
                self.tables.sq_norm()
            )))
        }
    }
}

/// LightGCN propagation: symmetric-normalized layers, averaged.
pub fn lightgcn_propagate<T: Scalar>(model: &EmbeddingModel<T>, conv: &BipartiteConv<T>) -> Result<Tables<T>> {
    if model.kind != ModelKind::LightGcn {
        return Err(Error::Contract(format!("lightgcn propagation requested for a {} model", model.kind)));
    }
    Ok(conv.forward(&model.tables, model.layers, LayerCombine::Mean))
}

/// Inner-product score on precomputed base embeddings.
#[inline]
pub fn score<T: Scalar>(base: &Tables<T>, user: usize, item: usize) -> T {
    dot(base.user(user), base.item(item))
}

const MAGIC: &[u8; 8] = b"CDCGCNCK";
const VERSION: u32 = 1;
pub(crate) const FLAG_DISCRIMINATOR: u8 = 1;
pub(crate) const FLAG_ETA: u8 = 2;

/// Fixed-size checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub kind: ModelKind,
    pub flags: u8,
    pub num_users: u32,
    pub num_items: u32,
    pub dim: u32,
    pub layers: u32,
    pub seed: u64,
}

impl Header {
    pub(crate) fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(self.kind.code())?;
        w.write_u8(self.flags)?;
        w.write_u32::<LittleEndian>(self.num_users)?;
        w.write_u32::<LittleEndian>(self.num_items)?;
        w.write_u32::<LittleEndian>(self.dim)?;
        w.write_u32::<LittleEndian>(self.layers)?;
        w.write_u64::<LittleEndian>(self.seed)
    }

    pub(crate) fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(ck)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(ck)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(Self {
            kind: ModelKind::from_code(r.read_u8().map_err(ck)?)?,
            flags: r.read_u8().map_err(ck)?,
            num_users: r.read_u32::<LittleEndian>().map_err(ck)?,
            num_items: r.read_u32::<LittleEndian>().map_err(ck)?,
            dim: r.read_u32::<LittleEndian>().map_err(ck)?,
            layers: r.read_u32::<LittleEndian>().map_err(ck)?,
            seed: r.read_u64::<LittleEndian>().map_err(ck)?,
        })
    }
}

pub(crate) fn ck(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub(crate) fn write_f32s<T: Scalar>(w: &mut impl Write, values: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(v.to_f32_lossy())?;
    }
    Ok(())
}

pub(crate) fn read_f32s<T: Scalar>(r: &mut impl Read, n: usize) -> Result<Vec<T>> {
    let mut buf = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut buf).map_err(ck)?;
    Ok(buf.into_iter().map(T::of_f32).collect())
}

impl<T: Scalar> EmbeddingModel<T> {
    pub(crate) fn header(&self, flags: u8) -> Header {
        Header {
            kind: self.kind,
            flags,
            num_users: self.num_users() as u32,
            num_items: self.num_items() as u32,
            dim: self.dim() as u32,
            layers: self.layers as u32,
            seed: self.seed,
        }
    }

    pub(crate) fn write_tables(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_f32s(w, self.tables.users.iter().copied())?;
        write_f32s(w, self.tables.items.iter().copied())
    }

    pub(crate) fn read_body(h: &Header, r: &mut impl Read) -> Result<Self> {
        let (m, n, d) = (h.num_users as usize, h.num_items as usize, h.dim as usize);
        let users = Array2::from_shape_vec((m, d), read_f32s(r, m * d)?).expect("shape");
        let items = Array2::from_shape_vec((n, d), read_f32s(r, n * d)?).expect("shape");
        Ok(Self {
            kind: h.kind,
            layers: h.layers as usize,
            seed: h.seed,
            tables: Tables { users, items },
        })
    }

    /// Writes the base checkpoint: header then row-major little-endian f32
    /// user and item tables.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.header(0).write(&mut w).map_err(|e| Error::io(path, e))?;
        self.write_tables(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads the base part of any checkpoint (trailing sections ignored).
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let h = Header::read(&mut r)?;
        Self::read_body(&h, &mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionDataset;
    use ndarray::array;

    #[test]
    fn init_is_reproducible() {
        let a = EmbeddingModel::<f32>::init(5, 7, 8, ModelKind::Mf, 0, 11);
        let b = EmbeddingModel::<f32>::init(5, 7, 8, ModelKind::Mf, 0, 11);
        let c = EmbeddingModel::<f32>::init(5, 7, 8, ModelKind::Mf, 0, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mean: f32 = a.tables.users.iter().sum::<f32>() / 40.0;
        assert!(mean.abs() < 0.1);
    }

    #[test]
    fn score_examples() {
        let zero = Tables::<f64>::zeros(1, 1, 4);
        assert_eq!(score(&zero, 0, 0), 0.0);
        let t = Tables {
            users: array![[1.0, 0.0, 0.0]],
            items: array![[2.0, 0.0, 0.0]],
        };
        assert_eq!(score(&t, 0, 0), 2.0);
    }

    #[test]
    fn mf_refuses_propagation() {
        let ds = InteractionDataset::from_dense(1, 1, &[(0, 0)], &[], &[]);
        let conv = BipartiteConv::<f64>::lightgcn(&ds);
        let m = EmbeddingModel::<f64>::init(1, 1, 2, ModelKind::Mf, 3, 0);
        assert!(lightgcn_propagate(&m, &conv).is_err());
        assert_eq!(m.base_embeddings(&conv), m.tables);
    }

    #[test]
    fn checkpoint_reload_is_bit_identical() {
        let m = EmbeddingModel::<f32>::init(4, 6, 8, ModelKind::LightGcn, 3, 99);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = EmbeddingModel::<f32>::load(&p).unwrap();
        assert_eq!(back, m);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + 2 + 16 + 8 + 4 * (4 + 6) * 8);
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(matches!(EmbeddingModel::<f32>::load(&p), Err(Error::Checkpoint(_))));
    }
}
