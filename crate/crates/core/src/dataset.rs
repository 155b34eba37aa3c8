//! Implicit-feedback interaction logs: loading, per-user splitting and the
//! train-graph adjacency every other stage reads.
//!
//! Users and items are mapped to dense 0-based indexes in order of first
//! appearance in the input file. Only the train split enters the adjacency;
//! validation and test pairs are kept as flat edge lists.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
}

impl Interaction {
    pub fn new(user: usize, item: usize) -> Self {
        Self { user, item }
    }
}

/// Bidirectional external-id <-> dense-index table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense index for `id`, allocating the next one on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&ix) = self.index.get(id) {
            return ix;
        }
        let ix = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), ix);
        ix
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, ix: usize) -> &str {
        &self.ids[ix]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Identity map `"0".."n-1"`, for datasets built directly from indexes.
    pub fn identity(n: usize) -> Self {
        let mut map = Self::new();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    /// Any run of spaces or tabs.
    Whitespace,
    Comma,
}

/// How a raw edge-list file is laid out. Parsed from `ws`, `tsv`, `csv`,
/// optionally suffixed with `+header` when the first line is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeFormat {
    pub delimiter: Delimiter,
    pub header: bool,
}

impl Default for EdgeFormat {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Whitespace,
            header: false,
        }
    }
}

impl FromStr for EdgeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, header) = match s.strip_suffix("+header") {
            Some(base) => (base, true),
            None => (s, false),
        };
        let delimiter = match base {
            "ws" | "tsv" | "txt" => Delimiter::Whitespace,
            "csv" => Delimiter::Comma,
            other => return Err(Error::Config(format!("unknown edge format {other:?}"))),
        };
        Ok(Self { delimiter, header })
    }
}

/// Deduplicated edges straight from the input file.
#[derive(Debug, Clone)]
pub struct RawInteractions {
    pub edges: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl RawInteractions {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Builds from already-dense pairs; ids become the decimal indexes.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::new();
        for (u, i) in pairs {
            let u = users.intern(&u.to_string());
            let i = items.intern(&i.to_string());
            if seen.insert((u, i)) {
                edges.push(Interaction::new(u, i));
            }
        }
        Self {
            edges,
            users,
            items,
        }
    }
}

pub fn load_interactions(path: impl AsRef<Path>, format: EdgeFormat) -> Result<RawInteractions> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), format, path)
}

pub fn parse_interactions(
    reader: impl BufRead,
    format: EdgeFormat,
    path: &Path,
) -> Result<RawInteractions> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 && format.header {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields: Box<dyn Iterator<Item = &str>> = match format.delimiter {
            Delimiter::Whitespace => Box::new(trimmed.split_whitespace()),
            Delimiter::Comma => Box::new(trimmed.split(',').map(str::trim)),
        };
        let (user, item) = match (fields.next(), fields.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: format!("expected `user item [extra...]`, got {trimmed:?}"),
                })
            }
        };
        let u = users.intern(user);
        let i = items.intern(item);
        if seen.insert((u, i)) {
            edges.push(Interaction::new(u, i));
        }
    }

    if edges.is_empty() {
        return Err(Error::Empty(path.to_owned()));
    }
    Ok(RawInteractions {
        edges,
        users,
        items,
    })
}

/// Fractions of each user's edges assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be in [0,1] and sum to 1: {self:?}")));
        }
        if self.train <= 0.0 {
            return Err(Error::Config("train ratio must be positive".into()));
        }
        Ok(())
    }

    /// (train, val, test) counts for a user with `n` edges. Validation and
    /// test take `floor(n * ratio)`; train gets the remainder. Users with
    /// fewer than three edges keep everything in train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        if n < 3 {
            return (n, 0, 0);
        }
        let val = (n as f64 * self.val + 1e-9).floor() as usize;
        let test = (n as f64 * self.test + 1e-9).floor() as usize;
        let train = n - val - test;
        if train == 0 {
            return (1, val, test - 1);
        }
        (train, val, test)
    }
}

/// Compressed sparse rows: `neighbors(r)` is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    pub fn from_pairs(rows: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut lists = vec![Vec::new(); rows];
        for (r, c) in pairs {
            lists[r].push(c);
        }
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            targets.extend(list);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    #[inline]
    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.targets[self.offsets[row]..self.offsets[row + 1]]
    }

    #[inline]
    pub fn degree(&self, row: usize) -> usize {
        self.offsets[row + 1] - self.offsets[row]
    }

    /// Offset of `row`'s first entry in the flat edge arrays.
    #[inline]
    pub fn row_start(&self, row: usize) -> usize {
        self.offsets[row]
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.neighbors(row).binary_search(&col).is_ok()
    }
}

#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub user_adj: Csr,
    pub item_adj: Csr,
    pub users: IdMap,
    pub items: IdMap,
}

/// Sorted train adjacency in both directions.
pub fn adjacency(num_users: usize, num_items: usize, train: &[Interaction]) -> (Csr, Csr) {
    let user_adj = Csr::from_pairs(num_users, train.iter().map(|e| (e.user, e.item)));
    let item_adj = Csr::from_pairs(num_items, train.iter().map(|e| (e.item, e.user)));
    (user_adj, item_adj)
}

/// Per-user stratified split. Each user's edges are shuffled by a generator
/// derived from `(seed, user)` and cut by [`SplitRatios::counts`].
pub fn split_dataset(raw: RawInteractions, ratios: SplitRatios, seed: u64) -> Result<InteractionDataset> {
    ratios.validate()?;
    let num_users = raw.num_users();
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for e in &raw.edges {
        by_user[e.user].push(e.item);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (u, items) in by_user.iter_mut().enumerate() {
        if items.is_empty() {
            return Err(Error::Contract(format!("user {u} has no interactions")));
        }
        let mut rng = rng::rng_for(seed, stream::SPLIT ^ (u as u64).rotate_left(17));
        items.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.counts(items.len());
        for (pos, &i) in items.iter().enumerate() {
            let e = Interaction::new(u, i);
            if pos < n_train {
                train.push(e);
            } else if pos < n_train + n_val {
                val.push(e);
            } else {
                test.push(e);
            }
        }
    }

    Ok(InteractionDataset::from_splits(
        raw.users, raw.items, train, val, test,
    ))
}

impl InteractionDataset {
    pub fn from_splits(
        users: IdMap,
        items: IdMap,
        train: Vec<Interaction>,
        val: Vec<Interaction>,
        test: Vec<Interaction>,
    ) -> Self {
        let num_users = users.len();
        let num_items = items.len();
        let (user_adj, item_adj) = adjacency(num_users, num_items, &train);
        Self {
            num_users,
            num_items,
            train,
            val,
            test,
            user_adj,
            item_adj,
            users,
            items,
        }
    }

    /// Dataset over dense indexes only; convenient for fixtures.
    pub fn from_dense(
        num_users: usize,
        num_items: usize,
        train: &[(usize, usize)],
        val: &[(usize, usize)],
        test: &[(usize, usize)],
    ) -> Self {
        let conv = |v: &[(usize, usize)]| v.iter().map(|&(u, i)| Interaction::new(u, i)).collect();
        Self::from_splits(
            IdMap::identity(num_users),
            IdMap::identity(num_items),
            conv(train),
            conv(val),
            conv(test),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    #[inline]
    pub fn is_train(&self, user: usize, item: usize) -> bool {
        self.user_adj.contains(user, item)
    }

    fn group(&self, edges: &[Interaction]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for e in edges {
            out[e.user].push(e.item);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn test_by_user(&self) -> Vec<Vec<usize>> {
        self.group(&self.test)
    }

    pub fn val_by_user(&self) -> Vec<Vec<usize>> {
        self.group(&self.val)
    }

    /// Same train graph, different test split (e.g. the debiased one).
    pub fn with_test(&self, test: Vec<Interaction>) -> Self {
        Self {
            test,
            ..self.clone()
        }
    }

    /// Checks every structural invariant; used by tests and after reload.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for e in split.iter() {
                if e.user >= self.num_users || e.item >= self.num_items {
                    return Err(Error::Contract(format!("{name} edge {e:?} out of range")));
                }
                if !seen.insert((e.user, e.item)) {
                    return Err(Error::Contract(format!("{name} edge {e:?} duplicated or shared with another split")));
                }
            }
        }
        for u in 0..self.num_users {
            if self.user_adj.degree(u) == 0 {
                return Err(Error::Contract(format!("user {u} has no training interactions")));
            }
        }
        if self.user_adj.nnz() != self.train.len() || self.item_adj.nnz() != self.train.len() {
            return Err(Error::Contract("adjacency does not match train split".into()));
        }
        Ok(())
    }
}

/// Metadata written next to the split edge lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub num_users: usize,
    pub num_items: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const VAL_FILE: &str = "val.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const META_FILE: &str = "split.json";
pub const USER_IDS_FILE: &str = "users.tsv";
pub const ITEM_IDS_FILE: &str = "items.tsv";

pub fn write_edges(path: &Path, edges: &[Interaction]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in edges {
        writeln!(w, "{}\t{}", e.user, e.item).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_edges(path: &Path) -> Result<Vec<Interaction>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            message,
        };
        let mut it = line.split('\t');
        let mut next = || -> Result<usize> {
            it.next()
                .ok_or_else(|| bad("missing column".into()))?
                .trim()
                .parse()
                .map_err(|e| bad(format!("{e}")))
        };
        let user = next()?;
        let item = next()?;
        out.push(Interaction::new(user, item));
    }
    Ok(out)
}

fn write_ids(path: &Path, map: &IdMap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (ix, id) in map.ids.iter().enumerate() {
        writeln!(w, "{ix}\t{id}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_ids(path: &Path) -> Result<IdMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = IdMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let (ix, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            message: "expected `index<TAB>id`".into(),
        })?;
        if ix.parse::<usize>().ok() != Some(map.len()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: "indexes must be contiguous from 0".into(),
            });
        }
        map.intern(id);
    }
    Ok(map)
}

/// Writes the three split files, the id tables and `split.json` into `dir`.
pub fn write_split(dir: &Path, ds: &InteractionDataset, seed: u64, ratios: SplitRatios) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, edges) in [(TRAIN_FILE, &ds.train), (VAL_FILE, &ds.val), (TEST_FILE, &ds.test)] {
        let p = dir.join(name);
        write_edges(&p, edges)?;
        written.push(p);
    }
    for (name, map) in [(USER_IDS_FILE, &ds.users), (ITEM_IDS_FILE, &ds.items)] {
        let p = dir.join(name);
        write_ids(&p, map)?;
        written.push(p);
    }
    let meta = SplitMeta {
        seed,
        ratios,
        num_users: ds.num_users,
        num_items: ds.num_items,
        train: ds.train.len(),
        val: ds.val.len(),
        test: ds.test.len(),
    };
    let p = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

pub fn read_split(dir: &Path) -> Result<(InteractionDataset, SplitMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SplitMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let users = read_ids(&dir.join(USER_IDS_FILE))?;
    let items = read_ids(&dir.join(ITEM_IDS_FILE))?;
    let ds = InteractionDataset::from_splits(
        users,
        items,
        read_edges(&dir.join(TRAIN_FILE))?,
        read_edges(&dir.join(VAL_FILE))?,
        read_edges(&dir.join(TEST_FILE))?,
    );
    if ds.num_users != meta.num_users || ds.num_items != meta.num_items {
        return Err(Error::Contract(format!("{}: id tables disagree with metadata", dir.display())));
    }
    ds.validate()?;
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawInteractions> {
        parse_interactions(text.as_bytes(), EdgeFormat::default(), Path::new("mem"))
    }

    #[test]
    fn three_line_file() {
        let raw = parse("u1 i1\nu1 i2\nu2 i1\n").unwrap();
        assert_eq!(raw.edges.len(), 3);
        assert_eq!(raw.num_users(), 2);
        assert_eq!(raw.num_items(), 2);
        assert_eq!(raw.users.get("u2"), Some(1));
        assert_eq!(raw.items.external(1), "i2");
    }

    #[test]
    fn duplicates_dropped_and_extra_columns_ignored() {
        let raw = parse("u1\ti1\t5\t1234\nu1 i2\nu1 i1 3\nu2 i1\n").unwrap();
        assert_eq!(raw.edges.len(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("u1 i1\n\nlonely\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse("# nothing\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn header_and_csv_formats() {
        let fmt: EdgeFormat = "csv+header".parse().unwrap();
        let raw = parse_interactions("user,item\na,b\na,c\n".as_bytes(), fmt, Path::new("mem")).unwrap();
        assert_eq!(raw.edges.len(), 2);
        assert!("json".parse::<EdgeFormat>().is_err());
    }

    #[test]
    fn split_counts() {
        let r = SplitRatios::default();
        assert_eq!(r.counts(10), (7, 1, 2));
        assert_eq!(r.counts(2), (2, 0, 0));
        assert_eq!(r.counts(1), (1, 0, 0));
        assert_eq!(r.counts(3), (3, 0, 0));
        assert_eq!(r.counts(5), (4, 0, 1));
        assert_eq!(r.counts(20), (14, 2, 4));
    }

    #[test]
    fn split_respects_per_user_counts() {
        let mut pairs = Vec::new();
        for i in 0..10 {
            pairs.push((0, i));
        }
        pairs.push((1, 0));
        pairs.push((1, 3));
        let ds = split_dataset(RawInteractions::from_pairs(pairs), SplitRatios::default(), 7).unwrap();
        ds.validate().unwrap();
        let count = |v: &[Interaction], u| v.iter().filter(|e| e.user == u).count();
        assert_eq!((count(&ds.train, 0), count(&ds.val, 0), count(&ds.test, 0)), (7, 1, 2));
        assert_eq!((count(&ds.train, 1), count(&ds.val, 1), count(&ds.test, 1)), (2, 0, 0));
    }

    #[test]
    fn adjacency_small() {
        let ds = InteractionDataset::from_dense(2, 3, &[(0, 0), (0, 1), (1, 0)], &[], &[(1, 2)]);
        assert_eq!(ds.user_adj.neighbors(0), &[0, 1]);
        assert_eq!(ds.user_adj.neighbors(1), &[0]);
        assert_eq!(ds.item_adj.neighbors(0), &[0, 1]);
        assert_eq!(ds.item_adj.degree(2), 0);
        assert!(ds.item_adj.neighbors(2).is_empty());
        assert!(ds.is_train(0, 1) && !ds.is_train(1, 2));
    }

    #[test]
    fn split_files_round_trip() {
        let raw = parse("a x\na y\na z\na w\nb x\nb q\nc y\n").unwrap();
        let ds = split_dataset(raw, SplitRatios::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), &ds, 1, SplitRatios::default()).unwrap();
        let (back, meta) = read_split(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.users, ds.users);
        assert_eq!(meta.seed, 1);
        assert_eq!(meta.train, ds.train.len());
    }
}
