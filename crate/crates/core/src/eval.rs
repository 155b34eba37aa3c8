//! Top-k ranking and measurement: accuracy metrics, the two filter-bubble
//! indices (ILFBI and CGI), debiased test sets, user-group analysis and
//! embedding export.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::community::{CommunityAssignment, UserBubbleProfile};
use crate::conv::Tables;
use crate::dataset::{Interaction, InteractionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::{dot, Scalar};

/// The cutoffs reported by default.
pub const DEFAULT_KS: [usize; 2] = [20, 100];

/// Anything that scores the full catalog for one user.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;
    /// Writes one score per item into `out`.
    fn score_user(&self, user: usize, out: &mut [f64]);
}

/// Inner-product scorer over precomputed final embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingScorer<T> {
    pub embeddings: Tables<T>,
}

impl<T: Scalar> EmbeddingScorer<T> {
    pub fn new(embeddings: Tables<T>) -> Self {
        Self { embeddings }
    }
}

impl<T: Scalar> Scorer for EmbeddingScorer<T> {
    fn num_items(&self) -> usize {
        self.embeddings.items.nrows()
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        let eu = self.embeddings.user(user);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(eu, self.embeddings.item(i)).to_f64_lossy();
        }
    }
}

/// Scorer backed by a closure; handy for fixtures and oracles.
pub struct FnScorer<F> {
    pub num_items: usize,
    pub f: F,
}

impl<F: Fn(usize, usize) -> f64 + Sync> Scorer for FnScorer<F> {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.f)(user, i);
        }
    }
}

/// One user's recommendation list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

/// Higher score first, lower index on ties; NaN sorts last.
#[inline]
pub(crate) fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    match (a.1.is_nan(), b.1.is_nan()) {
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)),
    }
}

/// Exact top-k of a score vector, skipping `excluded` (sorted ascending).
pub fn top_k_of(scores: &[f64], excluded: &[usize], k: usize) -> (Vec<(usize, f64)>, bool) {
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| excluded.binary_search(i).is_err())
        .collect();
    let truncated = cand.len() < k;
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
        cand.truncate(k);
    } else if k == 0 {
        cand.clear();
    }
    cand.sort_unstable_by(|&a, &b| rank_order(a, b));
    (cand, truncated)
}

/// Full-catalog top-k for every user, excluding train items.
pub fn rank_topk<S: Scorer + ?Sized>(scorer: &S, ds: &InteractionDataset, k: usize) -> Vec<RankedList> {
    assert_eq!(scorer.num_items(), ds.num_items, "scorer and dataset disagree on the catalog");
    (0..ds.num_users)
        .into_par_iter()
        .map_init(
            || vec![0.0; ds.num_items],
            |buf, u| {
                scorer.score_user(u, buf);
                let (top, truncated) = top_k_of(buf, ds.user_adj.neighbors(u), k);
                RankedList {
                    user: u,
                    items: top.iter().map(|t| t.0).collect(),
                    scores: top.iter().map(|t| t.1).collect(),
                    truncated,
                }
            },
        )
        .collect()
}

/// Keeps the first `k` entries of each list.
pub fn truncate_lists(lists: &[RankedList], k: usize) -> Vec<RankedList> {
    lists
        .iter()
        .map(|l| RankedList {
            user: l.user,
            items: l.items.iter().take(k).copied().collect(),
            scores: l.scores.iter().take(k).copied().collect(),
            truncated: l.items.len() < k,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accuracy {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    /// Users with a non-empty ground truth.
    pub users: usize,
    pub hits: usize,
}

/// P/R/NDCG@k with binary relevance, averaged over users whose ground truth
/// is non-empty. `truth[u]` must be sorted ascending.
pub fn precision_recall_ndcg(lists: &[RankedList], truth: &[Vec<usize>], k: usize) -> Accuracy {
    let mut acc = Accuracy::default();
    for l in lists {
        let t = &truth[l.user];
        if t.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (r, item) in l.items.iter().take(k).enumerate() {
            if t.binary_search(item).is_ok() {
                hits += 1;
                dcg += 1.0 / ((r + 2) as f64).log2();
            }
        }
        let idcg: f64 = (0..k.min(t.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        acc.users += 1;
        acc.hits += hits;
        acc.precision += hits as f64 / k as f64;
        acc.recall += hits as f64 / t.len() as f64;
        acc.ndcg += dcg / idcg;
    }
    if acc.users > 0 {
        let n = acc.users as f64;
        acc.precision /= n;
        acc.recall /= n;
        acc.ndcg /= n;
    }
    acc
}

/// Intra-community share of one list, over `k` slots.
pub fn user_ilfbi(list: &RankedList, assignment: &CommunityAssignment, k: usize) -> f64 {
    let cu = assignment.user(list.user);
    let same = list.items.iter().take(k).filter(|&&i| assignment.item(i) == cu).count();
    same as f64 / k as f64
}

/// ILFBI@k: intra-community recommendations over `|U| k`.
pub fn ilfbi_at_k(lists: &[RankedList], assignment: &CommunityAssignment, k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    lists.iter().map(|l| user_ilfbi(l, assignment, k)).sum::<f64>() / lists.len() as f64
}

/// Gini index of per-community counts over `n` communities (absent
/// communities count zero). Zero for an empty histogram.
pub fn community_gini(counts: &[usize], n: usize) -> f64 {
    let mut c = counts.to_vec();
    c.resize(n.max(c.len()), 0);
    let n = c.len();
    c.sort_unstable();
    let total: usize = c.iter().sum();
    if total == 0 || n == 0 {
        return 0.0;
    }
    let mut running = 0usize;
    let mut partial = 0usize;
    for &x in &c[..n - 1] {
        running += x;
        partial += running;
    }
    // 1 - 2 partial / (n T) - 1 / n over a common denominator, so even
    // spreads give exactly zero
    let denom = n * total;
    (denom - 2 * partial - total) as f64 / denom as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CgiMode {
    /// Gini per list, averaged over users.
    #[default]
    PerUser,
    /// One Gini over the pooled counts of all lists.
    Pooled,
}

pub fn cgi_at_k(lists: &[RankedList], assignment: &CommunityAssignment, k: usize, mode: CgiMode) -> f64 {
    let n = assignment.num_communities.max(1);
    let histogram = |l: &RankedList, counts: &mut [usize]| {
        for &i in l.items.iter().take(k) {
            counts[assignment.item(i)] += 1;
        }
    };
    match mode {
        CgiMode::PerUser => {
            if lists.is_empty() {
                return 0.0;
            }
            let mut counts = vec![0usize; n];
            let mut sum = 0.0;
            for l in lists {
                counts.fill(0);
                histogram(l, &mut counts);
                sum += community_gini(&counts, n);
            }
            sum / lists.len() as f64
        }
        CgiMode::Pooled => {
            let mut counts = vec![0usize; n];
            for l in lists {
                histogram(l, &mut counts);
            }
            community_gini(&counts, n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub ilfbi: f64,
    pub cgi: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["precision", "recall", "ndcg", "ilfbi", "cgi"];

    pub fn values(&self) -> [f64; 5] {
        [self.precision, self.recall, self.ndcg, self.ilfbi, self.cgi]
    }

    fn set(&mut self, name: &str, v: f64) -> bool {
        match name {
            "precision" => self.precision = v,
            "recall" => self.recall = v,
            "ndcg" => self.ndcg = v,
            "ilfbi" => self.ilfbi = v,
            "cgi" => self.cgi = v,
            _ => return false,
        }
        true
    }

    /// Mean of P, R and NDCG.
    pub fn accuracy_mean(&self) -> f64 {
        (self.precision + self.recall + self.ndcg) / 3.0
    }
}

/// Metrics per cutoff plus free-form run metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub per_k: BTreeMap<usize, Metrics>,
    pub meta: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&Metrics> {
        self.per_k.get(&k)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = write!(s, "{:>6}", "k");
        for name in ["P", "R", "NDCG", "ILFBI", "CGI"] {
            let _ = write!(s, " {name:>10}");
        }
        s.push('\n');
        for (k, m) in &self.per_k {
            let _ = write!(s, "{k:>6}");
            for v in m.values() {
                let _ = write!(s, " {v:>10.4}");
            }
            s.push('\n');
        }
        s
    }

    /// `meta.<key>=value` and `k<k>.<metric>=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta.{k}={v}");
        }
        for (k, m) in &self.per_k {
            for (name, v) in Metrics::NAMES.iter().zip(m.values()) {
                let _ = writeln!(s, "k{k}.{name}={v}");
            }
        }
        s
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut report = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Config(format!("report line {}: cannot parse {line:?}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            if let Some(meta) = key.strip_prefix("meta.") {
                report.meta.insert(meta.to_string(), value.to_string());
                continue;
            }
            let (k, name) = key.strip_prefix('k').and_then(|r| r.split_once('.')).ok_or_else(bad)?;
            let k: usize = k.parse().map_err(|_| bad())?;
            let v: f64 = value.parse().map_err(|_| bad())?;
            if !report.per_k.entry(k).or_default().set(name, v) {
                return Err(bad());
            }
        }
        Ok(report)
    }
}

/// Metrics of precomputed lists at each cutoff (lists must hold at least
/// `max(ks)` entries where available).
pub fn metrics_from_lists(
    lists: &[RankedList],
    truth: &[Vec<usize>],
    assignment: &CommunityAssignment,
    ks: &[usize],
    cgi_mode: CgiMode,
) -> MetricsReport {
    let mut report = MetricsReport::default();
    for &k in ks {
        let acc = precision_recall_ndcg(lists, truth, k);
        report.per_k.insert(
            k,
            Metrics {
                precision: acc.precision,
                recall: acc.recall,
                ndcg: acc.ndcg,
                ilfbi: ilfbi_at_k(lists, assignment, k),
                cgi: cgi_at_k(lists, assignment, k, cgi_mode),
            },
        );
    }
    report
}

/// Ranks once at the largest cutoff and reports every cutoff.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    ds: &InteractionDataset,
    truth: &[Vec<usize>],
    assignment: &CommunityAssignment,
    ks: &[usize],
) -> MetricsReport {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let lists = rank_topk(scorer, ds, kmax);
    metrics_from_lists(&lists, truth, assignment, ks, CgiMode::PerUser)
}

/// Per user and community, keeps one test item chosen uniformly with the
/// run seed. Output is ordered by user, then community id.
pub fn build_debiased_test(ds: &InteractionDataset, assignment: &CommunityAssignment, seed: u64) -> Vec<Interaction> {
    let mut out = Vec::new();
    for (u, items) in ds.test_by_user().iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in items {
            groups.entry(assignment.item(i)).or_default().push(i);
        }
        let mut rng = rng::rng_for(seed, stream::DEBIAS ^ (u as u64).rotate_left(23));
        for group in groups.values() {
            out.push(Interaction::new(u, group[rng.random_range(0..group.len())]));
        }
    }
    out
}

/// Sorted ground-truth lists from an edge list.
pub fn truth_by_user(num_users: usize, edges: &[Interaction]) -> Vec<Vec<usize>> {
    let mut t = vec![Vec::new(); num_users];
    for e in edges {
        t[e.user].push(e.item);
    }
    for v in &mut t {
        v.sort_unstable();
        v.dedup();
    }
    t
}

/// Default user groups by ILFBI-init: [0, .2], (.2, .4], ..., (.8, 1].
pub const DEFAULT_BINS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRow {
    pub lower: f64,
    pub upper: f64,
    pub users: usize,
    pub mean_ilfbi_init: f64,
    pub mean_ilfbi: f64,
    /// `mean_ilfbi - mean_ilfbi_init`.
    pub increment: f64,
}

/// Per bin statistics; `None` marks a bin without users. The first bin is
/// closed on both sides, the others are left-open.
pub fn user_group_report(
    profile: &UserBubbleProfile,
    lists: &[RankedList],
    assignment: &CommunityAssignment,
    k: usize,
    bins: &[f64],
) -> Vec<Option<GroupRow>> {
    let nb = bins.len().saturating_sub(1);
    let mut sums = vec![(0usize, 0.0, 0.0); nb];
    for l in lists {
        let x = profile.ilfbi_init[l.user];
        let b = (0..nb).find(|&b| if b == 0 { x >= bins[0] && x <= bins[1] } else { x > bins[b] && x <= bins[b + 1] });
        if let Some(b) = b {
            sums[b].0 += 1;
            sums[b].1 += x;
            sums[b].2 += user_ilfbi(l, assignment, k);
        }
    }
    sums.iter()
        .enumerate()
        .map(|(b, &(n, init, ilfbi))| {
            (n > 0).then(|| {
                let (mi, mf) = (init / n as f64, ilfbi / n as f64);
                GroupRow {
                    lower: bins[b],
                    upper: bins[b + 1],
                    users: n,
                    mean_ilfbi_init: mi,
                    mean_ilfbi: mf,
                    increment: mf - mi,
                }
            })
        })
        .collect()
}

/// Header of the embedding export; `d` columns `e0..` follow.
pub fn embedding_header(dim: usize) -> String {
    let mut h = String::from("type\tindex\tcommunity");
    for c in 0..dim {
        let _ = write!(h, "\te{c}");
    }
    h
}

/// One row per user then per item: type, dense index, community, values.
pub fn export_embeddings<T: Scalar>(embeddings: &Tables<T>, assignment: &CommunityAssignment, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = || -> std::io::Result<()> {
        writeln!(w, "{}", embedding_header(embeddings.dim()))?;
        for (kind, table, n) in [("u", &embeddings.users, embeddings.users.nrows()), ("i", &embeddings.items, embeddings.items.nrows())] {
            for r in 0..n {
                let comm = if kind == "u" { assignment.user(r) } else { assignment.item(r) };
                write!(w, "{kind}\t{r}\t{comm}")?;
                for v in table.row(r) {
                    write!(w, "\t{:e}", v.to_f64_lossy())?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    };
    put().map_err(|e| Error::io(path, e))
}

/// Exported row: node type (`'u'` or `'i'`), index, community, values.
pub type EmbeddingRow = (char, usize, usize, Vec<f64>);

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: m.to_string(),
        };
        let mut cols = line.split('\t');
        let kind = cols.next().and_then(|c| c.chars().next()).ok_or_else(|| bad("missing type"))?;
        let mut num = |what: &str| -> Result<usize> {
            cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| bad(what))
        };
        let index = num("bad index")?;
        let comm = num("bad community")?;
        let values = cols
            .map(|c| c.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>>>()?;
        out.push((kind, index, comm, values));
    }
    Ok(out)
}
