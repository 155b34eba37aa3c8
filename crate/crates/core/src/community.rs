//! Louvain community detection on the train bipartite graph, plus the
//! quantities derived from the resulting labels: per-edge compatibility
//! weights and each user's intra-community share of training items.
//!
//! Users and items share one node space `[0, m + n)` with users first, so
//! item `i` is node `m + i`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_traits::{FromPrimitive, Num};
use rand::seq::SliceRandom;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

const GAIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityAssignment {
    /// Community id per node, users first.
    pub labels: Vec<usize>,
    pub num_communities: usize,
    pub num_users: usize,
    pub modularity: f64,
    /// Modularity after each local-moving level; non-decreasing.
    pub level_modularity: Vec<f64>,
}

impl CommunityAssignment {
    #[inline]
    pub fn user(&self, u: usize) -> usize {
        self.labels[u]
    }

    #[inline]
    pub fn item(&self, i: usize) -> usize {
        self.labels[self.num_users + i]
    }

    pub fn item_labels(&self) -> &[usize] {
        &self.labels[self.num_users..]
    }

    pub fn user_labels(&self) -> &[usize] {
        &self.labels[..self.num_users]
    }

    /// Builds an assignment from raw labels, relabeling them contiguously.
    pub fn from_labels(num_users: usize, labels: Vec<usize>, ds: &InteractionDataset) -> Self {
        let mut remap = HashMap::new();
        let labels: Vec<usize> = labels
            .into_iter()
            .map(|c| {
                let next = remap.len();
                *remap.entry(c).or_insert(next)
            })
            .collect();
        let mut out = Self {
            num_communities: remap.len(),
            labels,
            num_users,
            modularity: 0.0,
            level_modularity: Vec::new(),
        };
        out.modularity = modularity(ds, &out);
        out
    }
}

/// Weighted undirected graph with explicit self-loop weights, the form
/// Louvain's aggregation phase produces.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    /// Total edge weight `m` (each undirected edge counted once).
    total: f64,
}

impl WeightedGraph {
    /// Unweighted graph from an undirected edge list; duplicate edges merge.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
        let mut self_loops = vec![0.0; n];
        for (a, b) in edges {
            if a == b {
                self_loops[a] = 1.0;
            } else {
                maps[a].insert(b, 1.0);
                maps[b].insert(a, 1.0);
            }
        }
        Self::from_maps(maps, self_loops)
    }

    fn from_maps(maps: Vec<HashMap<usize, f64>>, self_loops: Vec<f64>) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = maps
            .into_iter()
            .map(|m| {
                let mut v: Vec<_> = m.into_iter().collect();
                v.sort_unstable_by_key(|&(t, _)| t);
                v
            })
            .collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loops)
            .map(|(nb, &sl)| nb.iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * sl)
            .collect();
        let total = degree.iter().sum::<f64>() / 2.0;
        Self {
            adj,
            self_loops,
            degree,
            total,
        }
    }

    /// The unified user+item train graph of a dataset.
    pub fn bipartite(ds: &InteractionDataset) -> Self {
        let m = ds.num_users;
        Self::from_edges(ds.num_nodes(), ds.train.iter().map(|e| (e.user, m + e.item)))
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.degree[v]
    }

    /// Newman-Girvan modularity with resolution `gamma`.
    pub fn modularity(&self, labels: &[usize], gamma: f64) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let k = labels.iter().copied().max().map_or(0, |c| c + 1);
        let mut inner = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for v in 0..self.len() {
            let c = labels[v];
            tot[c] += self.degree[v];
            inner[c] += self.self_loops[v];
            for &(w, wt) in &self.adj[v] {
                if labels[w] == c && w > v {
                    inner[c] += wt;
                }
            }
        }
        let two_m = 2.0 * self.total;
        inner
            .iter()
            .zip(&tot)
            .map(|(&i, &t)| i / self.total - gamma * (t / two_m) * (t / two_m))
            .sum()
    }

    /// One local-moving phase. Returns the community of every node
    /// (ids are node ids of some member) and whether anything moved.
    fn local_moving(&self, order: &[usize], gamma: f64) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let two_m = 2.0 * self.total;
        let mut any_move = false;
        let mut link: HashMap<usize, f64> = HashMap::new();
        let mut candidates: Vec<usize> = Vec::new();

        loop {
            let mut moved = false;
            for &v in order {
                let own = comm[v];
                let k_v = self.degree[v];
                link.clear();
                for &(w, wt) in &self.adj[v] {
                    *link.entry(comm[w]).or_insert(0.0) += wt;
                }
                tot[own] -= k_v;
                let gain = |c: usize, link: &HashMap<usize, f64>| {
                    link.get(&c).copied().unwrap_or(0.0) - gamma * tot[c] * k_v / two_m
                };
                let stay = gain(own, &link);
                candidates.clear();
                candidates.extend(link.keys().copied().filter(|&c| c != own));
                candidates.sort_unstable();
                let mut best = own;
                let mut best_gain = stay;
                for &c in &candidates {
                    let g = gain(c, &link);
                    if g > stay + GAIN_EPS && (best == own || g > best_gain + GAIN_EPS) {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += k_v;
                if best != own {
                    comm[v] = best;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, any_move)
    }

    /// Collapses communities into single nodes. `comm` must be contiguous.
    fn aggregate(&self, comm: &[usize], k: usize) -> Self {
        let mut maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); k];
        let mut self_loops = vec![0.0; k];
        for v in 0..self.len() {
            let c = comm[v];
            self_loops[c] += self.self_loops[v];
            for &(w, wt) in &self.adj[v] {
                let d = comm[w];
                if d == c {
                    // each internal edge is seen from both endpoints
                    self_loops[c] += wt / 2.0;
                } else {
                    *maps[c].entry(d).or_insert(0.0) += wt;
                }
            }
        }
        Self::from_maps(maps, self_loops)
    }
}

fn compact(labels: &mut [usize]) -> usize {
    let mut remap = HashMap::new();
    for c in labels.iter_mut() {
        let next = remap.len();
        *c = *remap.entry(*c).or_insert(next);
    }
    remap.len()
}

/// Multi-level Louvain on `graph`. Node visiting order at each level is a
/// seeded shuffle. Isolated nodes end up in community 0; the remaining
/// communities are numbered by decreasing size.
pub fn louvain_graph(graph: &WeightedGraph, seed: u64, resolution: f64) -> (Vec<usize>, Vec<f64>) {
    let n = graph.len();
    let mut rng = rng::rng_for(seed, stream::LOUVAIN);
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = graph.clone();
    let mut history = Vec::new();

    loop {
        let mut order: Vec<usize> = (0..level.len()).collect();
        order.shuffle(&mut rng);
        let (mut comm, moved) = level.local_moving(&order, resolution);
        let k = compact(&mut comm);
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        let q = graph.modularity(&membership, resolution);
        if let Some(&prev) = history.last() {
            assert!(q >= prev - 1e-12, "modularity decreased across levels: {prev} -> {q}");
        }
        history.push(q);
        if !moved || k == level.len() {
            break;
        }
        level = level.aggregate(&comm, k);
    }

    (relabel_by_size(graph, &membership), history)
}

fn relabel_by_size(graph: &WeightedGraph, membership: &[usize]) -> Vec<usize> {
    let n = graph.len();
    let isolated = |v: usize| graph.degree[v] == 0.0;
    let k = membership.iter().copied().max().map_or(0, |c| c + 1);
    let mut size = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for v in 0..n {
        if isolated(v) {
            continue;
        }
        let c = membership[v];
        size[c] += 1;
        first[c] = first[c].min(v);
    }
    let mut order: Vec<usize> = (0..k).filter(|&c| size[c] > 0).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(size[c]), first[c]));
    let mut new_id = vec![0usize; k];
    for (rank, &c) in order.iter().enumerate() {
        new_id[c] = rank;
    }
    (0..n)
        .map(|v| if isolated(v) { 0 } else { new_id[membership[v]] })
        .collect()
}

/// Louvain over the train bipartite graph of `ds`.
pub fn louvain(ds: &InteractionDataset, seed: u64, resolution: f64) -> CommunityAssignment {
    let graph = WeightedGraph::bipartite(ds);
    let (labels, level_modularity) = louvain_graph(&graph, seed, resolution);
    let num_communities = labels.iter().copied().max().map_or(0, |c| c + 1);
    let modularity = graph.modularity(&labels, 1.0);
    CommunityAssignment {
        labels,
        num_communities,
        num_users: ds.num_users,
        modularity,
        level_modularity,
    }
}

/// Modularity of `assignment` on the unweighted train graph.
pub fn modularity(ds: &InteractionDataset, assignment: &CommunityAssignment) -> f64 {
    WeightedGraph::bipartite(ds).modularity(&assignment.labels, 1.0)
}

/// Per-edge community compatibility. `user_side[k]` is aligned with the
/// k-th entry of `user_adj` and holds `h^i_u`: the share of the user's train
/// items that sit in item `i`'s community. `item_side` is the mirror image
/// over `item_adj`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityWeights<T> {
    pub user_side: Vec<T>,
    pub item_side: Vec<T>,
    /// `sum_{i in N_u} h^i_u` per user.
    pub user_norm: Vec<T>,
    /// `sum_{u in N_i} h^u_i` per item; zero for items without train edges.
    pub item_norm: Vec<T>,
}

fn shares<T: Num + Copy + FromPrimitive>(
    neighbors: &[usize],
    label_of: impl Fn(usize) -> usize,
    scratch: &mut [usize],
) -> Vec<T> {
    for &v in neighbors {
        scratch[label_of(v)] += 1;
    }
    let deg = T::from_usize(neighbors.len()).expect("degree fits");
    let out = neighbors
        .iter()
        .map(|&v| T::from_usize(scratch[label_of(v)]).expect("count fits") / deg)
        .collect();
    for &v in neighbors {
        scratch[label_of(v)] = 0;
    }
    out
}

/// Compatibility weights for every train edge. Works for any field-like
/// scalar, so the proportions can be checked in exact rational arithmetic.
pub fn compatibility<T: Num + Copy + FromPrimitive>(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
) -> Result<CompatibilityWeights<T>> {
    let k = assignment.num_communities.max(1);
    let mut scratch = vec![0usize; k];
    let mut user_side = Vec::with_capacity(ds.train.len());
    let mut user_norm = Vec::with_capacity(ds.num_users);
    for u in 0..ds.num_users {
        let nb = ds.user_adj.neighbors(u);
        if nb.is_empty() {
            return Err(Error::Contract(format!("user {u} has an empty train neighborhood")));
        }
        let h = shares::<T>(nb, |i| assignment.item(i), &mut scratch);
        user_norm.push(h.iter().fold(T::zero(), |a, &b| a + b));
        user_side.extend(h);
    }
    let mut item_side = Vec::with_capacity(ds.train.len());
    let mut item_norm = Vec::with_capacity(ds.num_items);
    for i in 0..ds.num_items {
        let nb = ds.item_adj.neighbors(i);
        if nb.is_empty() {
            item_norm.push(T::zero());
            continue;
        }
        let h = shares::<T>(nb, |u| assignment.user(u), &mut scratch);
        item_norm.push(h.iter().fold(T::zero(), |a, &b| a + b));
        item_side.extend(h);
    }
    Ok(CompatibilityWeights {
        user_side,
        item_side,
        user_norm,
        item_norm,
    })
}

/// Each user's share of intra-community train items.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBubbleProfile {
    pub ilfbi_init: Vec<f64>,
    pub mean_ilfbi_init: f64,
}

impl UserBubbleProfile {
    pub fn from_values(ilfbi_init: Vec<f64>) -> Self {
        let mean_ilfbi_init = if ilfbi_init.is_empty() {
            0.0
        } else {
            ilfbi_init.iter().sum::<f64>() / ilfbi_init.len() as f64
        };
        Self {
            ilfbi_init,
            mean_ilfbi_init,
        }
    }
}

pub fn ilfbi_init(ds: &InteractionDataset, assignment: &CommunityAssignment) -> UserBubbleProfile {
    let values = (0..ds.num_users)
        .map(|u| {
            let nb = ds.user_adj.neighbors(u);
            if nb.is_empty() {
                return 0.0;
            }
            let cu = assignment.user(u);
            nb.iter().filter(|&&i| assignment.item(i) == cu).count() as f64 / nb.len() as f64
        })
        .collect();
    UserBubbleProfile::from_values(values)
}

/// `communities.tsv`: a `#` summary line, then `u|i  external  dense  community`.
pub fn write_communities(path: &Path, ds: &InteractionDataset, a: &CommunityAssignment) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# num_communities={} modularity={:.12}", a.num_communities, a.modularity).map_err(io)?;
    for u in 0..ds.num_users {
        writeln!(w, "u\t{}\t{}\t{}", ds.users.external(u), u, a.user(u)).map_err(io)?;
    }
    for i in 0..ds.num_items {
        writeln!(w, "i\t{}\t{}\t{}", ds.items.external(i), i, a.item(i)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_communities(path: &Path, ds: &InteractionDataset) -> Result<CommunityAssignment> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: &str| Error::Parse {
        path: path.to_owned(),
        line,
        message: message.to_owned(),
    };
    let mut labels = vec![usize::MAX; ds.num_nodes()];
    let mut num_communities = None;
    let mut modularity = None;
    for (n, line) in text.lines().enumerate() {
        if let Some(summary) = line.strip_prefix('#') {
            for kv in summary.split_whitespace() {
                match kv.split_once('=') {
                    Some(("num_communities", v)) => num_communities = v.parse().ok(),
                    Some(("modularity", v)) => modularity = v.parse().ok(),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad(n + 1, "expected 4 columns"));
        }
        let dense: usize = cols[2].parse().map_err(|_| bad(n + 1, "bad index"))?;
        let comm: usize = cols[3].parse().map_err(|_| bad(n + 1, "bad community"))?;
        let node = match cols[0] {
            "u" if dense < ds.num_users => dense,
            "i" if dense < ds.num_items => ds.num_users + dense,
            _ => return Err(bad(n + 1, "bad node type or index")),
        };
        labels[node] = comm;
    }
    if labels.contains(&usize::MAX) {
        return Err(bad(0, "not every node is labeled"));
    }
    let num_communities = num_communities.ok_or_else(|| bad(1, "missing summary line"))?;
    if labels.iter().any(|&c| c >= num_communities) {
        return Err(bad(0, "community id out of range"));
    }
    Ok(CommunityAssignment {
        labels,
        num_communities,
        num_users: ds.num_users,
        modularity: modularity.unwrap_or(f64::NAN),
        level_modularity: Vec::new(),
    })
}
