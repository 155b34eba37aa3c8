#![allow(dead_code)]

pub mod checks;

use cdcgcn::community::CommunityAssignment;
use cdcgcn::conv::Tables;
use cdcgcn::dataset::InteractionDataset;
use cdcgcn::discriminator::Discriminator;
use cdcgcn::loss::Triplet;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bipartite train graph where every user has at least one train
/// item and at least one item it has not seen.
pub fn random_toy(seed: u64, users: usize, items: usize, density: f64) -> InteractionDataset {
    assert!(items >= 2);
    let mut r = rng(seed);
    let mut train = Vec::new();
    for u in 0..users {
        let mut row: Vec<usize> = (0..items).filter(|_| r.random::<f64>() < density).collect();
        if row.is_empty() {
            row.push(r.random_range(0..items));
        }
        if row.len() == items {
            let drop = r.random_range(0..items);
            row.retain(|&i| i != drop);
        }
        train.extend(row.into_iter().map(|i| (u, i)));
    }
    InteractionDataset::from_dense(users, items, &train, &[], &[])
}

/// Uniformly random labels in `0..k` (relabelled contiguously).
pub fn random_labels(ds: &InteractionDataset, k: usize, seed: u64) -> CommunityAssignment {
    let mut r = rng(seed ^ 0xabcdef);
    let labels = (0..ds.num_nodes()).map(|_| r.random_range(0..k)).collect();
    CommunityAssignment::from_labels(ds.num_users, labels, ds)
}

/// Triplets over train positives with random unseen negatives.
pub fn random_triplets(ds: &InteractionDataset, count: usize, seed: u64) -> Vec<Triplet> {
    let mut r = rng(seed ^ 0x7777);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let e = ds.train.choose(&mut r).unwrap();
        let free: Vec<usize> = (0..ds.num_items).filter(|&i| !ds.is_train(e.user, i)).collect();
        out.push(Triplet::new(e.user, e.item, *free.choose(&mut r).unwrap()));
    }
    out
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both
/// vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` over every entry of a flat parameter vector.
pub fn central_differences(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + FD_STEP;
            let up = f(&probe);
            probe[k] = x[k] - FD_STEP;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn flat_tables(t: &Tables<f64>) -> Vec<f64> {
    t.users.iter().chain(t.items.iter()).copied().collect()
}

pub fn set_tables(t: &mut Tables<f64>, flat: &[f64]) {
    let nu = t.users.len();
    t.users.as_slice_mut().unwrap().copy_from_slice(&flat[..nu]);
    t.items.as_slice_mut().unwrap().copy_from_slice(&flat[nu..]);
}

/// Finite-difference gradient per discriminator tensor.
pub fn disc_differences(disc: &Discriminator<f64>, mut f: impl FnMut(&Discriminator<f64>) -> f64) -> Vec<Vec<f64>> {
    (0..6)
        .map(|t| {
            let base = disc.tensors()[t].to_vec();
            let mut probe = disc.clone();
            central_differences(&base, |x| {
                probe.tensors_mut()[t].copy_from_slice(x);
                f(&probe)
            })
        })
        .collect()
}

/// Dense `(m + n) x (m + n)` matrix with `a[u][m + i] = to_user(u, i)` and
/// `a[m + i][u] = to_item(i, u)` on train edges.
pub fn dense_operator(
    ds: &InteractionDataset,
    to_user: impl Fn(usize, usize) -> f64,
    to_item: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let n = ds.num_nodes();
    let m = ds.num_users;
    let mut a = vec![vec![0.0; n]; n];
    for e in &ds.train {
        a[e.user][m + e.item] = to_user(e.user, e.item);
        a[m + e.item][e.user] = to_item(e.item, e.user);
    }
    a
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..k {
            if a[i][j] != 0.0 {
                for l in 0..p {
                    c[i][l] += a[i][j] * b[j][l];
                }
            }
        }
    }
    c
}

/// Stacked node-feature matrix, users first.
pub fn stack(t: &Tables<f64>) -> Vec<Vec<f64>> {
    t.users.rows().into_iter().chain(t.items.rows()).map(|r| r.to_vec()).collect()
}

/// All set partitions of `0..n` as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=max + 1 {
            prefix.push(c);
            grow(prefix, max.max(c), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        grow(&mut vec![0], 0, n, &mut out);
    }
    out
}

/// Modularity from the dense definition
/// `(1 / 2m) sum_ij (A_ij - k_i k_j / 2m) [c_i = c_j]`.
pub fn dense_modularity(n: usize, edges: &[(usize, usize)], labels: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(x, y) in edges {
        a[x][y] = 1.0;
        a[y][x] = 1.0;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Best modularity over every partition, by enumeration.
pub fn brute_force_modularity(n: usize, edges: &[(usize, usize)]) -> f64 {
    set_partitions(n)
        .iter()
        .map(|p| dense_modularity(n, edges, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Connected bipartite graph on `users + items` nodes (items numbered after
/// users).
#[derive(Debug, Clone)]
pub struct BipartiteFixture {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub edges: Vec<(usize, usize)>,
}

impl BipartiteFixture {
    fn new(name: impl Into<String>, users: usize, items: usize, pairs: &[(usize, usize)]) -> Self {
        Self {
            name: name.into(),
            users,
            items,
            edges: pairs.iter().map(|&(u, i)| (u, users + i)).collect(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.users + self.items
    }

    pub fn connected(&self) -> bool {
        let n = self.nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                for (x, y) in [(a, b), (b, a)] {
                    if x == v && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Named shapes plus seeded random connected bipartite graphs, all with at
/// most 8 nodes.
pub fn louvain_fixtures(random: usize) -> Vec<BipartiteFixture> {
    let complete = |a: usize, b: usize| -> Vec<(usize, usize)> {
        (0..a).flat_map(|u| (0..b).map(move |i| (u, i))).collect()
    };
    let mut out = vec![
        BipartiteFixture::new("single edge", 1, 1, &[(0, 0)]),
        BipartiteFixture::new("path 4", 2, 2, &[(0, 0), (1, 0), (1, 1)]),
        BipartiteFixture::new("path 8", 4, 4, &[(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3)]),
        BipartiteFixture::new("star 1x7", 1, 7, &complete(1, 7)),
        BipartiteFixture::new("star 7x1", 7, 1, &complete(7, 1)),
        BipartiteFixture::new("cycle 4", 2, 2, &complete(2, 2)),
        BipartiteFixture::new("cycle 6", 3, 3, &[(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (0, 2)]),
        BipartiteFixture::new(
            "cycle 8",
            4,
            4,
            &[(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3), (0, 3)],
        ),
        BipartiteFixture::new("K 2,3", 2, 3, &complete(2, 3)),
        BipartiteFixture::new("K 3,3", 3, 3, &complete(3, 3)),
        BipartiteFixture::new("K 4,4", 4, 4, &complete(4, 4)),
        BipartiteFixture::new("K 3,5", 3, 5, &complete(3, 5)),
        BipartiteFixture::new(
            "squares joined by an edge",
            4,
            4,
            &[(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3), (1, 2)],
        ),
        BipartiteFixture::new(
            "two stars bridged",
            2,
            6,
            &[(0, 0), (0, 1), (0, 2), (1, 3), (1, 4), (1, 5), (0, 3)],
        ),
    ];
    let mut r = rng(0x10f1);
    let mut made = 0;
    while made < random {
        let users = r.random_range(1..=6usize);
        let items = r.random_range(1..=(8 - users).max(1));
        if users + items < 3 {
            continue;
        }
        let density = r.random_range(0.2..0.8);
        let pairs: Vec<(usize, usize)> = (0..users)
            .flat_map(|u| (0..items).map(move |i| (u, i)))
            .filter(|_| r.random::<f64>() < density)
            .collect();
        let f = BipartiteFixture::new(format!("random {made}"), users, items, &pairs);
        if !f.edges.is_empty() && f.connected() {
            out.push(f);
            made += 1;
        }
    }
    out
}

/// Observed intra-community negative fraction for `user` over `draws`
/// samples, the mixture-law expectation and its binomial standard deviation.
pub fn sampler_law(
    ds: &InteractionDataset,
    a: &CommunityAssignment,
    user: usize,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> (f64, f64, f64) {
    let sampler = cdcgcn::sampling::NegativeSampler::new(ds, a);
    let mut r = cdcgcn::rng::rng_for(seed, cdcgcn::rng::stream::SAMPLING);
    let mut intra = 0usize;
    for _ in 0..draws {
        let j = sampler.sample(user, ds, alpha, &mut r).unwrap();
        assert!(!ds.is_train(user, j), "sampled a train item");
        if a.item(j) == a.user(user) {
            intra += 1;
        }
    }
    let seen = ds.user_adj.neighbors(user);
    let free = ds.num_items - seen.len();
    let free_intra = (0..ds.num_items)
        .filter(|&i| a.item(i) == a.user(user) && !ds.is_train(user, i))
        .count();
    let base = free_intra as f64 / free as f64;
    let p = alpha + (1.0 - alpha) * base;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    (intra as f64 / draws as f64, p, sigma)
}

/// Fixture for the sampler law: 40 items over 3 communities, one user with
/// a partly seen intra pool.
pub fn sampler_fixture() -> (InteractionDataset, CommunityAssignment) {
    let train: Vec<(usize, usize)> = [0, 1, 2, 3, 20, 21].iter().map(|&i| (0, i)).chain([(1, 5), (1, 30)]).collect();
    let ds = InteractionDataset::from_dense(2, 40, &train, &[], &[]);
    let mut labels = vec![0, 1];
    labels.extend((0..40).map(|i| if i < 12 { 0 } else if i < 30 { 1 } else { 2 }));
    let a = CommunityAssignment::from_labels(2, labels, &ds);
    (ds, a)
}

/// Three users (one per community), nine items (three per community) and
/// fixed top-3 lists:
/// u0 -> [0, 1, 3] (counts 2,1,0), u1 -> [3, 6, 0] (1,1,1),
/// u2 -> [6, 7, 8] (0,0,3). Truth: u0 {1, 5}, u1 {0, 3, 6}, u2 none.
pub fn metric_fixture() -> (CommunityAssignment, Vec<cdcgcn::eval::RankedList>, Vec<Vec<usize>>) {
    let ds = InteractionDataset::from_dense(3, 9, &[(0, 2), (1, 4), (2, 5)], &[], &[]);
    let labels = vec![0, 1, 2, 0, 0, 0, 1, 1, 1, 2, 2, 2];
    let a = CommunityAssignment::from_labels(3, labels, &ds);
    let list = |user: usize, items: &[usize]| cdcgcn::eval::RankedList {
        user,
        items: items.to_vec(),
        scores: vec![1.0, 0.5, 0.25],
        truncated: false,
    };
    let lists = vec![list(0, &[0, 1, 3]), list(1, &[3, 6, 0]), list(2, &[6, 7, 8])];
    let truth = vec![vec![1, 5], vec![0, 3, 6], vec![]];
    (a, lists, truth)
}

/// Hand-computed values for [`metric_fixture`] at k = 3.
pub struct FixtureExpectations {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub ilfbi: f64,
    pub cgi: f64,
}

pub fn metric_fixture_expected() -> FixtureExpectations {
    // u0: one hit at rank 2 of two relevant items; u1: all three hit
    let ndcg_u0 = (1.0 / 3f64.log2()) / (1.0 + 1.0 / 3f64.log2());
    FixtureExpectations {
        precision: (1.0 / 3.0 + 1.0) / 2.0,
        recall: (0.5 + 1.0) / 2.0,
        ndcg: (ndcg_u0 + 1.0) / 2.0,
        // intra shares 2/3, 1/3, 3/3
        ilfbi: (2.0 / 3.0 + 1.0 / 3.0 + 1.0) / 3.0,
        // Gini 4/9 for (0,1,2), 0 for (1,1,1), 2/3 for (0,0,3)
        cgi: (4.0 / 9.0 + 0.0 + 2.0 / 3.0) / 3.0,
    }
}

/// Small planted-community dataset split 7/1/2.
pub fn small_planted(seed: u64, users: usize, items: usize) -> InteractionDataset {
    let raw = cdcgcn::synthetic::planted(&cdcgcn::synthetic::PlantedConfig {
        num_users: users,
        num_items: items,
        communities: 3,
        min_degree: 6,
        max_degree: 14,
        seed,
        ..Default::default()
    });
    cdcgcn::dataset::split_dataset(raw, cdcgcn::dataset::SplitRatios::default(), seed).unwrap()
}

/// Tables compared bit for bit.
pub fn same_bits(a: &Tables<f32>, b: &Tables<f32>) -> bool {
    a.users.iter().chain(a.items.iter()).zip(b.users.iter().chain(b.items.iter())).all(|(x, y)| x.to_bits() == y.to_bits())
}
