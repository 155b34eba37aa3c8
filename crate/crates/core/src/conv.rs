//! Weighted bipartite graph convolution shared by LightGCN and the
//! community-reweighted variant.
//!
//! One layer maps `(U, I) -> (A_u I, A_i U)` where `A_u[u, i]` and
//! `A_i[i, u]` are per-edge weights over the train graph. Layers are
//! combined as `sum_k c_k X^(k)`; the backward pass applies the transposed
//! operator in Horner form so gradients reach the layer-0 tables exactly.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::community::CompatibilityWeights;
use crate::dataset::{Csr, InteractionDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pair of row-major user/item tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables<T> {
    pub users: Array2<T>,
    pub items: Array2<T>,
}

impl<T: Scalar> Tables<T> {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            users: Array2::zeros((num_users, dim)),
            items: Array2::zeros((num_items, dim)),
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            users: Array2::zeros(other.users.raw_dim()),
            items: Array2::zeros(other.items.raw_dim()),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn fill_zero(&mut self) {
        self.users.fill(T::zero());
        self.items.fill(T::zero());
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.users += &other.users;
        self.items += &other.items;
    }

    pub fn scaled_add(&mut self, alpha: T, other: &Self) {
        self.users.scaled_add(alpha, &other.users);
        self.items.scaled_add(alpha, &other.items);
    }

    pub fn all_finite(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> T {
        self.users.iter().chain(self.items.iter()).map(|&x| x * x).sum()
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[T] {
        row(&self.users, u)
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[T] {
        row(&self.items, i)
    }
}

#[inline]
pub(crate) fn row<T>(a: &Array2<T>, r: usize) -> &[T] {
    let d = a.ncols();
    &a.as_slice().expect("standard layout")[r * d..(r + 1) * d]
}

#[inline]
pub(crate) fn row_mut<T>(a: &mut Array2<T>, r: usize) -> &mut [T] {
    let d = a.ncols();
    &mut a.as_slice_mut().expect("standard layout")[r * d..(r + 1) * d]
}

/// How the per-layer outputs are combined into the final embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCombine {
    /// `(1 / (L + 1)) sum_k X^(k)`; isolated nodes keep `X^(0)` unscaled.
    Mean,
    /// `sum_k X^(k)`.
    Sum,
}

/// Edge weights of both propagation directions, stored in both CSR orders
/// so forward and transposed products are row-parallel.
#[derive(Debug, Clone)]
pub struct BipartiteConv<T> {
    user_adj_offsets: Vec<usize>,
    user_adj_targets: Vec<usize>,
    item_adj_offsets: Vec<usize>,
    item_adj_targets: Vec<usize>,
    /// `A_u[u, i]`, aligned with `user_adj`.
    to_user: Vec<T>,
    /// `A_u[u, i]`, aligned with `item_adj` (used by `A_u^T`).
    to_user_t: Vec<T>,
    /// `A_i[i, u]`, aligned with `item_adj`.
    to_item: Vec<T>,
    /// `A_i[i, u]`, aligned with `user_adj` (used by `A_i^T`).
    to_item_t: Vec<T>,
    user_degree_zero: Vec<bool>,
    item_degree_zero: Vec<bool>,
}

impl<T: Scalar> BipartiteConv<T> {
    /// `to_user` aligned with `user_adj`, `to_item` aligned with `item_adj`.
    pub fn new(ds: &InteractionDataset, to_user: Vec<T>, to_item: Vec<T>) -> Self {
        assert_eq!(to_user.len(), ds.user_adj.nnz());
        assert_eq!(to_item.len(), ds.item_adj.nnz());
        // position in item_adj of each user_adj entry
        let mut cursor: Vec<usize> = (0..ds.num_items).map(|i| ds.item_adj.row_start(i)).collect();
        let mut perm = vec![0usize; ds.user_adj.nnz()];
        for u in 0..ds.num_users {
            let start = ds.user_adj.row_start(u);
            for (k, &i) in ds.user_adj.neighbors(u).iter().enumerate() {
                perm[start + k] = cursor[i];
                cursor[i] += 1;
            }
        }
        let mut to_user_t = vec![T::zero(); to_user.len()];
        let mut to_item_t = vec![T::zero(); to_item.len()];
        for (ue, &ie) in perm.iter().enumerate() {
            to_user_t[ie] = to_user[ue];
            to_item_t[ue] = to_item[ie];
        }
        let offsets = |csr: &Csr| (0..=csr.rows()).map(|r| csr.row_start(r)).collect::<Vec<_>>();
        let targets = |csr: &Csr| (0..csr.rows()).flat_map(|r| csr.neighbors(r).iter().copied()).collect::<Vec<_>>();
        Self {
            user_adj_offsets: offsets(&ds.user_adj),
            user_adj_targets: targets(&ds.user_adj),
            item_adj_offsets: offsets(&ds.item_adj),
            item_adj_targets: targets(&ds.item_adj),
            to_user,
            to_user_t,
            to_item,
            to_item_t,
            user_degree_zero: (0..ds.num_users).map(|u| ds.user_adj.degree(u) == 0).collect(),
            item_degree_zero: (0..ds.num_items).map(|i| ds.item_adj.degree(i) == 0).collect(),
        }
    }

    /// Symmetric normalization `1 / sqrt(|N_u| |N_i|)`.
    pub fn lightgcn(ds: &InteractionDataset) -> Self {
        let w = |u: usize, i: usize| {
            T::one() / T::of((ds.user_adj.degree(u) as f64 * ds.item_adj.degree(i) as f64).sqrt())
        };
        let to_user = (0..ds.num_users)
            .flat_map(|u| ds.user_adj.neighbors(u).iter().map(move |&i| w(u, i)))
            .collect();
        let to_item = (0..ds.num_items)
            .flat_map(|i| ds.item_adj.neighbors(i).iter().map(move |&u| w(u, i)))
            .collect();
        Self::new(ds, to_user, to_item)
    }

    /// Community-reweighted normalization
    /// `h / (sqrt(user_norm[u]) sqrt(item_norm[i]))`, each direction using
    /// its own compatibility value.
    pub fn community(ds: &InteractionDataset, h: &CompatibilityWeights<T>) -> Result<Self> {
        for (name, norms, csr) in [("user", &h.user_norm, &ds.user_adj), ("item", &h.item_norm, &ds.item_adj)] {
            for (v, &n) in norms.iter().enumerate() {
                if csr.degree(v) > 0 && !(n > T::zero()) {
                    return Err(Error::Contract(format!("{name} {v} has neighbors but norm {n}")));
                }
            }
        }
        let mut to_user = Vec::with_capacity(ds.user_adj.nnz());
        for u in 0..ds.num_users {
            let start = ds.user_adj.row_start(u);
            for (k, &i) in ds.user_adj.neighbors(u).iter().enumerate() {
                to_user.push(h.user_side[start + k] / (h.user_norm[u].sqrt() * h.item_norm[i].sqrt()));
            }
        }
        let mut to_item = Vec::with_capacity(ds.item_adj.nnz());
        for i in 0..ds.num_items {
            let start = ds.item_adj.row_start(i);
            for (k, &u) in ds.item_adj.neighbors(i).iter().enumerate() {
                to_item.push(h.item_side[start + k] / (h.item_norm[i].sqrt() * h.user_norm[u].sqrt()));
            }
        }
        Ok(Self::new(ds, to_user, to_item))
    }

    pub fn num_users(&self) -> usize {
        self.user_degree_zero.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_degree_zero.len()
    }

    /// `out[r] = sum_k w[k] * src[targets[k]]` over CSR row r.
    fn spmm(offsets: &[usize], targets: &[usize], weights: &[T], src: ArrayView2<T>, out: &mut Array2<T>) {
        let d = src.ncols();
        let src = src.as_slice().expect("standard layout");
        out.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(d.max(1))
            .enumerate()
            .for_each(|(r, dst)| {
                dst.fill(T::zero());
                for k in offsets[r]..offsets[r + 1] {
                    let w = weights[k];
                    let s = &src[targets[k] * d..(targets[k] + 1) * d];
                    for (o, &x) in dst.iter_mut().zip(s) {
                        *o += w * x;
                    }
                }
            });
    }

    /// One propagation layer.
    pub fn layer(&self, x: &Tables<T>) -> Tables<T> {
        let mut out = Tables::zeros_like(x);
        Self::spmm(&self.user_adj_offsets, &self.user_adj_targets, &self.to_user, x.items.view(), &mut out.users);
        Self::spmm(&self.item_adj_offsets, &self.item_adj_targets, &self.to_item, x.users.view(), &mut out.items);
        out
    }

    /// Transposed layer: gradient w.r.t. a layer's input given the gradient
    /// w.r.t. its output.
    pub fn layer_t(&self, g: &Tables<T>) -> Tables<T> {
        let mut out = Tables::zeros_like(g);
        // users feed items through A_i: dU = A_i^T dI
        Self::spmm(&self.user_adj_offsets, &self.user_adj_targets, &self.to_item_t, g.items.view(), &mut out.users);
        // items feed users through A_u: dI = A_u^T dU
        Self::spmm(&self.item_adj_offsets, &self.item_adj_targets, &self.to_user_t, g.users.view(), &mut out.items);
        out
    }

    fn coefficient(&self, combine: LayerCombine, layers: usize) -> T {
        match combine {
            LayerCombine::Mean => T::one() / T::of_usize(layers + 1),
            LayerCombine::Sum => T::one(),
        }
    }

    /// All layers `X^(0..=L)`.
    pub fn layers(&self, x0: &Tables<T>, layers: usize) -> Vec<Tables<T>> {
        let mut out = Vec::with_capacity(layers + 1);
        out.push(x0.clone());
        for k in 0..layers {
            let next = self.layer(&out[k]);
            out.push(next);
        }
        out
    }

    /// Combined embedding `sum_k c_k X^(k)`.
    pub fn forward(&self, x0: &Tables<T>, layers: usize, combine: LayerCombine) -> Tables<T> {
        let c = self.coefficient(combine, layers);
        let mut acc = x0.clone();
        let mut cur = x0.clone();
        for _ in 0..layers {
            cur = self.layer(&cur);
            acc.add_assign(&cur);
        }
        acc.users.mapv_inplace(|v| v * c);
        acc.items.mapv_inplace(|v| v * c);
        if combine == LayerCombine::Mean {
            self.restore_isolated(&mut acc, x0);
        }
        acc
    }

    fn restore_isolated(&self, acc: &mut Tables<T>, x0: &Tables<T>) {
        for (u, _) in self.user_degree_zero.iter().enumerate().filter(|(_, &z)| z) {
            row_mut(&mut acc.users, u).copy_from_slice(x0.user(u));
        }
        for (i, _) in self.item_degree_zero.iter().enumerate().filter(|(_, &z)| z) {
            row_mut(&mut acc.items, i).copy_from_slice(x0.item(i));
        }
    }

    /// Gradient w.r.t. `X^(0)` given the gradient w.r.t. the combined output.
    pub fn backward(&self, g: &Tables<T>, layers: usize, combine: LayerCombine) -> Tables<T> {
        let c = self.coefficient(combine, layers);
        let mut scaled = g.clone();
        scaled.users.mapv_inplace(|v| v * c);
        scaled.items.mapv_inplace(|v| v * c);
        let mut acc = scaled.clone();
        for _ in 0..layers {
            let mut next = self.layer_t(&acc);
            next.add_assign(&scaled);
            acc = next;
        }
        if combine == LayerCombine::Mean {
            // isolated rows are a plain copy of X^(0)
            self.restore_isolated(&mut acc, g);
        }
        acc
    }
}
