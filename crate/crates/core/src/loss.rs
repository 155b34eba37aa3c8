//! Pairwise ranking losses and their analytic gradients with respect to the
//! base embeddings. Every `*_grad` function adds into `grad` and returns the
//! batch-summed loss.

use crate::community::CommunityAssignment;
use crate::conv::{row_mut, Tables};
use crate::scalar::{dot, log_sigmoid, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

impl Triplet {
    pub fn new(user: usize, pos: usize, neg: usize) -> Self {
        Self { user, pos, neg }
    }
}

/// `-ln σ(s(u,i) - s(u,j))` for one triplet.
pub fn bpr_term<T: Scalar>(base: &Tables<T>, t: &Triplet) -> T {
    let u = base.user(t.user);
    -log_sigmoid(dot(u, base.item(t.pos)) - dot(u, base.item(t.neg)))
}

/// Weighted BPR; `weights[k]` scales the k-th triplet (all ones if `None`).
pub fn bpr_loss<T: Scalar>(base: &Tables<T>, triplets: &[Triplet], weights: Option<&[T]>) -> T {
    triplets
        .iter()
        .enumerate()
        .map(|(k, t)| weights.map_or(T::one(), |w| w[k]) * bpr_term(base, t))
        .sum()
}

pub fn bpr_loss_grad<T: Scalar>(
    base: &Tables<T>,
    triplets: &[Triplet],
    weights: Option<&[T]>,
    grad: &mut Tables<T>,
) -> T {
    let d = base.dim();
    let mut loss = T::zero();
    let mut diff = vec![T::zero(); d];
    for (k, t) in triplets.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[k]);
        let eu = base.user(t.user);
        let ei = base.item(t.pos);
        let ej = base.item(t.neg);
        let x = dot(eu, ei) - dot(eu, ej);
        loss += -w * log_sigmoid(x);
        // d/dx [-ln σ(x)] = σ(x) - 1 = -σ(-x)
        let c = -w * sigmoid(-x);
        for ((o, &a), &b) in diff.iter_mut().zip(ei).zip(ej) {
            *o = a - b;
        }
        for (g, &v) in row_mut(&mut grad.users, t.user).iter_mut().zip(&diff) {
            *g += c * v;
        }
        for (g, &v) in row_mut(&mut grad.items, t.pos).iter_mut().zip(eu) {
            *g += c * v;
        }
        for (g, &v) in row_mut(&mut grad.items, t.neg).iter_mut().zip(eu) {
            *g -= c * v;
        }
    }
    loss
}

/// `coef * sum ||row||^2` over the user, positive and negative rows of every
/// triplet (rows repeat once per occurrence).
pub fn l2_rows_loss<T: Scalar>(tables: &Tables<T>, triplets: &[Triplet], coef: T) -> T {
    let sq = |r: &[T]| dot(r, r);
    coef * triplets
        .iter()
        .map(|t| sq(tables.user(t.user)) + sq(tables.item(t.pos)) + sq(tables.item(t.neg)))
        .sum::<T>()
}

pub fn l2_rows_grad<T: Scalar>(tables: &Tables<T>, triplets: &[Triplet], coef: T, grad: &mut Tables<T>) -> T {
    if coef == T::zero() {
        return T::zero();
    }
    let two = coef + coef;
    for t in triplets {
        for (g, &v) in row_mut(&mut grad.users, t.user).iter_mut().zip(tables.user(t.user)) {
            *g += two * v;
        }
        for item in [t.pos, t.neg] {
            for (g, &v) in row_mut(&mut grad.items, item).iter_mut().zip(tables.item(item)) {
                *g += two * v;
            }
        }
    }
    l2_rows_loss(tables, triplets, coef)
}

/// `+1` when the two items share a community, `-1` otherwise.
#[inline]
pub fn same_community_sign(assignment: &CommunityAssignment, i: usize, j: usize) -> f64 {
    if assignment.item(i) == assignment.item(j) {
        1.0
    } else {
        -1.0
    }
}

/// Fairness regularizer `-sum chi(i,j) * gamma * ||e_i - e_j||`. Minimizing
/// it pushes same-community item pairs apart and pulls cross-community
/// pairs together. The norm's gradient at zero distance is taken as zero.
pub fn fairness_loss_grad<T: Scalar>(
    base: &Tables<T>,
    triplets: &[Triplet],
    assignment: &CommunityAssignment,
    gamma: T,
    mut grad: Option<&mut Tables<T>>,
) -> T {
    if gamma == T::zero() {
        return T::zero();
    }
    let d = base.dim();
    let mut diff = vec![T::zero(); d];
    let mut loss = T::zero();
    for t in triplets {
        let chi = T::of(same_community_sign(assignment, t.pos, t.neg));
        for ((o, &a), &b) in diff.iter_mut().zip(base.item(t.pos)).zip(base.item(t.neg)) {
            *o = a - b;
        }
        let dist = dot(&diff, &diff).sqrt();
        loss -= chi * gamma * dist;
        if let Some(g) = grad.as_deref_mut() {
            if dist > T::zero() {
                let c = -chi * gamma / dist;
                for (gi, &v) in row_mut(&mut g.items, t.pos).iter_mut().zip(&diff) {
                    *gi += c * v;
                }
                for (gj, &v) in row_mut(&mut g.items, t.neg).iter_mut().zip(&diff) {
                    *gj -= c * v;
                }
            }
        }
    }
    loss
}

/// Inverse-propensity weight of a triplet: 1 inside the user's community,
/// `1 / delta` for cross-community positives.
pub fn ips_weights<T: Scalar>(triplets: &[Triplet], assignment: &CommunityAssignment, delta: f64) -> Vec<T> {
    let cross = T::of(1.0 / delta);
    triplets
        .iter()
        .map(|t| {
            if assignment.user(t.user) == assignment.item(t.pos) {
                T::one()
            } else {
                cross
            }
        })
        .collect()
}

pub const CE_FLOOR: f64 = 1e-12;

/// `-ln prob[label]`, with the probability floored at 1e-12.
pub fn ce_loss<T: Scalar>(prob: &[T], label: usize) -> T {
    -prob[label].max(T::of(CE_FLOOR)).ln()
}
