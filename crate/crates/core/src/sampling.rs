//! Community-enhanced negative sampling.
//!
//! With probability `alpha` the negative comes from the user's own
//! community, otherwise from the whole catalog; both draws exclude items
//! the user interacted with in train.

use rand::Rng as _;

use crate::community::CommunityAssignment;
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

const REJECTION_TRIES: usize = 100;

#[derive(Debug, Clone)]
pub struct NegativeSampler {
    num_items: usize,
    /// Items of each community, ascending.
    items_by_comm: Vec<Vec<usize>>,
    user_comm: Vec<usize>,
}

impl NegativeSampler {
    pub fn new(ds: &InteractionDataset, assignment: &CommunityAssignment) -> Self {
        let mut items_by_comm = vec![Vec::new(); assignment.num_communities.max(1)];
        for i in 0..ds.num_items {
            items_by_comm[assignment.item(i)].push(i);
        }
        Self {
            num_items: ds.num_items,
            items_by_comm,
            user_comm: assignment.user_labels().to_vec(),
        }
    }

    /// Sampler without community information; only `alpha = 0` makes sense.
    pub fn uniform(ds: &InteractionDataset) -> Self {
        Self {
            num_items: ds.num_items,
            items_by_comm: vec![Vec::new()],
            user_comm: vec![0; ds.num_users],
        }
    }

    pub fn intra_pool(&self, user: usize) -> &[usize] {
        &self.items_by_comm[self.user_comm[user]]
    }

    pub fn sample(&self, user: usize, ds: &InteractionDataset, alpha: f64, rng: &mut Rng) -> Result<usize> {
        let seen = ds.user_adj.neighbors(user);
        if seen.len() >= self.num_items {
            return Err(Error::Contract(format!("user {user} interacted with every item")));
        }
        let x: f64 = rng.random();
        if x < alpha {
            let pool = self.intra_pool(user);
            if let Some(j) = draw_from(pool.len(), |k| pool[k], seen, rng) {
                return Ok(j);
            }
        }
        Ok(draw_from(self.num_items, |k| k, seen, rng).expect("complement is non-empty"))
    }

    /// Share of the user's non-interacted items that lie in its community.
    pub fn base_rate(&self, user: usize, ds: &InteractionDataset) -> f64 {
        let seen = ds.user_adj.neighbors(user);
        let intra = self.intra_pool(user).iter().filter(|i| seen.binary_search(i).is_err()).count();
        intra as f64 / (self.num_items - seen.len()) as f64
    }
}

/// Uniform draw from `{pool(k) : k < len} \ seen`: rejection sampling first,
/// then an exact scan. `None` when every pool item is excluded.
fn draw_from(len: usize, pool: impl Fn(usize) -> usize, seen: &[usize], rng: &mut Rng) -> Option<usize> {
    if len == 0 {
        return None;
    }
    for _ in 0..REJECTION_TRIES {
        let j = pool(rng.random_range(0..len));
        if seen.binary_search(&j).is_err() {
            return Some(j);
        }
    }
    let free: Vec<usize> = (0..len).map(&pool).filter(|j| seen.binary_search(j).is_err()).collect();
    if free.is_empty() {
        None
    } else {
        Some(free[rng.random_range(0..free.len())])
    }
}

/// One-off convenience wrapper; training loops keep a [`NegativeSampler`].
pub fn sample_negative(
    user: usize,
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    alpha: f64,
    rng: &mut Rng,
) -> Result<usize> {
    NegativeSampler::new(ds, assignment).sample(user, ds, alpha, rng)
}
