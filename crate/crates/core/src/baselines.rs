//! Comparison methods. MMR re-ranks a frozen model's candidates; the
//! fairness and IPS variants are training objectives run through
//! [`crate::train::train_base`].

use rayon::prelude::*;

use crate::community::CommunityAssignment;
use crate::config::{BaselineConfig, TrainingConfig};
use crate::dataset::InteractionDataset;
use crate::error::Result;
use crate::eval::{rank_topk, RankedList, Scorer};
use crate::model::EmbeddingModel;
use crate::scalar::Scalar;
use crate::train::{train_base, BaseObjective, EpochRecord, TrainReport};

/// Greedy community-balanced re-ranking of `candidates` (item, score).
///
/// The first pick is the top-scored item; each later pick maximizes
/// `lambda * score - (1 - lambda) * share`, where `share` is the fraction of
/// already selected items in the candidate's community. Ties go to the
/// higher raw score, then the lower item index. The returned scores are the
/// raw model scores in the new order.
pub fn mmr_rerank(
    user: usize,
    candidates: &[(usize, f64)],
    assignment: &CommunityAssignment,
    lambda: f64,
    k: usize,
) -> RankedList {
    let take = k.min(candidates.len());
    let mut remaining: Vec<(usize, f64)> = candidates.to_vec();
    let mut counts = vec![0usize; assignment.num_communities.max(1)];
    let mut items = Vec::with_capacity(take);
    let mut scores = Vec::with_capacity(take);
    let better = |a: (f64, f64, usize), b: (f64, f64, usize)| {
        a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 < b.2)))
    };
    for step in 0..take {
        let mut best = 0;
        let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY, usize::MAX);
        for (pos, &(item, score)) in remaining.iter().enumerate() {
            let objective = if step == 0 {
                score
            } else {
                let share = counts[assignment.item(item)] as f64 / step as f64;
                lambda * score - (1.0 - lambda) * share
            };
            let key = (objective, score, item);
            if pos == 0 || better(key, best_key) {
                best = pos;
                best_key = key;
            }
        }
        let (item, score) = remaining.swap_remove(best);
        counts[assignment.item(item)] += 1;
        items.push(item);
        scores.push(score);
    }
    RankedList {
        user,
        items,
        scores,
        truncated: k > candidates.len(),
    }
}

/// MMR lists for every user from the `pool_size` best candidates of a
/// frozen scorer.
pub fn mmr_lists<S: Scorer + ?Sized>(
    scorer: &S,
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    cfg: &BaselineConfig,
    k: usize,
) -> Vec<RankedList> {
    let pools = rank_topk(scorer, ds, cfg.pool_size.max(k));
    pools
        .par_iter()
        .map(|l| {
            let cand: Vec<(usize, f64)> = l.items.iter().copied().zip(l.scores.iter().copied()).collect();
            mmr_rerank(l.user, &cand, assignment, cfg.lambda, k)
        })
        .collect()
}

/// Base model trained with the same-community fairness regularizer.
pub fn train_fairness<T: Scalar>(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    cfg: &TrainingConfig,
    gamma: f64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(EmbeddingModel<T>, TrainReport)> {
    train_base(ds, cfg, BaseObjective::Fairness { gamma }, Some(assignment), on_epoch)
}

/// Base model trained with inverse-propensity weighted BPR.
pub fn train_ips<T: Scalar>(
    ds: &InteractionDataset,
    assignment: &CommunityAssignment,
    cfg: &TrainingConfig,
    delta: f64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(EmbeddingModel<T>, TrainReport)> {
    train_base(ds, cfg, BaseObjective::Ips { delta }, Some(assignment), on_epoch)
}
