//! Planted-community interaction logs for tests and small experiments.
//!
//! Users and items are spread round-robin over `communities` groups. Each
//! user draws a degree, and each interaction lands in the user's own group
//! with probability `intra`, otherwise in a uniformly chosen other group.
//! Within a group items follow a power-law popularity.

use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::dataset::RawInteractions;
use crate::rng;

/// Stream id for synthetic data, distinct from the training streams.
const SYNTH: u64 = 0x5359_4e54_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub communities: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    /// Probability that an interaction stays in the user's group.
    pub intra: f64,
    /// Popularity exponent inside a group (0 = uniform).
    pub popularity: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_users: 300,
            num_items: 400,
            communities: 4,
            min_degree: 10,
            max_degree: 40,
            intra: 0.8,
            popularity: 0.8,
            seed: 7,
        }
    }
}

/// Planted group of user `u` (items use the same round-robin rule).
pub fn planted_group(index: usize, communities: usize) -> usize {
    index % communities
}

pub fn planted(cfg: &PlantedConfig) -> RawInteractions {
    assert!(cfg.communities >= 1 && cfg.num_items >= cfg.communities);
    assert!(cfg.min_degree >= 1 && cfg.min_degree <= cfg.max_degree);
    let mut rng = rng::rng_for(cfg.seed, SYNTH);
    let groups: Vec<Vec<usize>> = (0..cfg.communities)
        .map(|c| (0..cfg.num_items).filter(|&i| planted_group(i, cfg.communities) == c).collect())
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = groups
        .iter()
        .map(|g| {
            let w: Vec<f64> = (0..g.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.popularity)).collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let mut pairs = Vec::new();
    let mut seen = Vec::new();
    for u in 0..cfg.num_users {
        let own = planted_group(u, cfg.communities);
        let degree = rng.random_range(cfg.min_degree..=cfg.max_degree).min(cfg.num_items - 1);
        seen.clear();
        let mut tries = 0;
        while seen.len() < degree && tries < 100 * degree {
            tries += 1;
            let g = if cfg.communities == 1 || rng.random::<f64>() < cfg.intra {
                own
            } else {
                let other = rng.random_range(0..cfg.communities - 1);
                if other >= own {
                    other + 1
                } else {
                    other
                }
            };
            let item = groups[g][pickers[g].sample(&mut rng)];
            if !seen.contains(&item) {
                seen.push(item);
                pairs.push((u, item));
            }
        }
    }
    RawInteractions::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_mostly_intra() {
        let cfg = PlantedConfig::default();
        let a = planted(&cfg);
        let b = planted(&cfg);
        assert_eq!(a.edges, b.edges);
        let intra = a
            .edges
            .iter()
            .filter(|e| {
                let u: usize = a.users.external(e.user).parse().unwrap();
                let i: usize = a.items.external(e.item).parse().unwrap();
                planted_group(u, 4) == planted_group(i, 4)
            })
            .count();
        let share = intra as f64 / a.edges.len() as f64;
        // duplicate rejection thins the popular intra items a little
        assert!(share > 0.65 && share <= 0.8, "{share}");
    }
}
