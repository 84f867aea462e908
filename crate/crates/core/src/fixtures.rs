//! Small hand-built graphs and a seeded planted-structure data generator.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::RatingRecord;
use crate::error::{Error, Result};
use crate::graph::{decompose_interactions, SubNodeGraph, UserSocialGraph};
use crate::rng;

/// Three users, two items, two relation types.
#[derive(Clone, Debug)]
pub struct TinyGraphs {
    pub social: UserSocialGraph,
    pub interactions: SubNodeGraph,
    pub ratings: Vec<(usize, usize, u32)>,
}

/// Social edge `(0,1)`; interactions `(0,0,1)`, `(1,0,2)`, `(1,1,1)`.
pub fn t1() -> TinyGraphs {
    let ratings = vec![(0, 0, 1), (1, 0, 2), (1, 1, 1)];
    TinyGraphs {
        social: UserSocialGraph::build(&[(0, 1)], 3).expect("valid social graph"),
        interactions: decompose_interactions(&ratings, 3, 2, 2).expect("valid interactions"),
        ratings,
    }
}

/// Two disjoint cliques of `k` users each.
pub fn two_cliques(k: usize) -> UserSocialGraph {
    let mut edges = Vec::new();
    for base in [0, k] {
        for a in 0..k {
            for b in a + 1..k {
                edges.push((base + a, base + b));
            }
        }
    }
    UserSocialGraph::build(&edges, 2 * k).expect("valid clique graph")
}

/// Parameters of the planted generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub communities: usize,
    pub rank: usize,
    pub noise: f64,
    /// Spread of users around their community factor.
    pub user_spread: f64,
    /// Mean social degree.
    pub social_degree: f64,
    /// Probability that a social tie stays inside the community.
    pub homophily: f64,
    /// Log-normal sigma of per-user activity.
    pub activity_sigma: f64,
    pub rating_levels: u32,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 300,
            num_interactions: 4000,
            communities: 4,
            rank: 4,
            noise: 0.1,
            user_spread: 0.3,
            social_degree: 6.0,
            homophily: 0.9,
            activity_sigma: 0.6,
            rating_levels: 5,
            seed: 0,
        }
    }
}

/// Generated ratings, trust ties and the hidden structure behind them.
#[derive(Clone, Debug)]
pub struct Planted {
    pub records: Vec<RatingRecord>,
    pub social_edges: Vec<(usize, usize)>,
    pub social: UserSocialGraph,
    pub community: Vec<usize>,
    pub num_users: usize,
    pub num_items: usize,
    pub rating_levels: usize,
}

fn standard_normal_row<R: rand::Rng>(len: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    let n = Normal::new(0.0, scale).expect("finite scale");
    (0..len).map(|_| n.sample(rng)).collect()
}

/// Ratings from rank-`r` community-shared user factors plus Gaussian noise,
/// rounded and clipped to `1..=levels`, with homophilous trust ties.
pub fn planted(spec: &PlantedSpec) -> Result<Planted> {
    let (m, n) = (spec.num_users, spec.num_items);
    if m < 2 || n == 0 || spec.communities == 0 || spec.rank == 0 || spec.rating_levels == 0 {
        return Err(Error::Config(
            "planted generator needs users, items, communities and rank".into(),
        ));
    }
    if spec.num_interactions > m * n {
        return Err(Error::Config(format!(
            "{} interactions exceed {m}x{n} pairs",
            spec.num_interactions
        )));
    }
    let mut rng = rng::stream(spec.seed, "planted");
    let community: Vec<usize> = (0..m).map(|u| u % spec.communities).collect();
    let centers: Vec<Vec<f64>> = (0..spec.communities)
        .map(|_| standard_normal_row(spec.rank, 1.0, &mut rng))
        .collect();
    let users: Vec<Vec<f64>> = community
        .iter()
        .map(|&c| {
            let jitter = standard_normal_row(spec.rank, spec.user_spread, &mut rng);
            centers[c].iter().zip(jitter).map(|(a, b)| a + b).collect()
        })
        .collect();
    let item_scale = 1.0 / (spec.rank as f64).sqrt();
    let items: Vec<Vec<f64>> = (0..n)
        .map(|_| standard_normal_row(spec.rank, item_scale, &mut rng))
        .collect();

    let activity =
        LogNormal::new(0.0, spec.activity_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let weights: Vec<f64> = (0..m).map(|_| activity.sample(&mut rng)).collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| {
            ((w / total) * spec.num_interactions as f64)
                .floor()
                .clamp(1.0, n as f64) as usize
        })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned < spec.num_interactions {
        let u = rng.gen_range(0..m);
        if counts[u] < n {
            counts[u] += 1;
            assigned += 1;
        }
    }
    while assigned > spec.num_interactions {
        let u = rng.gen_range(0..m);
        if counts[u] > 1 {
            counts[u] -= 1;
            assigned -= 1;
        }
    }

    let centre = (spec.rating_levels as f64 + 1.0) / 2.0;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut records = Vec::with_capacity(spec.num_interactions);
    for (u, &c) in counts.iter().enumerate() {
        for item in sample(&mut rng, n, c).into_iter() {
            let affinity: f64 = users[u].iter().zip(&items[item]).map(|(a, b)| a * b).sum();
            let raw = centre + affinity + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, spec.rating_levels as f64) as u32;
            records.push(RatingRecord {
                user: u,
                item,
                rating,
            });
        }
    }

    let target_edges = ((spec.social_degree * m as f64) / 2.0).round() as usize;
    let by_community: Vec<Vec<usize>> = (0..spec.communities)
        .map(|c| (0..m).filter(|&u| community[u] == c).collect())
        .collect();
    let mut seen = HashSet::new();
    let mut social_edges = Vec::with_capacity(target_edges);
    let max_edges = m * (m - 1) / 2;
    let mut attempts = 0usize;
    while social_edges.len() < target_edges.min(max_edges) && attempts < 100 * target_edges + 100 {
        attempts += 1;
        let a = rng.gen_range(0..m);
        let b = if rng.gen_bool(spec.homophily.clamp(0.0, 1.0)) {
            let peers = &by_community[community[a]];
            peers[rng.gen_range(0..peers.len())]
        } else {
            rng.gen_range(0..m)
        };
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            social_edges.push(key);
        }
    }
    let social = UserSocialGraph::build(&social_edges, m)?;
    Ok(Planted {
        records,
        social_edges,
        social,
        community,
        num_users: m,
        num_items: n,
        rating_levels: spec.rating_levels as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t1_shape() {
        let t = t1();
        assert_eq!(t.social.num_edges(), 1);
        assert_eq!(t.interactions.num_subnodes(), 4);
        assert_eq!(t.interactions.interactions().len(), 3);
    }

    #[test]
    fn cliques_have_no_cross_edges() {
        let g = two_cliques(4);
        assert_eq!(g.num_edges(), 12);
        assert!(!g.is_edge(0, 4));
        assert!(g.is_edge(4, 7));
    }

    #[test]
    fn planted_is_deterministic_and_sized() {
        let spec = PlantedSpec::default();
        let a = planted(&spec).unwrap();
        let b = planted(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.social_edges, b.social_edges);
        assert_eq!(a.records.len(), spec.num_interactions);
        let pairs: HashSet<_> = a.records.iter().map(|r| (r.user, r.item)).collect();
        assert_eq!(pairs.len(), a.records.len());
        assert!(a.records.iter().all(|r| (1..=5).contains(&r.rating)));
        let inside = a
            .social_edges
            .iter()
            .filter(|(x, y)| a.community[*x] == a.community[*y])
            .count();
        assert!(inside as f64 > 0.8 * a.social_edges.len() as f64);
    }

    #[test]
    fn planted_ratings_use_several_levels() {
        let p = planted(&PlantedSpec::default()).unwrap();
        let levels: HashSet<_> = p.records.iter().map(|r| r.rating).collect();
        assert!(levels.len() >= 4, "{levels:?}");
    }
}
