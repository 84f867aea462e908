//! Social graph, sub-node interaction graph and symmetric normalization.
//!
//! Items are split into `K` relation-specific sub-nodes; sub-node `(n, k)`
//! (with `k` in `1..=K`) lives at column `n·K + (k − 1)` of the interaction
//! matrix. All graphs are immutable once built.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::CsrMatrix;

/// Undirected user-user graph without self loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSocialGraph {
    neighbors: Vec<Vec<usize>>,
}

impl UserSocialGraph {
    /// Symmetrizes, deduplicates and drops self pairs.
    pub fn build(edges: &[(usize, usize)], num_users: usize) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_users];
        for &(a, b) in edges {
            if a >= num_users || b >= num_users {
                return Err(Error::OutOfRange(a, b, num_users));
            }
            if a == b {
                continue;
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn num_users(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.neighbors[m]
    }

    pub fn degree(&self, m: usize) -> usize {
        self.neighbors[m].len()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Each undirected edge once, as `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Binary `M x M` adjacency `A_s` (both directions stored).
    pub fn adjacency<T: Scalar>(&self) -> CsrMatrix<T> {
        let triplets: Vec<_> = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().map(move |&b| (a, b, T::one())))
            .collect();
        CsrMatrix::from_triplets(self.num_users(), self.num_users(), &triplets)
            .expect("neighbors are in range")
    }

    pub fn normalized<T: Scalar>(&self) -> NormalizedAdjacency<T> {
        normalize(&self.adjacency()).expect("social adjacency is symmetric and binary")
    }

    /// Graph with users relabeled: user `m` becomes `perm[m]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (perm[a], perm[b]))
            .collect();
        Self::build(&edges, self.num_users())
    }
}

/// One observed user-item relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Relation type in `1..=K`.
    pub relation: usize,
    /// Raw rating value.
    pub rating: u32,
}

/// User / item-sub-node bipartite graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubNodeGraph {
    num_users: usize,
    num_items: usize,
    num_relations: usize,
    interactions: Vec<Interaction>,
    user_subnodes: Vec<Vec<(usize, usize)>>,
    subnode_users: Vec<Vec<usize>>,
}

/// Splits `(user, item, rating)` triples into sub-node edges with relation
/// type `k = rating`.
pub fn decompose_interactions(
    ratings: &[(usize, usize, u32)],
    num_users: usize,
    num_items: usize,
    num_relations: usize,
) -> Result<SubNodeGraph> {
    let interactions = ratings
        .iter()
        .map(|&(user, item, rating)| {
            let k = rating as usize;
            if k == 0 || k > num_relations {
                return Err(Error::RatingMapping {
                    value: rating.to_string(),
                    levels: num_relations,
                });
            }
            Ok(Interaction {
                user,
                item,
                relation: k,
                rating,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SubNodeGraph::from_interactions(num_users, num_items, num_relations, interactions)
}

impl SubNodeGraph {
    pub fn from_interactions(
        num_users: usize,
        num_items: usize,
        num_relations: usize,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        if num_relations == 0 {
            return Err(Error::Config(
                "relation type count must be at least 1".into(),
            ));
        }
        let mut user_subnodes = vec![Vec::new(); num_users];
        let mut subnode_users = vec![Vec::new(); num_items * num_relations];
        let mut seen = std::collections::HashSet::with_capacity(interactions.len());
        for it in &interactions {
            if it.user >= num_users || it.item >= num_items {
                return Err(Error::OutOfRange(
                    it.user,
                    it.item,
                    num_users.max(num_items),
                ));
            }
            if it.relation == 0 || it.relation > num_relations {
                return Err(Error::RatingMapping {
                    value: it.relation.to_string(),
                    levels: num_relations,
                });
            }
            if !seen.insert((it.user, it.item)) {
                return Err(Error::DuplicateInteraction {
                    user: it.user,
                    item: it.item,
                });
            }
            user_subnodes[it.user].push((it.item, it.relation));
            subnode_users[it.item * num_relations + it.relation - 1].push(it.user);
        }
        for list in &mut user_subnodes {
            list.sort_unstable();
        }
        for list in &mut subnode_users {
            list.sort_unstable();
        }
        Ok(Self {
            num_users,
            num_items,
            num_relations,
            interactions,
            user_subnodes,
            subnode_users,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_subnodes(&self) -> usize {
        self.num_items * self.num_relations
    }

    /// `M + N·K`.
    pub fn num_vertices(&self) -> usize {
        self.num_users + self.num_subnodes()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn subnode_column(&self, item: usize, relation: usize) -> usize {
        item * self.num_relations + relation - 1
    }

    /// `J_m`: the `(item, relation)` sub-nodes user `m` is connected to.
    pub fn user_neighbors(&self, m: usize) -> &[(usize, usize)] {
        &self.user_subnodes[m]
    }

    /// `J_{n,k}`: users connected to sub-node `(n, k)`.
    pub fn subnode_neighbors(&self, item: usize, relation: usize) -> &[usize] {
        &self.subnode_users[self.subnode_column(item, relation)]
    }

    pub fn subnode_degree_by_column(&self, col: usize) -> usize {
        self.subnode_users[col].len()
    }

    pub fn user_degree(&self, m: usize) -> usize {
        self.user_subnodes[m].len()
    }

    pub fn has_edge(&self, m: usize, item: usize, relation: usize) -> bool {
        self.user_subnodes[m]
            .binary_search(&(item, relation))
            .is_ok()
    }

    /// Binary `M x (N·K)` interaction matrix `A_r`.
    pub fn interaction_matrix<T: Scalar>(&self) -> CsrMatrix<T> {
        let triplets: Vec<_> = self
            .interactions
            .iter()
            .map(|it| (it.user, self.subnode_column(it.item, it.relation), T::one()))
            .collect();
        CsrMatrix::from_triplets(self.num_users, self.num_subnodes(), &triplets)
            .expect("interactions are in range")
    }

    /// `λ = 1 / sqrt(|J_m| · |J_{n,k}|)` for an existing edge.
    pub fn decay_coefficient(&self, m: usize, item: usize, relation: usize) -> Result<f64> {
        if m >= self.num_users
            || item >= self.num_items
            || relation == 0
            || relation > self.num_relations
            || !self.has_edge(m, item, relation)
        {
            return Err(Error::Contract(format!(
                "({m}, ({item}, {relation})) is not an edge of the interaction graph"
            )));
        }
        let du = self.user_degree(m) as f64;
        let dv = self.subnode_neighbors(item, relation).len() as f64;
        Ok(1.0 / (du * dv).sqrt())
    }

    /// The `(user, item, rating)` triples this graph was built from.
    pub fn ratings(&self) -> Vec<(usize, usize, u32)> {
        self.interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating))
            .collect()
    }
}

/// `Ŝ = D̂^{-1/2} (A + I) D̂^{-1/2}` together with the degrees of `A + I`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<T> {
    pub matrix: Arc<CsrMatrix<T>>,
    pub degrees: Vec<usize>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }

    /// `Σ_m Σ_m' â_{m,m'}`, which equals the sum of self-looped degrees.
    pub fn total_degree(&self) -> usize {
        self.degrees.iter().sum()
    }
}

pub fn normalize<T: Scalar>(adjacency: &CsrMatrix<T>) -> Result<NormalizedAdjacency<T>> {
    let (r, c) = adjacency.shape();
    if r != c {
        return Err(Error::Structure(format!(
            "adjacency is {r}x{c}, not square"
        )));
    }
    if adjacency
        .triplets()
        .any(|(i, j, v)| v != T::one() || i == j)
    {
        return Err(Error::Structure(
            "adjacency must be binary with an empty diagonal".into(),
        ));
    }
    if !adjacency.is_symmetric() {
        return Err(Error::Structure("adjacency is not symmetric".into()));
    }
    let degrees: Vec<usize> = (0..r).map(|i| adjacency.row_nnz(i) + 1).collect();
    let inv_sqrt: Vec<T> = degrees
        .iter()
        .map(|&d| T::one() / T::of_usize(d).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(adjacency.nnz() + r);
    for i in 0..r {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for (j, _) in adjacency.row(i) {
            triplets.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(NormalizedAdjacency {
        matrix: Arc::new(CsrMatrix::from_triplets(r, r, &triplets)?),
        degrees,
    })
}

/// `ψ(A)`: number of stored nonzeros.
pub fn count_nonzeros<T: Scalar>(matrix: &CsrMatrix<T>) -> usize {
    matrix.nnz()
}
