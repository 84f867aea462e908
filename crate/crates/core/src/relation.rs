//! Relation-aware message passing over the user / item-sub-node graph.
//!
//! Layer `l` computes, for every user `m` and sub-node `(n, k)`,
//!
//! ```text
//! E_u[m]     = δ( s_m · U[m] + Σ_{(n,k) ∈ J_m}     λ · V[(n,k)] )
//! E_v[(n,k)] = δ( s_nk · V[(n,k)] + Σ_{m ∈ J_{n,k}} λ · U[m] )
//! ```
//!
//! with `U = E_u^{(l-1)} W_2`, `V = E_v^{(l-1)} W_1`, self decay
//! `s = 1/sqrt(|J|)` (1 for isolated nodes) and edge decay
//! `λ = 1/sqrt(|J_m| |J_{n,k}|)`. At layer 1 the user transform is
//! `x_u W_2 ⊕ H* W_3` when a social matrix is injected.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SubNodeGraph;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{xavier_uniform, Bound, CsrMatrix, ParamId, ParamStore, Tape, Tensor, Var};

/// Sparse operators derived once from a [`SubNodeGraph`].
#[derive(Clone, Debug)]
pub struct PropagationOps<T> {
    /// `M x NK`, entry `λ` per edge.
    pub user_from_subnodes: Arc<CsrMatrix<T>>,
    /// `NK x M`, the transpose.
    pub subnodes_from_users: Arc<CsrMatrix<T>>,
    pub user_self: Arc<Vec<T>>,
    pub subnode_self: Arc<Vec<T>>,
    /// `N x NK` mean pooling over the K sub-nodes of each item.
    pub pool: Arc<CsrMatrix<T>>,
    pub num_users: usize,
    pub num_items: usize,
    pub num_relations: usize,
}

fn self_decay<T: Scalar>(degree: usize) -> T {
    if degree == 0 {
        T::one()
    } else {
        T::one() / T::of_usize(degree).sqrt()
    }
}

impl<T: Scalar> PropagationOps<T> {
    pub fn new(graph: &SubNodeGraph) -> Self {
        let m = graph.num_users();
        let nk = graph.num_subnodes();
        let k = graph.num_relations();
        let triplets: Vec<_> = graph
            .interactions()
            .iter()
            .map(|it| {
                let col = graph.subnode_column(it.item, it.relation);
                let du = graph.user_degree(it.user);
                let dv = graph.subnode_degree_by_column(col);
                (it.user, col, T::one() / T::of_usize(du * dv).sqrt())
            })
            .collect();
        let forward = CsrMatrix::from_triplets(m, nk, &triplets).expect("edges in range");
        let backward = forward.transpose();
        let pool_triplets: Vec<_> = (0..nk)
            .map(|col| (col / k, col, T::one() / T::of_usize(k)))
            .collect();
        Self {
            user_from_subnodes: Arc::new(forward),
            subnodes_from_users: Arc::new(backward),
            user_self: Arc::new((0..m).map(|u| self_decay(graph.user_degree(u))).collect()),
            subnode_self: Arc::new(
                (0..nk)
                    .map(|c| self_decay(graph.subnode_degree_by_column(c)))
                    .collect(),
            ),
            pool: Arc::new(
                CsrMatrix::from_triplets(graph.num_items(), nk, &pool_triplets)
                    .expect("pool in range"),
            ),
            num_users: m,
            num_items: graph.num_items(),
            num_relations: k,
        }
    }

    pub fn num_subnodes(&self) -> usize {
        self.num_items * self.num_relations
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GnnLayer {
    /// `W_1^{(l)}`, sub-node side.
    pub item_w: ParamId,
    /// `W_2^{(l)}`, user side.
    pub user_w: ParamId,
    pub slope: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationGnnConfig {
    /// Uniform layer width `d`.
    pub dim: usize,
    pub layers: usize,
    /// Width of the free input embeddings.
    pub input_dim: usize,
    /// Width of the injected social matrix, `None` without social input.
    pub social_dim: Option<usize>,
}

impl RelationGnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "relation GNN needs at least one layer and positive widths".into(),
            ));
        }
        if self.social_dim.is_some() && !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding width d = {} must be even to split user input into d/2 ⊕ d/2",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Parameters of the interaction-side encoder.
#[derive(Clone, Debug)]
pub struct RelationGnn {
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub layers: Vec<GnnLayer>,
    /// `W_3`, present when `H*` is injected.
    pub social_w: Option<ParamId>,
    pub config: RelationGnnConfig,
}

/// Output of one propagation layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerEmbeddings {
    pub users: Var,
    pub subnodes: Var,
}

/// Layer-concatenated and pooled embeddings.
#[derive(Clone, Debug)]
pub struct FinalEmbeddings {
    pub layers: Vec<LayerEmbeddings>,
    /// `M x L·d`.
    pub users: Var,
    /// `NK x L·d`.
    pub subnodes: Var,
    /// `N x L·d`.
    pub items: Var,
}

impl RelationGnn {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        num_users: usize,
        num_subnodes: usize,
        config: RelationGnnConfig,
        rng: &mut rng::Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let user_emb = store.add(
            "gnn.x_u",
            xavier_uniform(num_users, config.input_dim, rng),
            true,
        );
        let item_emb = store.add(
            "gnn.x_v",
            xavier_uniform(num_subnodes, config.input_dim, rng),
            true,
        );
        let user_out = if config.social_dim.is_some() {
            d / 2
        } else {
            d
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (in_u, out_u, in_v) = if l == 0 {
                (config.input_dim, user_out, config.input_dim)
            } else {
                (d, d, d)
            };
            layers.push(GnnLayer {
                item_w: store.add(format!("gnn.w1.{l}"), xavier_uniform(in_v, d, rng), true),
                user_w: store.add(
                    format!("gnn.w2.{l}"),
                    xavier_uniform(in_u, out_u, rng),
                    true,
                ),
                slope: store.add(format!("gnn.slope.{l}"), Tensor::scalar(T::of(0.25)), false),
            });
        }
        let social_w = config
            .social_dim
            .map(|dh| store.add("gnn.w3", xavier_uniform(dh, d / 2, rng), true));
        Ok(Self {
            user_emb,
            item_emb,
            layers,
            social_w,
            config,
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.dim * self.config.layers
    }

    /// One propagation step. `prev` is `None` for layer 1, which reads the
    /// free embeddings and `H*`.
    pub fn propagate_layer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ops: &PropagationOps<T>,
        prev: Option<LayerEmbeddings>,
        h_star: Option<Var>,
        layer: usize,
    ) -> Result<LayerEmbeddings> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::Config(format!(
                "layer index {layer} outside 1..={}",
                self.layers.len()
            )));
        }
        let p = self.layers[layer - 1];
        let (user_msg, item_msg) = match prev {
            None => {
                let xu = tape.matmul(bound.var(self.user_emb), bound.var(p.user_w))?;
                let user_msg = match self.social_w {
                    Some(w3) => {
                        let h = h_star.ok_or_else(|| {
                            Error::Config("social matrix H* is required at layer 1".into())
                        })?;
                        let hw = tape.matmul(h, bound.var(w3))?;
                        tape.concat_cols(xu, hw)?
                    }
                    None => xu,
                };
                let item_msg = tape.matmul(bound.var(self.item_emb), bound.var(p.item_w))?;
                (user_msg, item_msg)
            }
            Some(prev) => (
                tape.matmul(prev.users, bound.var(p.user_w))?,
                tape.matmul(prev.subnodes, bound.var(p.item_w))?,
            ),
        };
        let u_self = tape.scale_rows(user_msg, &ops.user_self)?;
        let u_nbr = tape.spmm(&ops.user_from_subnodes, item_msg)?;
        let u_sum = tape.add(u_self, u_nbr)?;
        let v_self = tape.scale_rows(item_msg, &ops.subnode_self)?;
        let v_nbr = tape.spmm(&ops.subnodes_from_users, user_msg)?;
        let v_sum = tape.add(v_self, v_nbr)?;
        let slope = bound.var(p.slope);
        Ok(LayerEmbeddings {
            users: tape.prelu(u_sum, slope)?,
            subnodes: tape.prelu(v_sum, slope)?,
        })
    }

    /// All layers, concatenated, with items mean-pooled over sub-nodes.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ops: &PropagationOps<T>,
        h_star: Option<Var>,
    ) -> Result<FinalEmbeddings> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut prev = None;
        for l in 1..=self.layers.len() {
            let out = self.propagate_layer(tape, bound, ops, prev, h_star, l)?;
            layers.push(out);
            prev = Some(out);
        }
        let mut users = layers[0].users;
        let mut subnodes = layers[0].subnodes;
        for layer in &layers[1..] {
            users = tape.concat_cols(users, layer.users)?;
            subnodes = tape.concat_cols(subnodes, layer.subnodes)?;
        }
        let items = tape.spmm(&ops.pool, subnodes)?;
        Ok(FinalEmbeddings {
            layers,
            users,
            subnodes,
            items,
        })
    }
}

/// Row-wise concatenation of per-layer embeddings in layer order.
pub fn concat_layers<T: Scalar>(layers: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::dim("concat_layers", "no layers"))?;
    if layers.iter().any(|l| l.shape() != first.shape()) {
        return Err(Error::dim("concat_layers", "ragged layer shapes"));
    }
    let mut out = first.clone();
    for layer in &layers[1..] {
        out = out.concat_cols(layer)?;
    }
    Ok(out)
}

/// `E_v[n] = mean_k E_v_sub[n·K + k − 1]`.
pub fn pool_item_subnodes<T: Scalar>(
    subnodes: &Tensor<T>,
    num_items: usize,
    num_relations: usize,
) -> Result<Tensor<T>> {
    if subnodes.rows() != num_items * num_relations {
        return Err(Error::dim(
            "pool_item_subnodes",
            format!(
                "{} rows for {num_items}x{num_relations} sub-nodes",
                subnodes.rows()
            ),
        ));
    }
    let k = T::of_usize(num_relations);
    Ok(Tensor::from_fn(num_items, subnodes.cols(), |n, j| {
        (0..num_relations)
            .map(|r| subnodes[(n * num_relations + r, j)])
            .sum::<T>()
            / k
    }))
}
