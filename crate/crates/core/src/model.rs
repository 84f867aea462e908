//! The assembled recommender: relation GNN, reconstruction heads and rating
//! predictor over one parameter store.

use std::sync::Arc;

use crate::config::{Config, LossWeights};
use crate::data::RatingRecord;
use crate::error::{Error, Result};
use crate::graph::{Interaction, SubNodeGraph, UserSocialGraph};
use crate::predictor::{clamp_rating, prediction_loss_on_tape, Predictor};
use crate::recon::{bpr_on_tape, Reconstruction, TripletBatch};
use crate::relation::{FinalEmbeddings, PropagationOps, RelationGnn, RelationGnnConfig};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Training graph and the operators derived from it.
#[derive(Clone, Debug)]
pub struct GraphContext<T> {
    pub graph: SubNodeGraph,
    pub ops: PropagationOps<T>,
    pub social: UserSocialGraph,
    /// `ψ(A_r)`.
    pub psi_r: usize,
    /// `ψ(A_s)`, twice the undirected edge count.
    pub psi_s: usize,
}

impl<T: Scalar> GraphContext<T> {
    /// Builds the sub-node graph from training ratings. With one relation
    /// type every rating maps to relation 1.
    pub fn new(
        train: &[RatingRecord],
        num_users: usize,
        num_items: usize,
        relations: usize,
        social: UserSocialGraph,
    ) -> Result<Self> {
        if social.num_users() != num_users {
            return Err(Error::dim(
                "GraphContext::new",
                format!(
                    "{} social users vs {num_users} rating users",
                    social.num_users()
                ),
            ));
        }
        let interactions = train
            .iter()
            .map(|r| {
                let relation = if relations == 1 { 1 } else { r.rating as usize };
                Interaction {
                    user: r.user,
                    item: r.item,
                    relation,
                    rating: r.rating,
                }
            })
            .collect();
        let graph = SubNodeGraph::from_interactions(num_users, num_items, relations, interactions)?;
        let ops = PropagationOps::new(&graph);
        Ok(Self {
            psi_r: graph.interactions().len(),
            psi_s: 2 * social.num_edges(),
            graph,
            ops,
            social,
        })
    }
}

/// Ratings and reconstruction triplets scored in one optimizer step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batch {
    pub ratings: Vec<RatingRecord>,
    pub triplets: TripletBatch,
}

/// Tape handles of the loss components of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub prediction: Var,
    pub interaction: Option<Var>,
    pub social: Option<Var>,
    pub penalty: Var,
    pub total: Var,
    /// Raw predictions, `B x 1`.
    pub predictions: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub prediction: f64,
    pub interaction: f64,
    pub social: f64,
    pub penalty: f64,
    pub total: f64,
}

impl LossParts {
    pub fn read<T: Scalar>(tape: &Tape<T>, terms: &LossTerms) -> Self {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().as_f64());
        Self {
            prediction: get(Some(terms.prediction)),
            interaction: get(terms.interaction),
            social: get(terms.social),
            penalty: get(Some(terms.penalty)),
            total: get(Some(terms.total)),
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.prediction += other.prediction;
        self.interaction += other.interaction;
        self.social += other.social;
        self.penalty += other.penalty;
        self.total += other.total;
    }
}

/// Trainable model plus the frozen social matrix it consumes.
#[derive(Clone, Debug)]
pub struct SrHgnn<T> {
    pub config: Config,
    pub store: ParamStore<T>,
    pub gnn: RelationGnn,
    pub recon: Reconstruction,
    pub predictor: Predictor,
    pub h_star: Option<Tensor<T>>,
    pub num_users: usize,
    pub num_items: usize,
}

fn index(v: impl IntoIterator<Item = usize>) -> Arc<Vec<usize>> {
    Arc::new(v.into_iter().collect())
}

impl<T: Scalar> SrHgnn<T> {
    /// Initializes all phase-2 parameters from the `model.init` stream.
    pub fn new(
        config: &Config,
        num_users: usize,
        num_items: usize,
        h_star: Option<Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let h_star = if config.uses_social() {
            let h =
                h_star.ok_or_else(|| Error::Config("the social matrix H* is required".into()))?;
            if h.rows() != num_users {
                return Err(Error::dim(
                    "SrHgnn::new",
                    format!("H* has {} rows for {num_users} users", h.rows()),
                ));
            }
            Some(h)
        } else {
            None
        };
        let mut init = rng::stream(config.seed, "model.init");
        let mut store = ParamStore::new();
        let relations = config.graph_relations();
        let gnn = RelationGnn::new(
            &mut store,
            num_users,
            num_items * relations,
            RelationGnnConfig {
                dim: config.dim,
                layers: config.layers,
                input_dim: config.input_dim(),
                social_dim: h_star.as_ref().map(Tensor::cols),
            },
            &mut init,
        )?;
        let width = gnn.output_width();
        let recon = Reconstruction::new(&mut store, width, config.recon_hidden(), &mut init);
        let predictor = Predictor::new(&mut store, width, config.dim, &mut init);
        Ok(Self {
            config: config.clone(),
            store,
            gnn,
            recon,
            predictor,
            h_star,
            num_users,
            num_items,
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.config.loss_weights()
    }

    /// Reconstruction heads switched off by the loss weights; they stay out
    /// of the penalty so they receive no gradient at all.
    pub fn inactive_params(&self) -> Vec<ParamId> {
        let w = self.loss_weights();
        let mut out = Vec::new();
        if w.interaction == 0.0 {
            let r = self.recon.interaction;
            out.extend([r.transform, r.bias, r.project, r.slope]);
        }
        if w.social == 0.0 {
            let s = self.recon.social;
            out.extend([s.transform, s.bias, s.project, s.slope]);
        }
        out
    }

    /// Full-graph forward pass.
    pub fn embed(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ctx: &GraphContext<T>,
    ) -> Result<FinalEmbeddings> {
        let h = self.h_star.as_ref().map(|h| tape.constant(h.clone()));
        self.gnn.forward(tape, bound, &ctx.ops, h)
    }

    /// Raw predictions for `(user, item)` pairs from final embeddings.
    pub fn predict_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        emb: &FinalEmbeddings,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let users = tape.gather_rows(emb.users, &index(pairs.iter().map(|p| p.0)))?;
        let items = tape.gather_rows(emb.items, &index(pairs.iter().map(|p| p.1)))?;
        self.predictor.forward(tape, bound, users, items)
    }

    /// Joint loss of one batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ctx: &GraphContext<T>,
        batch: &Batch,
    ) -> Result<LossTerms> {
        if batch.ratings.is_empty() {
            return Err(Error::Contract(
                "prediction loss over an empty batch".into(),
            ));
        }
        let weights = self.loss_weights();
        let emb = self.embed(tape, bound, ctx)?;
        let pairs: Vec<_> = batch.ratings.iter().map(|r| (r.user, r.item)).collect();
        let predictions = self.predict_on_tape(tape, bound, &emb, &pairs)?;
        let targets = tape.constant(Tensor::from_fn(pairs.len(), 1, |i, _| {
            T::of(batch.ratings[i].rating as f64)
        }));
        let prediction = prediction_loss_on_tape(tape, predictions, targets)?;
        let mut total = prediction;

        let mut interaction = None;
        if weights.interaction != 0.0 && !batch.triplets.interactions.is_empty() {
            let k = ctx.graph.num_relations();
            let t = &batch.triplets.interactions;
            let users = tape.gather_rows(emb.users, &index(t.iter().map(|x| x.0)))?;
            let pos =
                tape.gather_rows(emb.subnodes, &index(t.iter().map(|x| x.1 * k + x.2 - 1)))?;
            let neg =
                tape.gather_rows(emb.subnodes, &index(t.iter().map(|x| x.1 * k + x.3 - 1)))?;
            let sp = self.recon.interaction.score(tape, bound, users, pos)?;
            let sn = self.recon.interaction.score(tape, bound, users, neg)?;
            let l = bpr_on_tape(tape, sp, sn, ctx.psi_r)?;
            let weighted = tape.scale(l, T::of(weights.interaction));
            total = tape.add(total, weighted)?;
            interaction = Some(l);
        }

        let mut social = None;
        if weights.social != 0.0 && !batch.triplets.social.is_empty() {
            let t = &batch.triplets.social;
            let anchor = tape.gather_rows(emb.users, &index(t.iter().map(|x| x.0)))?;
            let pos = tape.gather_rows(emb.users, &index(t.iter().map(|x| x.1)))?;
            let neg = tape.gather_rows(emb.users, &index(t.iter().map(|x| x.2)))?;
            let sp = self.recon.social.score(tape, bound, anchor, pos)?;
            let sn = self.recon.social.score(tape, bound, anchor, neg)?;
            let l = bpr_on_tape(tape, sp, sn, ctx.psi_s)?;
            let weighted = tape.scale(l, T::of(weights.social));
            total = tape.add(total, weighted)?;
            social = Some(l);
        }

        let penalty = self
            .store
            .frobenius_penalty_except(tape, bound, &self.inactive_params())?;
        if weights.reg != 0.0 {
            let weighted = tape.scale(penalty, T::of(weights.reg));
            total = tape.add(total, weighted)?;
        }
        Ok(LossTerms {
            prediction,
            interaction,
            social,
            penalty,
            total,
            predictions,
        })
    }

    /// Final user and pooled item embeddings with parameters frozen.
    pub fn embeddings(&self, ctx: &GraphContext<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let emb = self.embed(&mut tape, &bound, ctx)?;
        Ok((tape.value(emb.users).clone(), tape.value(emb.items).clone()))
    }

    /// Raw predictions from precomputed embeddings.
    pub fn predict_from(
        &self,
        users: &Tensor<T>,
        items: &Tensor<T>,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        if let Some(&(u, i)) = pairs
            .iter()
            .find(|&&(u, i)| u >= users.rows() || i >= items.rows())
        {
            return Err(Error::OutOfRange(u, i, users.rows().max(items.rows())));
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let u = tape.constant(users.gather_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?);
        let v = tape.constant(items.gather_rows(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?);
        let out = self.predictor.forward(&mut tape, &bound, u, v)?;
        Ok(tape
            .value(out)
            .as_slice()
            .iter()
            .map(|x| x.as_f64())
            .collect())
    }

    /// Predictions clamped to the rating range, as fed to the metrics.
    pub fn predict(&self, ctx: &GraphContext<T>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let (users, items) = self.embeddings(ctx)?;
        let levels = self.config.rating_levels;
        Ok(self
            .predict_from(&users, &items, pairs)?
            .into_iter()
            .map(|x| clamp_rating(x, levels))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::fixtures::t1;

    fn t1_setup(ablate: Ablation) -> (SrHgnn<f64>, GraphContext<f64>, Batch) {
        let t = t1();
        let mut config = Config {
            dim: 4,
            layers: 2,
            social_dim: 4,
            rating_levels: 2,
            ablate,
            ..Config::default()
        };
        config.seed = 3;
        let records: Vec<_> = t
            .ratings
            .iter()
            .map(|&(user, item, rating)| RatingRecord { user, item, rating })
            .collect();
        let ctx = GraphContext::new(&records, 3, 2, config.graph_relations(), t.social).unwrap();
        let h = config
            .uses_social()
            .then(|| Tensor::from_fn(3, 4, |i, j| 0.1 * (i + j) as f64));
        let model = SrHgnn::new(&config, 3, 2, h).unwrap();
        let triplets = TripletBatch {
            interactions: if config.graph_relations() > 1 {
                vec![(0, 0, 1, 2), (1, 0, 2, 1)]
            } else {
                vec![]
            },
            social: vec![(0, 1, 2), (1, 0, 2)],
        };
        (
            model,
            ctx,
            Batch {
                ratings: records,
                triplets,
            },
        )
    }

    #[test]
    fn loss_components_recombine() {
        let (model, ctx, batch) = t1_setup(Ablation::None);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let terms = model.batch_loss(&mut tape, &bound, &ctx, &batch).unwrap();
        let p = LossParts::read(&tape, &terms);
        let w = model.loss_weights();
        let expect =
            crate::predictor::joint_loss(p.prediction, p.interaction, p.social, p.penalty, &w);
        assert!((p.total - expect).abs() < 1e-12);
        assert!(p.interaction > 0.0 && p.social > 0.0);
    }

    #[test]
    fn disabled_heads_get_zero_gradient() {
        let (model, ctx, batch) = t1_setup(Ablation::NoReconstruction);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let terms = model.batch_loss(&mut tape, &bound, &ctx, &batch).unwrap();
        let grads = tape.backward(terms.total).unwrap();
        let grads = model.store.collect_grads(&grads, &bound);
        for id in model.recon.param_ids() {
            assert!(grads[model.store.ids().position(|x| x == id).unwrap()]
                .as_slice()
                .iter()
                .all(|&g| g == 0.0));
        }
        let w1 = model.store.find("gnn.w1.0").unwrap();
        assert!(grads[model.store.ids().position(|x| x == w1).unwrap()].sum_squares() > 0.0);
    }

    #[test]
    fn social_variant_requires_h_star() {
        let config = Config {
            dim: 4,
            ..Config::default()
        };
        assert!(matches!(
            SrHgnn::<f64>::new(&config, 3, 2, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn predictions_are_clamped() {
        let (mut model, ctx, _) = t1_setup(Ablation::NoSocial);
        model.store.set("pred.v4", Tensor::zeros(4, 1)).unwrap();
        model.store.set("pred.b2", Tensor::scalar(9.0)).unwrap();
        assert_eq!(
            model.predict(&ctx, &[(0, 0), (2, 1)]).unwrap(),
            vec![2.0, 2.0]
        );
        model.store.set("pred.b2", Tensor::scalar(-9.0)).unwrap();
        assert_eq!(model.predict(&ctx, &[(0, 0)]).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_type_graph_has_one_relation() {
        let (model, ctx, _) = t1_setup(Ablation::SingleType);
        assert_eq!(ctx.graph.num_relations(), 1);
        assert_eq!(model.loss_weights().interaction, 0.0);
    }
}
