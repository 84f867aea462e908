//! Two-phase training: social pretraining, then joint-loss descent with
//! Adam, mini-batches and early stopping on validation RMSE.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{RatingRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{metrics, Metrics};
use crate::graph::UserSocialGraph;
use crate::model::{Batch, GraphContext, LossParts, SrHgnn};
use crate::recon::{sample_negative_relation, sample_negative_social, TripletBatch};
use crate::rng;
use crate::scalar::Scalar;
use crate::social::{pretrain, Pretrained};
use crate::tensor::{ParamStore, Tape, Tensor};

/// Ratings split plus the trust graph over the same user indices.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub split: Split,
    pub social: UserSocialGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub prediction_loss: f64,
    pub interaction_loss: f64,
    pub social_loss: f64,
    pub penalty: f64,
    pub total_loss: f64,
    /// Clamped predictions made during the epoch, each before its batch update.
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
}

/// Training history. Wall-clock times are kept out of the serialized form
/// so that equal seeds give byte-equal reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub social_epochs: usize,
    pub social_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub best_val: Option<Metrics>,
    pub status: StopReason,
    #[serde(skip)]
    pub social_seconds: f64,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

/// Outcome of [`EarlyStopper::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stalled: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stalled: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> Progress {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.stalled = 0;
            return Progress::Improved;
        }
        self.stalled += 1;
        if self.patience > 0 && self.stalled >= self.patience {
            Progress::Stop
        } else {
            Progress::Stalled
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub model: SrHgnn<T>,
    pub context: GraphContext<T>,
    pub report: TrainReport,
}

/// Phase 1, or `None` when the social matrix is ablated away.
pub fn phase_one<T: Scalar>(
    config: &Config,
    social: &UserSocialGraph,
) -> Result<Option<Pretrained<T>>> {
    if !config.uses_social() {
        return Ok(None);
    }
    let pre = pretrain(social, &config.social_config())?;
    info!(
        "social pretraining: {} epochs, final L_mu = {}",
        pre.epochs,
        pre.losses.last().map_or(f64::NAN, |l| *l)
    );
    Ok(Some(pre))
}

/// Both phases.
pub fn train<T: Scalar>(config: &Config, data: &Dataset) -> Result<Trained<T>> {
    let start = Instant::now();
    let pre = phase_one::<T>(config, &data.social)?;
    let social_seconds = start.elapsed().as_secs_f64();
    let (h_star, losses) = match pre {
        Some(p) => (Some(p.h_star), p.losses),
        None => (None, Vec::new()),
    };
    let mut trained = train_with_social(config, data, h_star)?;
    trained.report.social_epochs = losses.len();
    trained.report.social_losses = losses;
    trained.report.social_seconds = social_seconds;
    Ok(trained)
}

/// Directed positive social pairs `(m, m⁺)` whose anchor has a negative.
pub fn social_positives(graph: &UserSocialGraph) -> Vec<(usize, usize)> {
    let m = graph.num_users();
    let mut out = Vec::new();
    for a in 0..m {
        if graph.degree(a) + 1 >= m {
            continue;
        }
        out.extend(graph.neighbors(a).iter().map(|&b| (a, b)));
    }
    out
}

/// Splits one epoch into batches: shuffled ratings, social positives spread
/// over the same number of chunks, `negatives` draws per positive.
pub fn epoch_batches<T: Scalar>(
    config: &Config,
    ctx: &GraphContext<T>,
    train: &[RatingRecord],
    social_pos: &[(usize, usize)],
    epoch: usize,
) -> Result<Vec<Batch>> {
    let mut order = train.to_vec();
    let mut shuffle = rng::substream(config.seed, "train.shuffle", epoch as u64);
    order.shuffle(&mut shuffle);
    let mut social = social_pos.to_vec();
    social.shuffle(&mut shuffle);
    let per_batch = if config.full_batch {
        order.len().max(1)
    } else {
        config.batch_size
    };
    let count = order.len().div_ceil(per_batch).max(1);
    let weights = config.loss_weights();
    let k = ctx.graph.num_relations();
    let mut neg = rng::substream(config.seed, "train.negatives", epoch as u64);
    let mut batches = Vec::with_capacity(count);
    for (b, chunk) in order.chunks(per_batch).enumerate() {
        let mut triplets = TripletBatch::default();
        if weights.interaction != 0.0 && k >= 2 {
            for r in chunk {
                let kpos = r.rating as usize;
                for _ in 0..config.negatives {
                    let kneg = sample_negative_relation(k, kpos, &mut neg)?;
                    triplets.interactions.push((r.user, r.item, kpos, kneg));
                }
            }
        }
        if weights.social != 0.0 {
            let lo = b * social.len() / count;
            let hi = (b + 1) * social.len() / count;
            for &(a, p) in &social[lo..hi] {
                for _ in 0..config.negatives {
                    let n = sample_negative_social(&ctx.social, a, &mut neg)?;
                    triplets.social.push((a, p, n));
                }
            }
        }
        batches.push(Batch {
            ratings: chunk.to_vec(),
            triplets,
        });
    }
    Ok(batches)
}

fn pairs(records: &[RatingRecord]) -> Vec<(usize, usize)> {
    records.iter().map(|r| (r.user, r.item)).collect()
}

fn truths(records: &[RatingRecord]) -> Vec<f64> {
    records.iter().map(|r| r.rating as f64).collect()
}

/// Clamped predictions of `model` scored against `records`.
pub fn evaluate<T: Scalar>(
    model: &SrHgnn<T>,
    ctx: &GraphContext<T>,
    records: &[RatingRecord],
) -> Result<Metrics> {
    let preds = model.predict(ctx, &pairs(records))?;
    metrics(&preds, &truths(records))
}

/// Phase 2 with a given (or absent) social matrix.
pub fn train_with_social<T: Scalar>(
    config: &Config,
    data: &Dataset,
    h_star: Option<Tensor<T>>,
) -> Result<Trained<T>> {
    config.validate()?;
    if data.split.validation.is_empty() {
        return Err(Error::Config("the validation split is empty".into()));
    }
    if data.split.train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let ctx = GraphContext::new(
        &data.split.train,
        data.num_users,
        data.num_items,
        config.graph_relations(),
        data.social.clone(),
    )?;
    let mut model = SrHgnn::new(config, data.num_users, data.num_items, h_star)?;
    // Start the output bias at the mean training rating so early steps do
    // not have to shift every hidden unit to reach the rating scale.
    let mean = data
        .split
        .train
        .iter()
        .map(|r| r.rating as f64)
        .sum::<f64>()
        / data.split.train.len() as f64;
    *model.store.get_mut(model.predictor.output_bias) = Tensor::scalar(T::of(mean));
    let social_pos = social_positives(&data.social);
    let mut adam = model.store.adam();
    let lr = T::of(config.lr);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best: Option<(ParamStore<T>, Metrics)> = None;
    let mut report = TrainReport {
        social_epochs: 0,
        social_losses: Vec::new(),
        epochs: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
        best_val: None,
        status: StopReason::Completed,
        social_seconds: 0.0,
        epoch_seconds: Vec::new(),
    };

    let (val_pairs, val_truths) = (
        pairs(&data.split.validation),
        truths(&data.split.validation),
    );
    let levels = config.rating_levels;
    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        let epoch_start = model.store.clone();
        let mut parts = LossParts::default();
        let mut batch_preds = Vec::with_capacity(data.split.train.len());
        let mut batch_truths = Vec::with_capacity(data.split.train.len());
        for batch in epoch_batches(config, &ctx, &data.split.train, &social_pos, epoch)? {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let terms = model.batch_loss(&mut tape, &bound, &ctx, &batch)?;
            let step = LossParts::read(&tape, &terms);
            if !step.total.is_finite() {
                warn!(
                    "joint loss is {} in epoch {epoch}; restoring the last good parameters",
                    step.total
                );
                model.store = best.as_ref().map_or(epoch_start, |b| b.0.clone());
                report.status = StopReason::Diverged;
                report.stopping_epoch = epoch;
                break 'epochs;
            }
            parts.add(&step);
            batch_preds.extend(
                tape.value(terms.predictions)
                    .as_slice()
                    .iter()
                    .map(|x| crate::predictor::clamp_rating(x.as_f64(), levels)),
            );
            batch_truths.extend(batch.ratings.iter().map(|r| r.rating as f64));
            let grads = tape.backward(terms.total)?;
            let grads = model.store.collect_grads(&grads, &bound);
            model.store.apply_adam(&mut adam, &grads, lr);
        }

        let (users, items) = model.embeddings(&ctx)?;
        let clamp = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .map(|x| crate::predictor::clamp_rating(x, levels))
                .collect()
        };
        let train_m = metrics(&batch_preds, &batch_truths)?;
        let val_m = metrics(
            &clamp(model.predict_from(&users, &items, &val_pairs)?),
            &val_truths,
        )?;
        report.epochs.push(EpochRecord {
            epoch,
            prediction_loss: parts.prediction,
            interaction_loss: parts.interaction,
            social_loss: parts.social,
            penalty: parts.penalty,
            total_loss: parts.total,
            train_rmse: train_m.rmse,
            val_rmse: val_m.rmse,
            val_mae: val_m.mae,
        });
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        report.stopping_epoch = epoch;
        info!(
            "epoch {epoch}: L = {:.6} train rmse = {:.4} val rmse = {:.4} mae = {:.4}",
            parts.total, train_m.rmse, val_m.rmse, val_m.mae
        );
        match stopper.update(epoch, val_m.rmse) {
            Progress::Improved => best = Some((model.store.clone(), val_m)),
            Progress::Stalled => {}
            Progress::Stop => {
                report.status = StopReason::EarlyStopped;
                break;
            }
        }
    }

    if let Some((store, val)) = best {
        model.store = store;
        report.best_val = Some(val);
        report.best_epoch = stopper.best_epoch();
    }
    Ok(Trained {
        model,
        context: ctx,
        report,
    })
}

/// Root-mean-square error of predicting the training mean everywhere.
pub fn global_mean_baseline(train: &[RatingRecord], test: &[RatingRecord]) -> Result<Metrics> {
    if train.is_empty() {
        return Err(Error::Data("baseline over an empty training set".into()));
    }
    let mean = train.iter().map(|r| r.rating as f64).sum::<f64>() / train.len() as f64;
    metrics(&vec![mean; test.len()], &truths(test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, SplitSpec};
    use crate::fixtures::{planted, PlantedSpec};

    fn small_dataset(seed: u64) -> Dataset {
        let p = planted(&PlantedSpec {
            num_users: 30,
            num_items: 40,
            num_interactions: 400,
            seed,
            ..PlantedSpec::default()
        })
        .unwrap();
        Dataset {
            num_users: p.num_users,
            num_items: p.num_items,
            split: split(
                &p.records,
                SplitSpec {
                    x_percent: 80.0,
                    seed,
                },
            )
            .unwrap(),
            social: p.social,
        }
    }

    fn small_config() -> Config {
        Config {
            dim: 8,
            social_dim: 8,
            social_epochs: 5,
            epochs: 6,
            batch_size: 128,
            lr: 0.01,
            ..Config::default()
        }
    }

    #[test]
    fn stopper_stops_after_patience() {
        let mut s = EarlyStopper::new(3);
        let curve = [1.0, 0.9, 0.8, 0.8, 0.85, 0.81, 0.7];
        let got: Vec<_> = curve[..6]
            .iter()
            .enumerate()
            .map(|(i, &v)| s.update(i + 1, v))
            .collect();
        assert_eq!(got[..3], [Progress::Improved; 3]);
        assert_eq!(got[5], Progress::Stop);
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn plateau_stops_within_patience() {
        let mut s = EarlyStopper::new(10);
        let mut stop = None;
        for e in 1..100 {
            let v = if e <= 20 { 1.0 / e as f64 } else { 0.05 };
            if s.update(e, v) == Progress::Stop {
                stop = Some(e);
                break;
            }
        }
        assert!(stop.unwrap() <= 30);
    }

    #[test]
    fn batches_cover_training_set() {
        let data = small_dataset(1);
        let config = small_config();
        let ctx: GraphContext<f64> =
            GraphContext::new(&data.split.train, 30, 40, 5, data.social.clone()).unwrap();
        let pos = social_positives(&data.social);
        let batches = epoch_batches(&config, &ctx, &data.split.train, &pos, 1).unwrap();
        assert_eq!(batches.len(), data.split.train.len().div_ceil(128));
        let mut seen: Vec<_> = batches.iter().flat_map(|b| b.ratings.clone()).collect();
        let mut all = data.split.train.clone();
        seen.sort_by_key(|r| (r.user, r.item));
        all.sort_by_key(|r| (r.user, r.item));
        assert_eq!(seen, all);
        let social: usize = batches.iter().map(|b| b.triplets.social.len()).sum();
        assert_eq!(social, pos.len());
        for b in &batches {
            for &(m, n, kp, kn) in &b.triplets.interactions {
                assert!(ctx.graph.has_edge(m, n, kp) && kp != kn);
            }
            for &(a, p, n) in &b.triplets.social {
                assert!(data.social.is_edge(a, p) && !data.social.is_edge(a, n) && a != n);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_dataset(2);
        let a = train::<f64>(&small_config(), &data).unwrap();
        let b = train::<f64>(&small_config(), &data).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.model.store.values(), b.model.store.values());
        assert_eq!(a.report.epochs.len(), 6);
        assert_eq!(a.report.social_epochs, 5);
    }

    #[test]
    fn empty_validation_is_config_error() {
        let mut data = small_dataset(3);
        data.split.validation.clear();
        assert!(matches!(
            train_with_social::<f64>(
                &Config {
                    ablate: crate::config::Ablation::NoSocial,
                    ..small_config()
                },
                &data,
                None
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_restores_parameters() {
        let data = small_dataset(4);
        let config = Config {
            lr: 1e300,
            ablate: crate::config::Ablation::NoSocial,
            ..small_config()
        };
        let out = train_with_social::<f64>(&config, &data, None).unwrap();
        assert_eq!(out.report.status, StopReason::Diverged);
        assert!(out.model.store.values().iter().all(|t| t.is_finite()));
    }

    #[test]
    fn one_small_step_decreases_loss_on_t1() {
        let t = crate::fixtures::t1();
        let records: Vec<_> = t
            .ratings
            .iter()
            .map(|&(user, item, rating)| RatingRecord { user, item, rating })
            .collect();
        let config = Config {
            dim: 4,
            social_dim: 4,
            rating_levels: 2,
            seed: 5,
            ..Config::default()
        };
        let ctx: GraphContext<f64> =
            GraphContext::new(&records, 3, 2, 2, t.social.clone()).unwrap();
        let h = Tensor::from_fn(3, 4, |i, j| ((i * 4 + j) as f64).sin());
        let mut model = SrHgnn::new(&config, 3, 2, Some(h)).unwrap();
        let batch = Batch {
            ratings: records,
            triplets: TripletBatch {
                interactions: vec![(0, 0, 1, 2), (1, 0, 2, 1), (1, 1, 1, 2)],
                social: vec![(0, 1, 2), (1, 0, 2)],
            },
        };
        let loss = |model: &SrHgnn<f64>| {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let terms = model.batch_loss(&mut tape, &bound, &ctx, &batch).unwrap();
            let v = tape.value(terms.total).item();
            (
                v,
                model
                    .store
                    .collect_grads(&tape.backward(terms.total).unwrap(), &bound),
            )
        };
        let (before, grads) = loss(&model);
        let ids: Vec<_> = model.store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            model.store.get_mut(id).add_assign(&g.scale(-1e-4));
        }
        let (after, _) = loss(&model);
        assert!(after < before, "{after} !< {before}");
    }
}
