//! Mutual-information social encoder.
//!
//! Users are encoded by graph convolution over the self-looped, normalized
//! social adjacency. A degree-weighted readout summarizes the whole graph and
//! a bilinear discriminator learns to tell real (user, summary) pairs from
//! pairs whose input features were shuffled across users. The clean encoder
//! output after training is frozen as `H*`.

use std::sync::Arc;

use log::{debug, warn};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, UserSocialGraph};
use crate::rng;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{xavier_uniform, Bound, CsrMatrix, ParamId, ParamStore, Tape, Tensor, Var};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Which encoder produces the frozen user matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SocialEncoderKind {
    /// Mutual-information pretraining.
    Mi,
    /// The same graph convolution with its initial weights, no pretraining.
    Gcn,
    /// Attention encoder; not available in this build.
    Gat,
}

impl std::str::FromStr for SocialEncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi" => Ok(Self::Mi),
            "gcn" => Ok(Self::Gcn),
            "gat" => Ok(Self::Gat),
            other => Err(Error::Config(format!("unknown social encoder `{other}`"))),
        }
    }
}

impl std::fmt::Display for SocialEncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mi => "mi",
            Self::Gcn => "gcn",
            Self::Gat => "gat",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocialConfig {
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub kind: SocialEncoderKind,
}

impl Default for SocialConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 1,
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            kind: SocialEncoderKind::Mi,
        }
    }
}

impl SocialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers) {
            return Err(Error::Config(format!(
                "social encoder depth must be 1..=3, got {}",
                self.layers
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("social dimension must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(
                "social learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Input feature rows of the encoder.
#[derive(Clone, Debug)]
pub enum Features<T> {
    /// One-hot user identities; the first weight matrix is an embedding table.
    Identity,
    /// One-hot identities with rows reassigned: user `m` gets row `perm[m]`.
    Shuffled(Arc<Vec<usize>>),
    /// Arbitrary dense rows, one per user.
    Dense(Tensor<T>),
}

/// A shuffled assignment of feature rows to users.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionSample {
    pub permutation: Vec<usize>,
    pub seed: u64,
    /// False when the permutation cannot differ from the identity (`M = 1`).
    pub informative: bool,
}

impl CorruptionSample {
    pub fn apply<T: Scalar>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        features.gather_rows(&self.permutation)
    }
}

/// Uniform random permutation of `0..num_users` drawn from `seed`.
pub fn corrupt(num_users: usize, seed: u64) -> Result<CorruptionSample> {
    if num_users == 0 {
        return Err(Error::Contract("corruption needs at least one user".into()));
    }
    let mut permutation: Vec<usize> = (0..num_users).collect();
    permutation.shuffle(&mut rng::stream(seed, "corruption"));
    Ok(CorruptionSample {
        permutation,
        seed,
        informative: num_users > 1,
    })
}

/// Learnable parts of the social encoder and discriminator.
#[derive(Clone, Debug)]
pub struct SocialEncoder {
    layers: Vec<(ParamId, ParamId)>,
    discriminator: ParamId,
    input_dim: usize,
    dim: usize,
}

impl SocialEncoder {
    /// Registers the encoder in `store`. `input_dim` is the number of users
    /// for identity features.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        dim: usize,
        layers: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let rows = if l == 0 { input_dim } else { dim };
                let w = store.add(format!("social.w{l}"), xavier_uniform(rows, dim, rng), true);
                let a = store.add(
                    format!("social.slope{l}"),
                    Tensor::scalar(T::of(0.25)),
                    false,
                );
                (w, a)
            })
            .collect();
        let discriminator = store.add("social.disc", xavier_uniform(dim, dim, rng), true);
        Self {
            layers,
            discriminator,
            input_dim,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_params(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn discriminator(&self) -> ParamId {
        self.discriminator
    }

    /// Patch embeddings `H = δ(Ŝ · X · W)` applied layer by layer.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        adjacency: &NormalizedAdjacency<T>,
        features: &Features<T>,
    ) -> Result<Var> {
        let m = adjacency.num_nodes();
        let mut h: Option<Var> = None;
        for (l, &(w, slope)) in self.layers.iter().enumerate() {
            let wv = bound.var(w);
            let xw = match (l, features) {
                (0, Features::Identity) => {
                    if self.input_dim != m {
                        return Err(Error::dim(
                            "encode_patches",
                            format!("{m} users, embedding table for {}", self.input_dim),
                        ));
                    }
                    wv
                }
                (0, Features::Shuffled(perm)) => {
                    if perm.len() != m || self.input_dim != m {
                        return Err(Error::dim(
                            "encode_patches",
                            format!("{} shuffled rows for {m} users", perm.len()),
                        ));
                    }
                    tape.gather_rows(wv, perm)?
                }
                (0, Features::Dense(x)) => {
                    if x.rows() != m {
                        return Err(Error::dim(
                            "encode_patches",
                            format!("{} feature rows for {m} users", x.rows()),
                        ));
                    }
                    let xv = tape.constant(x.clone());
                    tape.matmul(xv, wv)?
                }
                (_, _) => tape.matmul(h.expect("previous layer"), wv)?,
            };
            let agg = tape.spmm(&adjacency.matrix, xw)?;
            h = Some(tape.prelu(agg, bound.var(slope))?);
        }
        h.ok_or_else(|| Error::Config("social encoder has no layers".into()))
    }

    /// Discriminator logits `H · W · rᵀ`, one per row of `h`.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: Var,
        summary: Var,
    ) -> Result<Var> {
        let hw = tape.matmul(h, bound.var(self.discriminator))?;
        tape.matmul_t(hw, summary)
    }
}

/// Degree-weighted readout `σ(Σ_m d̂_m H_m / Σ d̂)` as a `1 x d` row.
pub fn readout_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    adjacency: &NormalizedAdjacency<T>,
) -> Result<Var> {
    let total = adjacency.total_degree();
    if total == 0 {
        return Err(Error::Structure("readout over an empty graph".into()));
    }
    let weights: Vec<_> = adjacency
        .degrees
        .iter()
        .enumerate()
        .map(|(m, &d)| (0, m, T::of_usize(d)))
        .collect();
    let w = Arc::new(CsrMatrix::from_triplets(
        1,
        adjacency.num_nodes(),
        &weights,
    )?);
    let pooled = tape.spmm(&w, h)?;
    let mean = tape.scale(pooled, T::one() / T::of_usize(total));
    Ok(tape.sigmoid(mean))
}

/// Readout of a concrete patch matrix.
pub fn readout<T: Scalar>(h: &Tensor<T>, adjacency: &NormalizedAdjacency<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let r = readout_on_tape(&mut tape, hv, adjacency)?;
    Ok(tape.value(r).clone())
}

/// `σ(hᵀ · W · r)`.
pub fn discriminate<T: Scalar>(h: &[T], summary: &[T], weight: &Tensor<T>) -> Result<T> {
    if weight.rows() != h.len() || weight.cols() != summary.len() {
        return Err(Error::dim(
            "discriminate",
            format!("{} x {:?} x {}", h.len(), weight.shape(), summary.len()),
        ));
    }
    let mut z = T::zero();
    for (i, &hi) in h.iter().enumerate() {
        for (j, &rj) in summary.iter().enumerate() {
            z += hi * weight[(i, j)] * rj;
        }
    }
    Ok(sigmoid(z))
}

/// Binary cross-entropy over discriminator probabilities of real and
/// corrupted samples. Probabilities are clamped to `[ε, 1 − ε]`.
pub fn mi_loss<T: Scalar>(pos: &[T], neg: &[T]) -> Result<T> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract(
            "mutual-information loss needs positive and negative samples".into(),
        ));
    }
    let eps = T::of(PROB_EPS);
    let clamp = |p: T| {
        if p < eps || p > T::one() - eps {
            debug!("clamping discriminator probability {p}");
        }
        p.max(eps).min(T::one() - eps)
    };
    let pos_sum: T = pos.iter().map(|&p| clamp(p).ln()).sum();
    let neg_sum: T = neg.iter().map(|&p| (T::one() - clamp(p)).ln()).sum();
    Ok(-(pos_sum + neg_sum) / T::of_usize(pos.len() + neg.len()))
}

/// Records the mutual-information loss for one corruption on `tape`.
///
/// Uses the logit form `softplus(−z)` / `softplus(z)`, which equals the
/// cross-entropy of [`mi_loss`] without the clamp.
pub fn mi_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    encoder: &SocialEncoder,
    adjacency: &NormalizedAdjacency<T>,
    corruption: &CorruptionSample,
) -> Result<Var> {
    let h = encoder.encode(tape, bound, adjacency, &Features::Identity)?;
    let summary = readout_on_tape(tape, h, adjacency)?;
    let h_fake = encoder.encode(
        tape,
        bound,
        adjacency,
        &Features::Shuffled(Arc::new(corruption.permutation.clone())),
    )?;
    let pos = encoder.logits(tape, bound, h, summary)?;
    let neg = encoder.logits(tape, bound, h_fake, summary)?;
    let neg_pos = tape.scale(pos, -T::one());
    let lp = tape.softplus(neg_pos);
    let ln = tape.softplus(neg);
    let sp = tape.sum(lp);
    let sn = tape.sum(ln);
    let total = tape.add(sp, sn)?;
    let n = tape.shape(pos).0 + tape.shape(neg).0;
    Ok(tape.scale(total, T::one() / T::of_usize(n)))
}

/// Result of phase-1 training.
#[derive(Clone, Debug)]
pub struct Pretrained<T> {
    pub h_star: Tensor<T>,
    pub encoder: SocialEncoder,
    pub store: ParamStore<T>,
    /// Mean mutual-information loss per epoch.
    pub losses: Vec<f64>,
    pub epochs: usize,
}

impl<T: Scalar> Pretrained<T> {
    /// Discriminator accuracy on clean samples against `trials` corruptions
    /// drawn from a stream never used in training.
    pub fn discriminator_accuracy(
        &self,
        graph: &UserSocialGraph,
        trials: usize,
        seed: u64,
    ) -> Result<f64> {
        let adjacency = graph.normalized::<T>();
        let mut correct = 0usize;
        let mut total = 0usize;
        for t in 0..trials {
            let sample = corrupt(graph.num_users(), seed ^ 0x5eed_0000_0000 ^ t as u64)?;
            let mut tape = Tape::new();
            let bound = self.store.bind_frozen(&mut tape);
            let h = self
                .encoder
                .encode(&mut tape, &bound, &adjacency, &Features::Identity)?;
            let summary = readout_on_tape(&mut tape, h, &adjacency)?;
            let fake = self.encoder.encode(
                &mut tape,
                &bound,
                &adjacency,
                &Features::Shuffled(Arc::new(sample.permutation)),
            )?;
            let pos = self.encoder.logits(&mut tape, &bound, h, summary)?;
            let neg = self.encoder.logits(&mut tape, &bound, fake, summary)?;
            correct += tape
                .value(pos)
                .as_slice()
                .iter()
                .filter(|&&z| z > T::zero())
                .count();
            correct += tape
                .value(neg)
                .as_slice()
                .iter()
                .filter(|&&z| z < T::zero())
                .count();
            total += 2 * graph.num_users();
        }
        Ok(correct as f64 / total.max(1) as f64)
    }
}

/// Phase 1: trains the encoder for `config.epochs` full-batch Adam steps on
/// all real and corrupted users, then freezes the clean encoding as `H*`.
pub fn pretrain<T: Scalar>(
    graph: &UserSocialGraph,
    config: &SocialConfig,
) -> Result<Pretrained<T>> {
    config.validate()?;
    let m = graph.num_users();
    if m == 0 {
        return Err(Error::Structure("social graph has no users".into()));
    }
    let adjacency = graph.normalized::<T>();
    let mut init = rng::stream(config.seed, "social.init");
    let mut store = ParamStore::new();
    let encoder = SocialEncoder::new(&mut store, m, config.dim, config.layers, &mut init);

    let mut losses = Vec::new();
    let epochs = match config.kind {
        SocialEncoderKind::Mi => config.epochs,
        SocialEncoderKind::Gcn => 0,
        SocialEncoderKind::Gat => {
            return Err(Error::Config(
                "the attention social encoder is not available; use `mi` or `gcn`".into(),
            ))
        }
    };
    if m == 1 && epochs > 0 {
        warn!("single-user social graph: corrupted samples equal real ones");
    }
    let mut adam = store.adam();
    let lr = T::of(config.lr);
    for epoch in 0..epochs {
        let sample = corrupt(
            m,
            rng::derive_seed(config.seed, "social.epoch", epoch as u64),
        )?;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = mi_loss_on_tape(&mut tape, &bound, &encoder, &adjacency, &sample)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "mutual-information loss is {value} at epoch {}",
                epoch + 1
            )));
        }
        losses.push(value.as_f64());
        let grads = tape.backward(loss)?;
        let grads = store.collect_grads(&grads, &bound);
        store.apply_adam(&mut adam, &grads, lr);
        if (epoch + 1) % 50 == 0 {
            debug!("social epoch {}: L_mu = {value}", epoch + 1);
        }
    }

    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let h = encoder.encode(&mut tape, &bound, &adjacency, &Features::Identity)?;
    let h_star = tape.value(h).clone();
    h_star.ensure_finite("H*")?;
    Ok(Pretrained {
        h_star,
        encoder,
        store,
        losses,
        epochs,
    })
}
