//! Pairwise reconstruction of user-item relation types and social links.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::UserSocialGraph;
use crate::rng;
use crate::scalar::{softplus, Scalar};
use crate::tensor::{xavier_uniform, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// One scoring head: `δ((a ⊕ b) V + bias) W`.
#[derive(Clone, Copy, Debug)]
pub struct PairScorer {
    pub transform: ParamId,
    pub bias: ParamId,
    pub project: ParamId,
    pub slope: ParamId,
}

impl PairScorer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        Self {
            transform: store.add(
                format!("{prefix}.transform"),
                xavier_uniform(2 * input_width, hidden, rng),
                true,
            ),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(1, hidden), false),
            project: store.add(
                format!("{prefix}.project"),
                xavier_uniform(hidden, 1, rng),
                true,
            ),
            slope: store.add(
                format!("{prefix}.slope"),
                Tensor::scalar(T::of(0.25)),
                false,
            ),
        }
    }

    /// Scores row `i` of `left` against row `i` of `right`; returns `B x 1`.
    pub fn score<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        left: Var,
        right: Var,
    ) -> Result<Var> {
        let pair = tape.concat_cols(left, right)?;
        let hidden = tape.matmul(pair, bound.var(self.transform))?;
        let hidden = tape.add_row(hidden, bound.var(self.bias))?;
        let hidden = tape.prelu(hidden, bound.var(self.slope))?;
        tape.matmul(hidden, bound.var(self.project))
    }

    /// Score of a single concrete pair of rows.
    pub fn score_rows<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        left: &[T],
        right: &[T],
    ) -> Result<T> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let l = tape.constant(Tensor::from_vec(1, left.len(), left.to_vec())?);
        let r = tape.constant(Tensor::from_vec(1, right.len(), right.to_vec())?);
        let s = self.score(&mut tape, &bound, l, r)?;
        Ok(tape.value(s).item())
    }
}

/// Interaction (`V_1`, `b_r`, `W_4`) and social (`V_2`, `b_s`, `W_5`) heads.
#[derive(Clone, Copy, Debug)]
pub struct Reconstruction {
    pub interaction: PairScorer,
    pub social: PairScorer,
}

impl Reconstruction {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        embedding_width: usize,
        hidden: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        Self {
            interaction: PairScorer::new(store, "recon.r", embedding_width, hidden, rng),
            social: PairScorer::new(store, "recon.s", embedding_width, hidden, rng),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 8] {
        let (r, s) = (self.interaction, self.social);
        [
            r.transform,
            r.bias,
            r.project,
            r.slope,
            s.transform,
            s.bias,
            s.project,
            s.slope,
        ]
    }
}

/// Negative samples for one batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletBatch {
    /// `(m, n, k⁺, k⁻)`.
    pub interactions: Vec<(usize, usize, usize, usize)>,
    /// `(m, m⁺, m⁻)`.
    pub social: Vec<(usize, usize, usize)>,
}

/// Uniform over `{1..K} \ {k}`.
pub fn sample_negative_relation<R: Rng + ?Sized>(
    num_relations: usize,
    relation: usize,
    rng: &mut R,
) -> Result<usize> {
    if num_relations < 2 {
        return Err(Error::Sampler(format!(
            "no negative relation exists with K = {num_relations}"
        )));
    }
    if relation == 0 || relation > num_relations {
        return Err(Error::Sampler(format!(
            "relation {relation} outside 1..={num_relations}"
        )));
    }
    let draw = rng.gen_range(1..num_relations);
    Ok(if draw >= relation { draw + 1 } else { draw })
}

/// Uniform over users that are neither `m` nor a neighbor of `m`.
pub fn sample_negative_social<R: Rng + ?Sized>(
    graph: &UserSocialGraph,
    m: usize,
    rng: &mut R,
) -> Result<usize> {
    let total = graph.num_users();
    let available = total.saturating_sub(1 + graph.degree(m));
    if available == 0 {
        return Err(Error::Sampler(format!(
            "user {m} is connected to every other user"
        )));
    }
    // Rejection is uniform over the complement; bail out to enumeration when
    // the complement is small.
    for _ in 0..32 {
        let c = rng.gen_range(0..total);
        if c != m && !graph.is_edge(m, c) {
            return Ok(c);
        }
    }
    let nbrs = graph.neighbors(m);
    let mut pick = rng.gen_range(0..available);
    let mut j = 0;
    for c in 0..total {
        if c == m {
            continue;
        }
        while j < nbrs.len() && nbrs[j] < c {
            j += 1;
        }
        if j < nbrs.len() && nbrs[j] == c {
            continue;
        }
        if pick == 0 {
            return Ok(c);
        }
        pick -= 1;
    }
    unreachable!("complement count and enumeration disagree")
}

/// `−(1/ψ) Σ ln σ(s⁺ − s⁻)` on the tape; `pos`/`neg` are `B x 1`.
pub fn bpr_on_tape<T: Scalar>(tape: &mut Tape<T>, pos: Var, neg: Var, psi: usize) -> Result<Var> {
    let diff = tape.sub(neg, pos)?;
    let terms = tape.softplus(diff);
    let total = tape.sum(terms);
    Ok(tape.scale(total, T::one() / T::of_usize(psi.max(1))))
}

/// `−(1/ψ) Σ ln σ(s⁺ − s⁻)` over concrete score pairs.
pub fn bpr_loss<T: Scalar>(pos: &[T], neg: &[T], psi: usize) -> Result<T> {
    if pos.len() != neg.len() {
        return Err(Error::dim(
            "bpr_loss",
            format!("{} positive vs {} negative scores", pos.len(), neg.len()),
        ));
    }
    if psi == 0 {
        return Err(Error::Contract("BPR normalizer ψ must be positive".into()));
    }
    let total: T = pos.iter().zip(neg).map(|(&p, &n)| softplus(n - p)).sum();
    Ok(total / T::of_usize(psi))
}

/// `(L_r, L_s)` from paired interaction and social scores.
pub fn bpr_reconstruction_losses<T: Scalar>(
    interaction: (&[T], &[T]),
    social: (&[T], &[T]),
    psi_r: usize,
    psi_s: usize,
) -> Result<(T, T)> {
    Ok((
        bpr_loss(interaction.0, interaction.1, psi_r)?,
        bpr_loss(social.0, social.1, psi_s)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::t1;
    use rand::SeedableRng;

    #[test]
    fn zero_projection_scores_zero() {
        let mut store = ParamStore::<f64>::new();
        let rec = Reconstruction::new(&mut store, 2, 3, &mut rng::stream(0, "r"));
        store.set("recon.r.project", Tensor::zeros(3, 1)).unwrap();
        let s = rec
            .interaction
            .score_rows(&store, &[0.3, -1.0], &[2.0, 0.5])
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn zero_embeddings_score_zero() {
        let mut store = ParamStore::<f64>::new();
        let rec = Reconstruction::new(&mut store, 2, 3, &mut rng::stream(0, "r"));
        let s = rec
            .interaction
            .score_rows(&store, &[0.0, 0.0], &[0.0, 0.0])
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn hand_evaluated_score() {
        // [1,0] ⊕ [0,1], selector of coordinates 1 and 4, slope 1, W = [1,1]ᵀ
        let mut store = ParamStore::<f64>::new();
        let rec = Reconstruction::new(&mut store, 2, 2, &mut rng::stream(0, "r"));
        let selector = Tensor::from_f64(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        store.set("recon.r.transform", selector).unwrap();
        store
            .set(
                "recon.r.project",
                Tensor::from_f64(2, 1, &[1.0, 1.0]).unwrap(),
            )
            .unwrap();
        store.set("recon.r.slope", Tensor::scalar(1.0)).unwrap();
        let s = rec
            .interaction
            .score_rows(&store, &[1.0, 0.0], &[0.0, 1.0])
            .unwrap();
        assert_eq!(s, 2.0);
    }

    #[test]
    fn relation_sampler() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_negative_relation(2, 1, &mut r).unwrap(), 2);
            assert_ne!(sample_negative_relation(5, 3, &mut r).unwrap(), 3);
        }
        assert!(matches!(
            sample_negative_relation(1, 1, &mut r),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn relation_sampler_is_uniform() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 6];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_negative_relation(5, 2, &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        for k in [1, 3, 4, 5] {
            let f = counts[k] as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.02, "k={k} freq={f}");
        }
    }

    #[test]
    fn social_sampler_on_t1() {
        let g = t1().social;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(sample_negative_social(&g, 0, &mut r).unwrap(), 2);
            for m in 0..3 {
                let c = sample_negative_social(&g, m, &mut r).unwrap();
                assert_ne!(c, m);
                assert!(!g.is_edge(m, c));
            }
        }
        let full = UserSocialGraph::build(&[(0, 1)], 2).unwrap();
        assert!(matches!(
            sample_negative_social(&full, 0, &mut r),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn social_sampler_star_with_isolated_users_is_uniform() {
        // star on 12 nodes (center 0) plus 10 isolated users → center's
        // negatives are exactly the 10 isolated users
        let edges: Vec<_> = (1..12).map(|i| (0, i)).collect();
        let g = UserSocialGraph::build(&edges, 22).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut counts = [0usize; 22];
        for _ in 0..draws {
            counts[sample_negative_social(&g, 0, &mut r).unwrap()] += 1;
        }
        assert!(counts[..12].iter().all(|&c| c == 0));
        for &c in &counts[12..] {
            let f = c as f64 / draws as f64;
            assert!((f - 0.1).abs() < 0.003, "{f}");
        }
    }

    #[test]
    fn bpr_examples() {
        let ln2 = std::f64::consts::LN_2;
        let tied = bpr_loss(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0], 3).unwrap();
        assert!((tied - ln2).abs() < 1e-12);
        assert!(bpr_loss(&[1e3], &[-1e3], 1).unwrap() < 1e-300);
        let one: f64 = bpr_loss(&[1.0], &[0.0], 1).unwrap();
        assert!((one - 0.313_261_687_518_222_8).abs() < 1e-12);
        let (lr, ls): (f64, f64) =
            bpr_reconstruction_losses((&[1.0], &[0.0]), (&[0.0, 0.0], &[0.0, 0.0]), 1, 2).unwrap();
        assert!((lr - one).abs() < 1e-15 && (ls - ln2).abs() < 1e-15);
    }
}
