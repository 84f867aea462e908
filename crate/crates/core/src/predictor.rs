//! Rating head and the pieces of the joint objective.

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{xavier_uniform, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// `r̂ = ReLU((E_u ⊕ E_v) V_3 + b_1) V_4 + b_2`.
#[derive(Clone, Copy, Debug)]
pub struct Predictor {
    pub hidden: ParamId,
    pub hidden_bias: ParamId,
    pub output: ParamId,
    pub output_bias: ParamId,
}

impl Predictor {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        embedding_width: usize,
        hidden: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        Self {
            hidden: store.add(
                "pred.v3",
                xavier_uniform(2 * embedding_width, hidden, rng),
                true,
            ),
            hidden_bias: store.add("pred.b1", Tensor::zeros(1, hidden), false),
            output: store.add("pred.v4", xavier_uniform(hidden, 1, rng), true),
            output_bias: store.add("pred.b2", Tensor::zeros(1, 1), false),
        }
    }

    /// Raw predictions for paired rows of `users` and `items`; `B x 1`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        users: Var,
        items: Var,
    ) -> Result<Var> {
        let pair = tape.concat_cols(users, items)?;
        let h = tape.matmul(pair, bound.var(self.hidden))?;
        let h = tape.add_row(h, bound.var(self.hidden_bias))?;
        let h = tape.relu(h);
        let out = tape.matmul(h, bound.var(self.output))?;
        tape.add_row(out, bound.var(self.output_bias))
    }

    /// Prediction for one concrete pair of embedding rows.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, user: &[T], item: &[T]) -> Result<T> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let u = tape.constant(Tensor::from_vec(1, user.len(), user.to_vec())?);
        let v = tape.constant(Tensor::from_vec(1, item.len(), item.to_vec())?);
        let out = self.forward(&mut tape, &bound, u, v)?;
        Ok(tape.value(out).item())
    }
}

/// Clamp applied to predictions before they are scored.
pub fn clamp_rating(x: f64, levels: usize) -> f64 {
    x.clamp(1.0, levels as f64)
}

/// `½ Σ_{mask} (r − r̂)²`.
pub fn prediction_loss<T: Scalar>(preds: &[T], truths: &[T], mask: &[bool]) -> Result<T> {
    if preds.len() != truths.len() || preds.len() != mask.len() {
        return Err(Error::dim(
            "prediction_loss",
            "preds, truths and mask differ in length",
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract("prediction loss over an empty mask".into()));
    }
    let sq: T = preds
        .iter()
        .zip(truths)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (t - p) * (t - p))
        .sum();
    Ok(sq / T::of(2.0))
}

/// `½ Σ (r − r̂)²` on the tape; `targets` is a `B x 1` constant.
pub fn prediction_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    preds: Var,
    targets: Var,
) -> Result<Var> {
    let diff = tape.sub(preds, targets)?;
    let sq = tape.sum_squares(diff);
    Ok(tape.scale(sq, T::of(0.5)))
}

/// `L = L_p + ω_1 L_r + ω_2 L_s + ω_r ‖Θ‖²_F`.
pub fn joint_loss<T: Scalar>(lp: T, lr: T, ls: T, theta_sq: T, weights: &LossWeights) -> T {
    lp + T::of(weights.interaction) * lr
        + T::of(weights.social) * ls
        + T::of(weights.reg) * theta_sq
}
