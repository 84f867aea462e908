//! Central finite-difference check of tape gradients.

use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::config::Config;
use crate::data::RatingRecord;
use crate::error::Result;
use crate::fixtures::t1;
use crate::model::{Batch, GraphContext, SrHgnn};
use crate::recon::TripletBatch;
use crate::rng;
use crate::social::{corrupt, mi_loss_on_tape, SocialEncoder};
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

/// Finite-difference step used by the fixture checks.
pub const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

/// Worst entry of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_error < tolerance)
    }
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// vanishing gradients from amplifying rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `loss` with `(f(θ+h) − f(θ−h)) / 2h` for
/// every entry of every parameter in `store`.
pub fn check<F>(store: &ParamStore<f64>, step: f64, floor: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = loss(&mut tape, &bound)?;
    let grads = store.collect_grads(&tape.backward(out)?, &bound);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind_frozen(&mut tape);
        let out = loss(&mut tape, &bound)?;
        Ok(tape.value(out).item())
    };

    let mut probe = store.clone();
    let mut params = Vec::new();
    for (id, grad) in store.ids().zip(&grads) {
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            entries: grad.len(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
        };
        for e in 0..grad.len() {
            let orig = store.get(id).as_slice()[e];
            probe.get_mut(id).as_mut_slice()[e] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).as_mut_slice()[e] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).as_mut_slice()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.as_slice()[e];
            check.max_abs_error = check.max_abs_error.max((analytic - numeric).abs());
            check.max_rel_error = check
                .max_rel_error
                .max(relative_error(analytic, numeric, floor));
        }
        params.push(check);
    }
    Ok(GradCheckReport { step, params })
}

/// Overwrites every parameter with uniform draws in `[-1, 1]`; slopes land
/// in `[0.05, 0.5]`.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng::stream(seed, "gradcheck.params");
    for id in store.ids().collect::<Vec<_>>() {
        let slope = store.name(id).contains("slope");
        for v in store.get_mut(id).as_mut_slice() {
            *v = if slope {
                r.gen_range(0.05..0.5)
            } else {
                r.gen_range(-1.0..1.0)
            };
        }
    }
}

/// Gradient checks of the mutual-information loss and of the joint loss
/// on the three-user fixture, with random parameters.
pub fn check_fixture(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let t = t1();
    let adjacency = t.social.normalized::<f64>();
    let mut store = ParamStore::new();
    let encoder = SocialEncoder::new(
        &mut store,
        3,
        4,
        2,
        &mut rng::stream(seed, "gradcheck.social"),
    );
    randomize(&mut store, seed);
    let corruption = corrupt(3, seed)?;
    let mi = check(&store, STEP, FLOOR, |tape, bound| {
        mi_loss_on_tape(tape, bound, &encoder, &adjacency, &corruption)
    })?;

    let config = Config {
        dim: 4,
        layers: 2,
        social_dim: 4,
        rating_levels: 2,
        seed,
        w_interaction: 0.5,
        w_social: 0.5,
        w_reg: 0.1,
        ..Config::default()
    };
    let records: Vec<_> = t
        .ratings
        .iter()
        .map(|&(user, item, rating)| RatingRecord { user, item, rating })
        .collect();
    let ctx = GraphContext::new(&records, 3, 2, 2, t.social.clone())?;
    let mut r = rng::stream(seed, "gradcheck.h_star");
    let h = Tensor::from_fn(3, 4, |_, _| r.gen_range(-1.0..1.0));
    let mut model = SrHgnn::new(&config, 3, 2, Some(h))?;
    randomize(&mut model.store, seed);
    let batch = Batch {
        ratings: records,
        triplets: TripletBatch {
            interactions: vec![(0, 0, 1, 2), (1, 0, 2, 1), (1, 1, 1, 2)],
            social: vec![(0, 1, 2), (1, 0, 2)],
        },
    };
    let joint = check(&model.store, STEP, FLOOR, |tape, bound| {
        Ok(model.batch_loss(tape, bound, &ctx, &batch)?.total)
    })?;
    Ok(vec![
        ("mutual_information".into(), mi),
        ("joint".into(), joint),
    ])
}
