//! Dense reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashSet;

use srhgnn::graph::{decompose_interactions, normalize, UserSocialGraph};
use srhgnn::relation::{PropagationOps, RelationGnn, RelationGnnConfig};
use srhgnn::rng;
use srhgnn::social::{Features, SocialEncoder};
use srhgnn::tensor::{ParamStore, Tape, Tensor};

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(t: &Tensor<f64>) -> Dense {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols)
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn scale_rows(a: &Dense, s: &[f64]) -> Dense {
    a.iter()
        .zip(s)
        .map(|(r, &f)| r.iter().map(|x| x * f).collect())
        .collect()
}

pub fn hcat(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect()
}

pub fn prelu(a: &Dense, slope: f64) -> Dense {
    a.iter()
        .map(|r| {
            r.iter()
                .map(|&x| if x > 0.0 { x } else { slope * x })
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// `D̂^{-1/2}(A + I)D̂^{-1/2}` built entry by entry.
pub fn dense_normalized(edges: &[(usize, usize)], m: usize) -> Dense {
    let mut a = vec![vec![0.0; m]; m];
    for &(x, y) in edges {
        a[x][y] = 1.0;
        a[y][x] = 1.0;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..m)
        .map(|i| (0..m).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

/// Random simple undirected edge list on `m` nodes.
pub fn random_edges(m: usize, density: f64, rng: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if rng.gen_bool(density) {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Random ratings with distinct `(user, item)` pairs.
pub fn random_ratings(
    m: usize,
    n: usize,
    k: usize,
    density: f64,
    rng: &mut impl rand::Rng,
) -> Vec<(usize, usize, u32)> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for u in 0..m {
        for i in 0..n {
            if rng.gen_bool(density) && seen.insert((u, i)) {
                out.push((u, i, rng.gen_range(1..=k as u32)));
            }
        }
    }
    out
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Dense {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn tensor(d: &Dense) -> Tensor<f64> {
    Tensor::from_rows(d).expect("rectangular")
}

/// Replaces every parameter with uniform values in `[-1, 1]` (slopes in
/// `[0.05, 0.5]`).
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut impl rand::Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let slope = store.name(id).contains("slope");
        for x in store.get_mut(id).as_mut_slice() {
            *x = if slope {
                rng.gen_range(0.05..0.5)
            } else {
                rng.gen_range(-1.0..1.0)
            };
        }
    }
}

/// Max abs difference between the sparse relation GNN forward and a dense
/// `(M + NK)`-style oracle for one random configuration.
pub fn relation_forward_gap(
    m: usize,
    n: usize,
    k: usize,
    ratings: &[(usize, usize, u32)],
    seed: u64,
    social: bool,
) -> f64 {
    let graph = decompose_interactions(ratings, m, n, k).expect("valid ratings");
    let ops = PropagationOps::<f64>::new(&graph);
    let mut r = rng::stream(seed, "oracle");
    let (dim, input_dim, social_dim, layers) = (4, 3, 5, 2);
    let mut store = ParamStore::new();
    let gnn = RelationGnn::new(
        &mut store,
        m,
        n * k,
        RelationGnnConfig {
            dim,
            layers,
            input_dim,
            social_dim: social.then_some(social_dim),
        },
        &mut r,
    )
    .expect("valid config");
    randomize(&mut store, &mut r);
    let h_star = random_dense(m, social_dim, &mut r);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = social.then(|| tape.constant(tensor(&h_star)));
    let out = gnn.forward(&mut tape, &bound, &ops, h).expect("forward");

    // Dense oracle from the raw rating list.
    let mut du = vec![0usize; m];
    let mut dv = vec![0usize; n * k];
    for &(u, i, r) in ratings {
        du[u] += 1;
        dv[i * k + r as usize - 1] += 1;
    }
    let mut a = vec![vec![0.0; n * k]; m];
    for &(u, i, r) in ratings {
        let c = i * k + r as usize - 1;
        a[u][c] = 1.0 / ((du[u] * dv[c]) as f64).sqrt();
    }
    let at = transpose(&a);
    let decay = |d: usize| if d == 0 { 1.0 } else { 1.0 / (d as f64).sqrt() };
    let su: Vec<f64> = du.iter().map(|&d| decay(d)).collect();
    let sv: Vec<f64> = dv.iter().map(|&d| decay(d)).collect();
    let p = |id| to_dense(store.get(id));
    let mut users = to_dense(store.get(gnn.user_emb));
    let mut subs = to_dense(store.get(gnn.item_emb));
    let (mut cat_u, mut cat_v): (Dense, Dense) = (vec![vec![]; m], vec![vec![]; n * k]);
    for (l, layer) in gnn.layers.iter().enumerate() {
        let mut umsg = mul(&users, &p(layer.user_w));
        if l == 0 && social {
            umsg = hcat(&umsg, &mul(&h_star, &p(gnn.social_w.unwrap())));
        }
        let vmsg = mul(&subs, &p(layer.item_w));
        let slope = store.get(layer.slope).item();
        users = prelu(&add(&scale_rows(&umsg, &su), &mul(&a, &vmsg)), slope);
        subs = prelu(&add(&scale_rows(&vmsg, &sv), &mul(&at, &umsg)), slope);
        cat_u = hcat(&cat_u, &users);
        cat_v = hcat(&cat_v, &subs);
    }
    let items: Dense = (0..n)
        .map(|i| {
            let width = cat_v[0].len();
            (0..width)
                .map(|j| (0..k).map(|r| cat_v[i * k + r][j]).sum::<f64>() / k as f64)
                .collect()
        })
        .collect();

    max_abs_diff(&to_dense(tape.value(out.users)), &cat_u)
        .max(max_abs_diff(&to_dense(tape.value(out.subnodes)), &cat_v))
        .max(max_abs_diff(&to_dense(tape.value(out.items)), &items))
}

/// Max abs difference between the sparse social encoder and dense
/// `prelu(S · H · W)` layers on identity features.
pub fn social_forward_gap(m: usize, edges: &[(usize, usize)], seed: u64) -> f64 {
    let graph = UserSocialGraph::build(edges, m).expect("valid edges");
    let adj = normalize(&graph.adjacency::<f64>()).expect("normalizable");
    let mut r = rng::stream(seed, "oracle");
    let mut store = ParamStore::new();
    let enc = SocialEncoder::new(&mut store, m, 4, 2, &mut r);
    randomize(&mut store, &mut r);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let h = enc
        .encode(&mut tape, &bound, &adj, &Features::Identity)
        .expect("encode");

    let s = dense_normalized(edges, m);
    let mut x = vec![vec![0.0; m]; m];
    for (i, row) in x.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(w, slope) in enc.layer_params() {
        x = prelu(
            &mul(&s, &mul(&x, &to_dense(store.get(w)))),
            store.get(slope).item(),
        );
    }
    max_abs_diff(&to_dense(tape.value(h)), &x)
}

pub fn seeded(seed: u64) -> rng::Rng {
    rng::stream(seed, "test")
}
