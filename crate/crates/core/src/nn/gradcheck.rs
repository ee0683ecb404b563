//! Central finite-difference checks of every tape primitive and layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::layers::{BiRnn, Dense, Embedding, Gru, Pointer, SoftmaxHead};
use super::params::{Gradients, ParamStore, SubstrateConfig};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub op: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

struct Case {
    name: &'static str,
    store: ParamStore,
    inputs: Vec<Vec<f64>>,
    build: Box<Build>,
}

fn objective(store: &ParamStore, inputs: &[Vec<f64>], build: &Build, proj: &[f64]) -> f64 {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).iter().zip(proj).map(|(a, b)| a * b).sum()
}

fn run_case(case: Case, rng: &mut ChaCha8Rng, corrupt: bool) -> GradcheckReport {
    let Case {
        name,
        mut store,
        mut inputs,
        build,
    } = case;
    // project the output onto a random direction so every component matters
    let out_dim = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.dim(out)
    };
    let proj: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut grads = Gradients::zeros_like(&store);
    let input_grads: Vec<Vec<f64>> = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        let adj = g.backward(&[(out, proj.clone())], &mut grads);
        vars.iter()
            .zip(&inputs)
            .map(|(v, x)| adj.of(*v, x.len()))
            .collect()
    };
    let bump = if corrupt { 1.01 } else { 1.0 };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.param(id).len() {
            let orig = store.param(id).data[k];
            store.data_mut(id)[k] = orig + STEP;
            let up = objective(&store, &inputs, build.as_ref(), &proj);
            store.data_mut(id)[k] = orig - STEP;
            let down = objective(&store, &inputs, build.as_ref(), &proj);
            store.data_mut(id)[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(grads.get(id)[k] * bump, numeric));
            checked += 1;
        }
    }
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let orig = inputs[i][k];
            inputs[i][k] = orig + STEP;
            let up = objective(&store, &inputs, build.as_ref(), &proj);
            inputs[i][k] = orig - STEP;
            let down = objective(&store, &inputs, build.as_ref(), &proj);
            inputs[i][k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(input_grads[i][k] * bump, numeric));
            checked += 1;
        }
    }
    GradcheckReport {
        op: name.to_string(),
        checked,
        max_rel_error: worst,
        passed: worst < TOLERANCE,
    }
}

fn store(seed: u64) -> ParamStore {
    ParamStore::new(SubstrateConfig {
        init_scale: 0.5,
        seed,
        ..SubstrateConfig::default()
    })
}

fn vecs(rng: &mut ChaCha8Rng, dims: &[usize]) -> Vec<Vec<f64>> {
    dims.iter()
        .map(|&n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut out = Vec::new();
    let mut push = |name, store, inputs, build: Box<Build>| {
        out.push(Case {
            name,
            store,
            inputs,
            build,
        })
    };

    let mut s = store(1);
    let w = s.add_matrix("w", 3, 4).unwrap();
    let b = s.add_vector("b", 3).unwrap();
    push(
        "affine",
        s,
        vecs(rng, &[4]),
        Box::new(move |g, x| g.affine(w, Some(b), x[0])),
    );

    push(
        "add",
        store(0),
        vecs(rng, &[3, 3]),
        Box::new(|g, x| g.add(x[0], x[1])),
    );
    push(
        "sub",
        store(0),
        vecs(rng, &[3, 3]),
        Box::new(|g, x| g.sub(x[0], x[1])),
    );
    push(
        "mul",
        store(0),
        vecs(rng, &[3, 3]),
        Box::new(|g, x| g.mul(x[0], x[1])),
    );
    push(
        "one_minus",
        store(0),
        vecs(rng, &[3]),
        Box::new(|g, x| g.one_minus(x[0])),
    );
    push(
        "sigmoid",
        store(0),
        vecs(rng, &[4]),
        Box::new(|g, x| g.sigmoid(x[0])),
    );
    push(
        "tanh",
        store(0),
        vecs(rng, &[4]),
        Box::new(|g, x| g.tanh(x[0])),
    );
    push(
        "scale",
        store(0),
        vecs(rng, &[3]),
        Box::new(|g, x| g.scale(x[0], -1.7)),
    );
    push(
        "concat",
        store(0),
        vecs(rng, &[2, 3]),
        Box::new(|g, x| g.concat(&[x[0], x[1], x[0]])),
    );
    push(
        "slice",
        store(0),
        vecs(rng, &[5]),
        Box::new(|g, x| g.slice(x[0], 1, 3)),
    );
    push(
        "dot",
        store(0),
        vecs(rng, &[4, 4]),
        Box::new(|g, x| g.dot(x[0], x[1])),
    );
    push(
        "stack",
        store(0),
        vecs(rng, &[3, 3]),
        Box::new(|g, x| {
            let a = g.dot(x[0], x[1]);
            let b = g.dot(x[0], x[0]);
            g.stack(&[a, b, a])
        }),
    );
    push(
        "sum",
        store(0),
        vecs(rng, &[3, 3, 3]),
        Box::new(|g, x| g.sum(&[x[0], x[1], x[2], x[0]])),
    );
    push(
        "log_softmax",
        store(0),
        vecs(rng, &[5]),
        Box::new(|g, x| g.log_softmax(x[0])),
    );
    push(
        "pick",
        store(0),
        vecs(rng, &[5]),
        Box::new(|g, x| {
            let lp = g.log_softmax(x[0]);
            g.pick(lp, 2)
        }),
    );
    push(
        "entropy",
        store(0),
        vecs(rng, &[6]),
        Box::new(|g, x| g.entropy(x[0])),
    );

    let mut s = store(2);
    let p = s.add_vector("p", 4).unwrap();
    push(
        "param",
        s,
        vecs(rng, &[4]),
        Box::new(move |g, x| {
            let v = g.param(p);
            g.mul(v, x[0])
        }),
    );

    let mut s = store(3);
    let emb = Embedding::new(&mut s, "emb", 6, 4).unwrap();
    push(
        "embedding",
        s,
        vec![],
        Box::new(move |g, _| {
            let e = emb.embed(g, &[1, 4, 1]).unwrap();
            let t: Vec<Var> = e.iter().map(|&v| g.tanh(v)).collect();
            g.concat(&t)
        }),
    );

    let mut s = store(4);
    let gru = Gru::new(&mut s, "gru", 3, 4).unwrap();
    push(
        "gru",
        s,
        vecs(rng, &[3, 4]),
        Box::new(move |g, x| gru.step(g, x[0], x[1])),
    );

    let mut s = store(5);
    let rnn = BiRnn::new(&mut s, "rnn", 2, 3).unwrap();
    push(
        "birnn",
        s,
        vecs(rng, &[2, 2, 2]),
        Box::new(move |g, x| {
            let o = rnn.run(g, x);
            g.concat(&o)
        }),
    );

    let mut s = store(6);
    let ffn = Dense::new(&mut s, "ffn", 4, 3).unwrap();
    push(
        "ffn",
        s,
        vecs(rng, &[4]),
        Box::new(move |g, x| ffn.forward(g, x[0])),
    );

    let mut s = store(7);
    let head = SoftmaxHead::new(&mut s, "head", 4, 5).unwrap();
    push(
        "softmax_head",
        s,
        vecs(rng, &[4]),
        Box::new(move |g, x| head.forward(g, x[0]).1),
    );

    let mut s = store(8);
    let ptr = Pointer::new(&mut s, "ptr", 3, 2, 4).unwrap();
    push(
        "pointer",
        s,
        vecs(rng, &[3, 3, 3, 2]),
        Box::new(move |g, x| ptr.forward(g, &x[..3], x[3]).1),
    );

    out
}

/// Runs every case. `corrupt` scales the analytic gradients by 1% so the
/// checker can be seen to fail.
pub fn check_all(seed: u64, corrupt: bool) -> Vec<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = cases(&mut rng);
    cases
        .into_iter()
        .map(|c| run_case(c, &mut rng, corrupt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for r in check_all(0, false) {
            assert!(r.passed, "{} max rel error {}", r.op, r.max_rel_error);
            assert!(r.checked > 0, "{}", r.op);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let reports = check_all(0, true);
        assert!(reports.iter().all(|r| !r.passed));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
