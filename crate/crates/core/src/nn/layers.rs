//! Layers assembled from tape primitives. Each layer owns only parameter
//! handles; the arrays live in a [`ParamStore`].

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::NnError;

/// Sinusoidal position code of width `dim`: `sin` on even indices, `cos` on
/// odd ones, wavelengths growing geometrically up to `10000 * 2pi`.
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Token embedding table with additive sinusoidal positions.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Result<Self, NnError> {
        let table = store.add_matrix(&format!("{name}.table"), vocab, dim)?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Vec<Var>, NnError> {
        if ids.is_empty() {
            return Err(NnError::EmptySequence);
        }
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| {
                if id >= self.vocab {
                    return Err(NnError::IdOutOfRange(id));
                }
                let e = g.row(self.table, id);
                let p = g.input(positional_encoding(pos, self.dim));
                Ok(g.add(e, p))
            })
            .collect()
    }
}

/// Gated recurrent unit with reset applied to the projected hidden state:
///
/// ```text
/// r = sigmoid(Wr x + br + Ur h + cr)
/// z = sigmoid(Wz x + bz + Uz h + cz)
/// n = tanh(Wn x + bn + r * (Un h + cn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// The three input projections share one `[3H, in]` matrix, likewise the
/// recurrent ones.
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub wx: ParamId,
    pub bx: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, NnError> {
        Ok(Gru {
            wx: store.add_matrix(&format!("{name}.wx"), 3 * hidden, input)?,
            bx: store.add_bias(&format!("{name}.bx"), 3 * hidden)?,
            wh: store.add_matrix(&format!("{name}.wh"), 3 * hidden, hidden)?,
            bh: store.add_bias(&format!("{name}.bh"), 3 * hidden)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let n = self.hidden;
        let gx = g.affine(self.wx, Some(self.bx), x);
        let gh = g.affine(self.wh, Some(self.bh), h);
        let (xr, hr) = (g.slice(gx, 0, n), g.slice(gh, 0, n));
        let (xz, hz) = (g.slice(gx, n, n), g.slice(gh, n, n));
        let (xn, hn) = (g.slice(gx, 2 * n, n), g.slice(gh, 2 * n, n));
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn);
        let cand = g.add(xn, rh);
        let cand = g.tanh(cand);
        // (1 - z) * n + z * h  ==  n + z * (h - n)
        let diff = g.sub(h, cand);
        let zd = g.mul(z, diff);
        g.add(cand, zd)
    }

    /// Runs over `xs` from a zero state, returning every hidden state.
    pub fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Vec<Var> {
        let mut h = g.zeros(self.hidden);
        let mut out = vec![h; xs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..xs.len()).rev())
        } else {
            Box::new(0..xs.len())
        };
        for i in order {
            h = self.step(g, xs[i], h);
            out[i] = h;
        }
        out
    }
}

/// Bidirectional GRU; position `k` is `forward_k ++ backward_k`.
#[derive(Clone, Copy, Debug)]
pub struct BiRnn {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiRnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, NnError> {
        Ok(BiRnn {
            fwd: Gru::new(store, &format!("{name}.fwd"), input, hidden)?,
            bwd: Gru::new(store, &format!("{name}.bwd"), input, hidden)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn run(&self, g: &mut Graph, xs: &[Var]) -> Vec<Var> {
        let f = self.fwd.run(g, xs, false);
        let b = self.bwd.run(g, xs, true);
        f.into_iter()
            .zip(b)
            .map(|(f, b)| g.concat(&[f, b]))
            .collect()
    }
}

/// `tanh(W x + b)`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self, NnError> {
        Ok(Dense {
            w: store.add_matrix(&format!("{name}.w"), output, input)?,
            b: store.add_bias(&format!("{name}.b"), output)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let a = g.affine(self.w, Some(self.b), x);
        g.tanh(a)
    }

    /// Affine part only.
    pub fn linear(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(self.w, Some(self.b), x)
    }
}

/// Linear layer followed by a log-softmax over `classes`.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxHead {
    pub proj: Dense,
    pub classes: usize,
}

impl SoftmaxHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        classes: usize,
    ) -> Result<Self, NnError> {
        Ok(SoftmaxHead {
            proj: Dense::new(store, name, input, classes)?,
            classes,
        })
    }

    /// Returns `(logits, log_probs)`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let logits = self.proj.linear(g, x);
        let lp = g.log_softmax(logits);
        (logits, lp)
    }
}

/// Additive attention over a set of keys:
/// `score_i = v . tanh(W1 key_i + W2 query)`.
#[derive(Clone, Copy, Debug)]
pub struct Pointer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub v: ParamId,
}

impl Pointer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        key: usize,
        query: usize,
        attn: usize,
    ) -> Result<Self, NnError> {
        Ok(Pointer {
            w1: store.add_matrix(&format!("{name}.w1"), attn, key)?,
            w2: store.add_matrix(&format!("{name}.w2"), attn, query)?,
            v: store.add_vector(&format!("{name}.v"), attn)?,
        })
    }

    /// Projects keys once so several queries can reuse them.
    pub fn project_keys(&self, g: &mut Graph, keys: &[Var]) -> Vec<Var> {
        keys.iter().map(|&k| g.affine(self.w1, None, k)).collect()
    }

    /// Unnormalised scores for pre-projected keys.
    pub fn scores(&self, g: &mut Graph, projected: &[Var], query: Var) -> Var {
        let q = g.affine(self.w2, None, query);
        let v = g.param(self.v);
        let s: Vec<Var> = projected
            .iter()
            .map(|&k| {
                let a = g.add(k, q);
                let t = g.tanh(a);
                g.dot(v, t)
            })
            .collect();
        g.stack(&s)
    }

    /// Returns `(scores, log_probs)` over `keys`.
    pub fn forward(&self, g: &mut Graph, keys: &[Var], query: Var) -> (Var, Var) {
        let projected = self.project_keys(g, keys);
        let s = self.scores(g, &projected, query);
        let lp = g.log_softmax(s);
        (s, lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SubstrateConfig;

    #[test]
    fn positional_code_shape() {
        let p0 = positional_encoding(0, 6);
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p3 = positional_encoding(3, 4);
        assert!((p3[0] - 3f64.sin()).abs() < 1e-15);
        assert!((p3[3] - (3.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        let mut s = ParamStore::new(SubstrateConfig::default());
        let gru = Gru::new(&mut s, "g", 3, 4).unwrap();
        for id in [gru.wx, gru.wh] {
            s.data_mut(id).iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new(&s);
        let x = g.input(vec![1.0, 2.0, 3.0]);
        let h = g.input(vec![1.0, -2.0, 0.5, 0.0]);
        let h2 = gru.step(&mut g, x, h);
        assert_eq!(g.value(h2), &[0.5, -1.0, 0.25, 0.0]);
    }

    #[test]
    fn birnn_concatenates_directions() {
        let mut s = ParamStore::new(SubstrateConfig {
            seed: 3,
            ..Default::default()
        });
        let rnn = BiRnn::new(&mut s, "enc", 2, 5).unwrap();
        let mut g = Graph::new(&s);
        let xs: Vec<Var> = (0..4).map(|i| g.input(vec![i as f64, 1.0])).collect();
        let out = rnn.run(&mut g, &xs);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|&o| g.dim(o) == 10));
        // the backward half of the last position has seen only one input
        let fwd_last = rnn.fwd.run(&mut g, &xs[3..], false)[0];
        let bwd_last = rnn.bwd.run(&mut g, &xs[3..], true)[0];
        assert_eq!(&g.value(out[3])[5..], g.value(bwd_last));
        assert_ne!(&g.value(out[3])[..5], g.value(fwd_last));
    }

    #[test]
    fn embedding_rejects_bad_ids() {
        let mut s = ParamStore::new(SubstrateConfig::default());
        let e = Embedding::new(&mut s, "e", 17, 8).unwrap();
        let mut g = Graph::new(&s);
        assert!(matches!(e.embed(&mut g, &[]), Err(NnError::EmptySequence)));
        assert!(matches!(
            e.embed(&mut g, &[17]),
            Err(NnError::IdOutOfRange(17))
        ));
        assert_eq!(e.embed(&mut g, &[0, 16]).unwrap().len(), 2);
    }

    #[test]
    fn pointer_distribution_sums_to_one() {
        let mut s = ParamStore::new(SubstrateConfig {
            seed: 9,
            ..Default::default()
        });
        let p = Pointer::new(&mut s, "p", 4, 3, 6).unwrap();
        let mut g = Graph::new(&s);
        let keys: Vec<Var> = (0..5).map(|i| g.input(vec![i as f64 * 0.1; 4])).collect();
        let q = g.input(vec![0.3, -0.2, 0.9]);
        let (_, lp) = p.forward(&mut g, &keys, q);
        let total: f64 = g.value(lp).iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(g.dim(lp), 5);
    }
}
