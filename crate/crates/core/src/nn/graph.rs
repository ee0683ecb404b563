//! Vector-level reverse-mode tape.
//!
//! Every node holds a dense `Vec<f64>`; scalars are length-1 vectors.
//! Parameters are read straight from the borrowed [`ParamStore`] and their
//! gradients are accumulated into a [`Gradients`] buffer on `backward`.

use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row {
        table: ParamId,
        row: usize,
    },
    /// `W x (+ b)` with `W` stored row-major as `[out, in]`.
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Dot(Var, Var),
    Stack(Vec<Var>),
    Sum(Vec<Var>),
    LogSoftmax(Var),
    Pick {
        x: Var,
        index: usize,
    },
    Entropy(Var),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Per-node adjoints left behind by [`Graph::backward`].
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Gradient of the seeded objective with respect to `v`, zero if `v`
    /// did not contribute.
    pub fn of(&self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

/// Four independent partial sums let the compiler vectorise.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    log_softmax(x).into_iter().map(f64::exp).collect()
}

/// Shannon entropy (nats) of the distribution `softmax(logits)`.
pub fn entropy_of_logits(x: &[f64]) -> f64 {
    log_softmax(x).iter().map(|&lp| -lp.exp() * lp).sum()
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.store.param(id).data.clone();
        self.push(v, Op::Param(id))
    }

    pub fn row(&mut self, table: ParamId, row: usize) -> Var {
        let p = self.store.param(table);
        let c = p.cols();
        let v = p.data[row * c..(row + 1) * c].to_vec();
        self.push(v, Op::Row { table, row })
    }

    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let p = self.store.param(w);
        let (rows, cols) = (p.rows(), p.cols());
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "affine input width for {}", p.name);
        let mut out: Vec<f64> = match b {
            Some(b) => self.store.param(b).data.clone(),
            None => vec![0.0; rows],
        };
        for (o, wr) in out.iter_mut().zip(p.data.chunks_exact(cols)) {
            *o += dot(wr, xv);
        }
        self.push(out, Op::Affine { w, b, x })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        let v = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(v, op)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s = dot(av, bv);
        self.push(vec![s], Op::Dot(a, b))
    }

    /// Stacks scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let v = scalars.iter().map(|s| self.nodes[s.0].value[0]).collect();
        self.push(v, Op::Stack(scalars.to_vec()))
    }

    /// Elementwise sum of equal-length nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let n = self.nodes[parts[0].0].value.len();
        let mut v = vec![0.0; n];
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.len(), n, "sum length mismatch");
            v.iter_mut().zip(pv).for_each(|(a, b)| *a += b);
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = log_softmax(&self.nodes[x.0].value);
        self.push(v, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.nodes[x.0].value[index];
        self.push(vec![v], Op::Pick { x, index })
    }

    /// Entropy of `softmax(logits)` as a scalar node.
    pub fn entropy(&mut self, logits: Var) -> Var {
        let h = entropy_of_logits(&self.nodes[logits.0].value);
        self.push(vec![h], Op::Entropy(logits))
    }

    /// Reverse sweep from the given seeds (node, d objective / d node).
    /// Parameter gradients are added into `grads`.
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)], grads: &mut Gradients) -> Adjoints {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.len(), "seed shape");
            accumulate(&mut adj, *v, g);
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj, grads);
            adj[i] = Some(g);
        }
        Adjoints { grads: adj }
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
        grads: &mut Gradients,
    ) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                grads
                    .get_mut(*id)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
            Op::Row { table, row } => {
                let c = g.len();
                grads.get_mut(*table)[row * c..(row + 1) * c]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
            Op::Affine { w, b, x } => {
                let p = self.store.param(*w);
                let cols = p.cols();
                let xv = val(*x);
                {
                    let gw = grads.get_mut(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            gw[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(xv)
                                .for_each(|(a, xi)| *a += gr * xi);
                        }
                    }
                }
                if let Some(b) = b {
                    grads
                        .get_mut(*b)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, gr)| *a += gr);
                }
                let mut gx = vec![0.0; cols];
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        gx.iter_mut()
                            .zip(&p.data[r * cols..(r + 1) * cols])
                            .for_each(|(a, wv)| *a += gr * wv);
                    }
                }
                accumulate(adj, *x, &gx);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(adj, *b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::OneMinus(a) => {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(adj, *a, &neg);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(gi, s)| gi * s * (1.0 - s))
                    .collect();
                accumulate(adj, *a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(gi, t)| gi * (1.0 - t * t))
                    .collect();
                accumulate(adj, *a, &ga);
            }
            Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                accumulate(adj, *a, &ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    accumulate(adj, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                gx[*start..start + g.len()].copy_from_slice(g);
                accumulate(adj, *x, &gx);
            }
            Op::Dot(a, b) => {
                let ga: Vec<f64> = val(*b).iter().map(|y| g[0] * y).collect();
                let gb: Vec<f64> = val(*a).iter().map(|x| g[0] * x).collect();
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::Stack(parts) => {
                for (p, gi) in parts.iter().zip(g) {
                    accumulate(adj, *p, &[*gi]);
                }
            }
            Op::Sum(parts) => {
                for p in parts {
                    accumulate(adj, *p, g);
                }
            }
            Op::LogSoftmax(x) => {
                // d/dx_j = g_j - softmax_j * sum(g)
                let total: f64 = g.iter().sum();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(&node.value)
                    .map(|(gi, lp)| gi - lp.exp() * total)
                    .collect();
                accumulate(adj, *x, &gx);
            }
            Op::Pick { x, index } => {
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                gx[*index] = g[0];
                accumulate(adj, *x, &gx);
            }
            Op::Entropy(x) => {
                // dH/dx_j = -p_j (log p_j + H)
                let lp = log_softmax(val(*x));
                let h = node.value[0];
                let gx: Vec<f64> = lp.iter().map(|l| -g[0] * l.exp() * (l + h)).collect();
                accumulate(adj, *x, &gx);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SubstrateConfig;

    #[test]
    fn softmax_normalises() {
        let p = softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p = softmax(&[1000.0, -3.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn entropy_bounds() {
        let h = entropy_of_logits(&[0.0; 7]);
        assert!((h - 7f64.ln()).abs() < 1e-12);
        assert!(entropy_of_logits(&[50.0, -50.0]) >= 0.0);
    }

    #[test]
    fn affine_backward_matches_hand_derivation() {
        let mut s = ParamStore::new(SubstrateConfig::default());
        let w = s.add_matrix("w", 2, 3).unwrap();
        let b = s.add_bias("b", 2).unwrap();
        s.data_mut(w)
            .copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut g = Graph::new(&s);
        let x = g.input(vec![1.0, -1.0, 2.0]);
        let y = g.affine(w, Some(b), x);
        assert_eq!(g.value(y), &[5.0, 11.0]);
        let mut grads = Gradients::zeros_like(&s);
        let adj = g.backward(&[(y, vec![1.0, 0.5])], &mut grads);
        assert_eq!(grads.get(w), &[1.0, -1.0, 2.0, 0.5, -0.5, 1.0]);
        assert_eq!(grads.get(b), &[1.0, 0.5]);
        assert_eq!(adj.of(x, 3), vec![3.0, 4.5, 6.0]);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut s = ParamStore::new(SubstrateConfig::default());
        let used = s.add_vector("used", 2).unwrap();
        let unused = s.add_vector("unused", 2).unwrap();
        let mut g = Graph::new(&s);
        let p = g.param(used);
        let d = g.dot(p, p);
        let mut grads = Gradients::zeros_like(&s);
        g.backward(&[(d, vec![1.0])], &mut grads);
        assert!(grads.get(unused).iter().all(|&x| x == 0.0));
        assert!(grads.get(used).iter().any(|&x| x != 0.0));
    }
}
