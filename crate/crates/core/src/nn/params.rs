//! Named parameter arrays, Adam state and the checkpoint container.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "skillcalc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubstrateConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Half-width of the uniform weight initialisation.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        SubstrateConfig {
            hidden: 100,
            embedding: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: 0.08,
            seed: 0,
        }
    }
}

impl SubstrateConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 || self.embedding == 0 {
            return Err(NnError::Config(
                "hidden and embedding sizes must be positive".into(),
            ));
        }
        // written negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(NnError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column count of a matrix, 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }
}

/// All trainable arrays of one network plus its optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    adam_step: u64,
    config: SubstrateConfig,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(config: SubstrateConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            adam_step: 0,
            config,
            rng,
        }
    }

    pub fn config(&self) -> &SubstrateConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam_step
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn insert(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let n = data.len();
        self.params.push(Param {
            name: name.to_string(),
            dtype: "f64".into(),
            shape,
            data,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Matrix `[rows, cols]` drawn uniformly from `±init_scale`.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NnError> {
        let a = self.config.init_scale;
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-a..=a))
            .collect();
        self.insert(name, vec![rows, cols], data)
    }

    /// Vector initialised uniformly, like a matrix row.
    pub fn add_vector(&mut self, name: &str, len: usize) -> Result<ParamId, NnError> {
        let a = self.config.init_scale;
        let data = (0..len).map(|_| self.rng.gen_range(-a..=a)).collect();
        self.insert(name, vec![len], data)
    }

    pub fn add_bias(&mut self, name: &str, len: usize) -> Result<ParamId, NnError> {
        self.insert(name, vec![len], vec![0.0; len])
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// In-place Adam update from accumulated gradients of the loss being
    /// minimised.
    pub fn adam_step(&mut self, grads: &Gradients) -> Result<(), NnError> {
        if grads.arrays.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.params.len(),
                got: grads.arrays.len(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient".into()));
        }
        self.adam_step += 1;
        let SubstrateConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            ..
        } = self.config;
        let t = self.adam_step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&grads.arrays) {
            for (i, &gi) in g.iter().enumerate().take(p.data.len()) {
                p.adam_m[i] = b1 * p.adam_m[i] + (1.0 - b1) * gi;
                p.adam_v[i] = b2 * p.adam_v[i] + (1.0 - b2) * gi * gi;
                let m_hat = p.adam_m[i] / c1;
                let v_hat = p.adam_v[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|x| x.is_finite()))
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            config: self.config.clone(),
            adam_step: self.adam_step,
            rng: self.rng.clone(),
            arrays: self.params.clone(),
        }
    }

    pub fn from_snapshot(s: StoreSnapshot) -> Result<Self, NnError> {
        let mut index = HashMap::new();
        for (i, p) in s.arrays.iter().enumerate() {
            if p.shape.iter().product::<usize>() != p.data.len()
                || p.adam_m.len() != p.data.len()
                || p.adam_v.len() != p.data.len()
            {
                return Err(NnError::Format(format!(
                    "array {} does not match its shape",
                    p.name
                )));
            }
            if index.insert(p.name.clone(), ParamId(i)).is_some() {
                return Err(NnError::DuplicateParam(p.name.clone()));
            }
        }
        Ok(ParamStore {
            params: s.arrays,
            index,
            adam_step: s.adam_step,
            config: s.config,
            rng: s.rng,
        })
    }
}

/// Serializable form of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub config: SubstrateConfig,
    pub adam_step: u64,
    pub rng: ChaCha8Rng,
    pub arrays: Vec<Param>,
}

/// Gradient buffers shaped like a store's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            arrays: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.arrays[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.arrays[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.arrays.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> f64 {
        self.arrays
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().flatten().all(|x| x.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flatten().copied().collect()
    }
}

/// Versioned checkpoint: a store snapshot plus a task tag and free-form
/// metadata owned by whichever module saved it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tag: String,
    pub kind: String,
    pub meta: serde_json::Value,
    pub store: StoreSnapshot,
}

impl Checkpoint {
    pub fn new(tag: &str, kind: &str, meta: serde_json::Value, store: &ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tag: tag.into(),
            kind: kind.into(),
            meta,
            store: store.snapshot(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        serde_json::to_vec(self).map_err(|e| NnError::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let h: Header =
            serde_json::from_slice(bytes).map_err(|e| NnError::Format(e.to_string()))?;
        if h.format != CHECKPOINT_FORMAT {
            return Err(NnError::Format(format!("not a checkpoint: {}", h.format)));
        }
        if h.version != CHECKPOINT_VERSION {
            return Err(NnError::CheckpointVersionMismatch {
                found: h.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_slice(bytes).map_err(|e| NnError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), NnError> {
    Checkpoint::new("", "store", serde_json::Value::Null, store).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NnError> {
    ParamStore::from_snapshot(Checkpoint::load(path)?.store)
}
