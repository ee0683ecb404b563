//! Basic skill modules: Bi-GRU sequence labelers for single-digit
//! operations. Input and output share a fixed width; shorter inputs are
//! right-aligned behind blanks, and the answer is read off right-aligned
//! with blanks stripped.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::expr::{BinOp, OperandShape, Sample, TaskSpec, Token, TokenSeq, VOCAB_SIZE};
use crate::nn::{
    BiRnn, Checkpoint, Embedding, Gradients, Graph, NnError, ParamStore, SoftmaxHead,
    SubstrateConfig,
};
use crate::skill::{SkillError, SkillKind, SkillModule};

pub const CHECKPOINT_KIND: &str = "bsm";

#[derive(Debug, Error)]
pub enum BsmError {
    #[error("input length {got} exceeds module width {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    DatasetEmpty,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BsmConfig {
    pub l_io: usize,
    pub epochs: usize,
    pub batch: usize,
    pub substrate: SubstrateConfig,
}

impl Default for BsmConfig {
    fn default() -> Self {
        BsmConfig {
            l_io: 3,
            epochs: 500,
            batch: 10,
            substrate: SubstrateConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// First epoch (1-based) at which every sample was decoded exactly.
    pub mastered_at: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Net {
    embed: Embedding,
    rnn: BiRnn,
    head: SoftmaxHead,
}

impl Net {
    fn build(store: &mut ParamStore) -> Result<Net, NnError> {
        let c = store.config().clone();
        let embed = Embedding::new(store, "embed", VOCAB_SIZE, c.embedding)?;
        let rnn = BiRnn::new(store, "rnn", c.embedding, c.hidden)?;
        let head = SoftmaxHead::new(store, "head", rnn.output_dim(), VOCAB_SIZE)?;
        Ok(Net { embed, rnn, head })
    }

    /// Per-position log-probabilities.
    fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Vec<crate::nn::Var>, NnError> {
        let xs = self.embed.embed(g, ids)?;
        let hs = self.rnn.run(g, &xs);
        Ok(hs.into_iter().map(|h| self.head.forward(g, h).1).collect())
    }
}

#[derive(Clone, Debug)]
pub struct BasicSkillModule {
    task_id: String,
    l_io: usize,
    store: ParamStore,
    net: Net,
}

impl BasicSkillModule {
    pub fn new(task_id: &str, l_io: usize, substrate: SubstrateConfig) -> Result<Self, BsmError> {
        substrate.validate()?;
        let mut store = ParamStore::new(substrate);
        let net = Net::build(&mut store)?;
        Ok(BasicSkillModule {
            task_id: task_id.to_string(),
            l_io,
            store,
            net,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn l_io(&self) -> usize {
        self.l_io
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Left-pads with blanks to the module width.
    pub fn pad(&self, seq: &[Token]) -> Result<Vec<usize>, BsmError> {
        if seq.len() > self.l_io {
            return Err(BsmError::LengthMismatch {
                expected: self.l_io,
                got: seq.len(),
            });
        }
        let mut ids = vec![Token::BLANK.id(); self.l_io - seq.len()];
        ids.extend(seq.iter().map(|t| t.id()));
        Ok(ids)
    }

    /// One probability vector over the alphabet per position.
    pub fn forward(&self, input: &[Token]) -> Result<Vec<Vec<f64>>, BsmError> {
        let ids = self.pad(input)?;
        let mut g = Graph::new(&self.store);
        let lps = self.net.forward(&mut g, &ids)?;
        Ok(lps
            .iter()
            .map(|&lp| g.value(lp).iter().map(|x| x.exp()).collect())
            .collect())
    }

    pub fn predict(&self, input: &[Token]) -> Result<TokenSeq, BsmError> {
        Ok(decode(&self.forward(input)?))
    }

    /// Supervised cross-entropy training with Adam. Stops early once an
    /// epoch ends with every sample decoded exactly.
    pub fn train_supervised<R: Rng + ?Sized>(
        &mut self,
        data: &[Sample],
        epochs: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<TrainMetrics, BsmError> {
        if data.is_empty() {
            return Err(BsmError::DatasetEmpty);
        }
        let encoded: Vec<(Vec<usize>, Vec<usize>)> = data
            .iter()
            .map(|s| Ok((self.pad(&s.input)?, self.pad(&s.truth)?)))
            .collect::<Result<_, BsmError>>()?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut metrics = TrainMetrics::default();
        for epoch in 1..=epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch.max(1)) {
                let mut grads = Gradients::zeros_like(&self.store);
                for &i in chunk {
                    total +=
                        self.accumulate(&encoded[i].0, &encoded[i].1, chunk.len(), &mut grads)?;
                }
                self.store.adam_step(&grads)?;
            }
            let correct = data
                .iter()
                .filter(|s| self.predict(&s.input).is_ok_and(|p| p == s.truth))
                .count();
            let accuracy = correct as f64 / data.len() as f64;
            let loss = total / data.len() as f64;
            if !loss.is_finite() {
                return Err(NnError::NonFinite("supervised loss".into()).into());
            }
            metrics.epochs.push(EpochMetrics {
                epoch,
                loss,
                accuracy,
            });
            log::debug!(
                "{} epoch {epoch}: loss {loss:.5} acc {accuracy:.3}",
                self.task_id
            );
            if correct == data.len() {
                metrics.mastered_at = Some(epoch);
                break;
            }
        }
        Ok(metrics)
    }

    /// Adds the gradient of the mean (over the minibatch) summed per-position
    /// cross-entropy; returns the unscaled sample loss.
    fn accumulate(
        &self,
        input: &[usize],
        target: &[usize],
        n: usize,
        grads: &mut Gradients,
    ) -> Result<f64, BsmError> {
        let mut g = Graph::new(&self.store);
        let lps = self.net.forward(&mut g, input)?;
        let picks: Vec<_> = lps
            .iter()
            .zip(target)
            .map(|(&lp, &t)| g.pick(lp, t))
            .collect();
        let loss = -picks.iter().map(|&p| g.scalar(p)).sum::<f64>();
        let seeds: Vec<_> = picks
            .into_iter()
            .map(|p| (p, vec![-1.0 / n as f64]))
            .collect();
        g.backward(&seeds, grads);
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.task_id,
            CHECKPOINT_KIND,
            json!({ "l_io": self.l_io }),
            &self.store,
        )
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, BsmError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(NnError::Format(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {}",
                ck.kind
            ))
            .into());
        }
        let l_io = ck.meta["l_io"]
            .as_u64()
            .ok_or_else(|| NnError::Format("missing l_io".into()))? as usize;
        let store = ParamStore::from_snapshot(ck.store)?;
        let mut scratch = ParamStore::new(store.config().clone());
        let net = Net::build(&mut scratch)?;
        check_layout(&scratch, &store)?;
        Ok(BasicSkillModule {
            task_id: ck.tag,
            l_io,
            store,
            net,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BsmError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BsmError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// Loaded arrays must line up name-for-name and shape-for-shape with a
/// freshly built network.
pub(crate) fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<(), NnError> {
    let (a, b) = (expected.params(), got.params());
    if a.len() != b.len() {
        return Err(NnError::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    for (x, y) in a.iter().zip(b) {
        if x.name != y.name || x.shape != y.shape {
            return Err(NnError::Format(format!(
                "array {} does not match expected {}",
                y.name, x.name
            )));
        }
    }
    Ok(())
}

/// Per-position argmax (lowest id on ties), blanks removed.
pub fn decode(dists: &[Vec<f64>]) -> TokenSeq {
    dists
        .iter()
        .map(|d| {
            let mut best = 0;
            for (i, &p) in d.iter().enumerate() {
                if p > d[best] {
                    best = i;
                }
            }
            Token::from_id(best).expect("alphabet index")
        })
        .filter(|t| !t.is_blank())
        .collect()
}

impl SkillModule for BasicSkillModule {
    fn name(&self) -> &str {
        &self.task_id
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Basic
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        self.predict(input).map_err(|e| match e {
            BsmError::LengthMismatch { expected, got } => {
                SkillError::LengthMismatch { expected, got }
            }
            other => SkillError::Rejected {
                module: self.task_id.clone(),
                input: other.to_string(),
            },
        })
    }
}

/// Wraps a trained module as a frozen skill.
pub fn as_skill(bsm: BasicSkillModule) -> std::sync::Arc<dyn SkillModule> {
    std::sync::Arc::new(bsm)
}

/// Every `a op b` over single digits, minus inexact or by-zero divisions.
pub fn enumerate_single_digit(op: BinOp) -> Vec<Sample> {
    let mut out = Vec::new();
    for a in 0..10u8 {
        for b in 0..10u8 {
            let input: TokenSeq = [Token::digit(a), op.token(), Token::digit(b)]
                .into_iter()
                .collect();
            if let Ok(s) = Sample::from_input(input) {
                out.push(s);
            }
        }
    }
    out
}

/// Task spec matching [`enumerate_single_digit`].
pub fn single_digit_spec(op: BinOp) -> TaskSpec {
    TaskSpec::binary(op, OperandShape::single(), OperandShape::single())
}
