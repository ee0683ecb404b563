use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{apply_action, trace_line, Invocation, IsmError, Memory, Outcome, Span, L_MAX, T_MAX};
use crate::bsm::check_layout;
use crate::expr::{TaskSpec, Token, TokenSeq, VOCAB_SIZE};
use crate::nn::{
    BiRnn, Checkpoint, Dense, Embedding, Graph, Gru, NnError, ParamId, ParamStore, Pointer,
    SoftmaxHead, SubstrateConfig, Var,
};
use crate::skill::{SkillError, SkillKind, SkillModule, SkillRegistry};

pub const CHECKPOINT_KIND: &str = "ism";

/// Module select plus six pointers: read1 start/end, read2 start/end,
/// write start/end.
pub const HEADS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsmConfig {
    pub substrate: SubstrateConfig,
    /// Width of the additive attention layer; 0 means the hidden size.
    #[serde(default)]
    pub attention: usize,
    pub t_max: usize,
    pub l_max: usize,
    /// Insert a single-operator module's operator between two read spans
    /// that meet without one.
    pub implicit_join: bool,
}

impl Default for IsmConfig {
    fn default() -> Self {
        IsmConfig {
            substrate: SubstrateConfig::default(),
            attention: 0,
            t_max: T_MAX,
            l_max: L_MAX,
            implicit_join: true,
        }
    }
}

impl IsmConfig {
    fn attention_width(&self) -> usize {
        if self.attention == 0 {
            self.substrate.hidden
        } else {
            self.attention
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompositeAction {
    pub module: usize,
    pub read1: Span,
    pub read2: Span,
    pub write: Span,
}

impl CompositeAction {
    pub const HALT: CompositeAction = CompositeAction {
        module: 0,
        read1: Span::EMPTY,
        read2: Span::EMPTY,
        write: Span::EMPTY,
    };

    /// Assembles spans from raw head choices, lifting each end to at least
    /// its start.
    pub fn from_raw(raw: [usize; HEADS]) -> Self {
        let span = |s: usize, e: usize| Span::new(s, e.max(s));
        CompositeAction {
            module: raw[0],
            read1: span(raw[1], raw[2]),
            read2: span(raw[3], raw[4]),
            write: span(raw[5], raw[6]),
        }
    }

    pub fn raw(&self) -> [usize; HEADS] {
        [
            self.module,
            self.read1.start,
            self.read1.end,
            self.read2.start,
            self.read2.end,
            self.write.start,
            self.write.end,
        ]
    }
}

/// One step's choice together with the policy's bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: CompositeAction,
    pub raw: [usize; HEADS],
    pub log_prob: f64,
    pub value: f64,
}

impl From<CompositeAction> for Decision {
    fn from(action: CompositeAction) -> Self {
        Decision {
            action,
            raw: action.raw(),
            log_prob: 0.0,
            value: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EpisodeStatus {
    Halted,
    StepLimit,
    CapacityExceeded,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub memory: Memory,
    pub raw: [usize; HEADS],
    pub action: CompositeAction,
    pub log_prob: f64,
    pub value: f64,
    pub invocation: Option<Invocation>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub input: TokenSeq,
    pub steps: Vec<Step>,
    pub output: TokenSeq,
    pub status: EpisodeStatus,
    /// Terminal reward; filled in by the trainer.
    pub reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn trace(&self, registry: &SkillRegistry) -> Vec<String> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| trace_line(t + 1, &s.memory, &s.action, registry, s.invocation.as_ref()))
            .collect()
    }

    /// Drives the machine with externally chosen actions.
    pub fn run_with<F>(
        input: &[Token],
        registry: &SkillRegistry,
        config: &IsmConfig,
        mut choose: F,
    ) -> Result<Trajectory, IsmError>
    where
        F: FnMut(&Memory) -> Result<Decision, IsmError>,
    {
        let mut memory = Memory::new(input, config.l_max)?;
        let mut steps = Vec::new();
        for _ in 0..config.t_max {
            let Decision {
                action,
                raw,
                log_prob,
                value,
            } = choose(&memory)?;
            let mut step = Step {
                memory: memory.clone(),
                raw,
                action,
                log_prob,
                value,
                invocation: None,
            };
            match apply_action(&memory, &action, registry, config.implicit_join) {
                Ok(Outcome::Halted(output)) => {
                    steps.push(step);
                    return Ok(Trajectory::finish(
                        input,
                        steps,
                        output,
                        EpisodeStatus::Halted,
                    ));
                }
                Ok(Outcome::Continue(next, inv)) => {
                    step.invocation = Some(inv);
                    steps.push(step);
                    memory = next;
                }
                Err(IsmError::CapacityExceeded(_)) => {
                    steps.push(step);
                    return Ok(Trajectory::finish(
                        input,
                        steps,
                        memory.answer(),
                        EpisodeStatus::CapacityExceeded,
                    ));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Trajectory::finish(
            input,
            steps,
            memory.answer(),
            EpisodeStatus::StepLimit,
        ))
    }

    fn finish(
        input: &[Token],
        steps: Vec<Step>,
        output: TokenSeq,
        status: EpisodeStatus,
    ) -> Trajectory {
        Trajectory {
            input: TokenSeq::from_tokens(input.to_vec()),
            steps,
            output,
            status,
            reward: 0.0,
        }
    }
}

/// Nodes produced for one machine step.
#[derive(Clone, Copy, Debug)]
pub struct StepForward {
    pub h: Var,
    pub logits: [Var; HEADS],
    pub log_probs: [Var; HEADS],
    pub value: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct IsmNet {
    embed: Embedding,
    encoder: BiRnn,
    controller: Gru,
    state: Dense,
    select: SoftmaxHead,
    sentinel: ParamId,
    pointers: [Pointer; 6],
    value: Dense,
    hidden: usize,
}

impl IsmNet {
    pub fn build(
        store: &mut ParamStore,
        modules: usize,
        attention: usize,
    ) -> Result<IsmNet, NnError> {
        let c = store.config().clone();
        let (e, h) = (c.embedding, c.hidden);
        let embed = Embedding::new(store, "embed", VOCAB_SIZE, e)?;
        let encoder = BiRnn::new(store, "encoder", e, h)?;
        let k = encoder.output_dim();
        let controller = Gru::new(store, "controller", 2 * k, h)?;
        let state = Dense::new(store, "state", h, h)?;
        let select = SoftmaxHead::new(store, "select", h, modules)?;
        let sentinel = store.add_matrix("sentinel", 1, k)?;
        let names = [
            "read1_start",
            "read1_end",
            "read2_start",
            "read2_end",
            "write_start",
            "write_end",
        ];
        let mut pointers = Vec::with_capacity(6);
        for n in names {
            pointers.push(Pointer::new(store, n, k, h, attention)?);
        }
        let value = Dense::new(store, "value", h, 1)?;
        Ok(IsmNet {
            embed,
            encoder,
            controller,
            state,
            select,
            sentinel,
            pointers: pointers.try_into().expect("six pointers"),
            value,
            hidden: h,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Encodes `memory`, advances the controller from `h_prev` and evaluates
    /// every head.
    pub fn step(
        &self,
        g: &mut Graph,
        memory: &[usize],
        h_prev: Var,
    ) -> Result<StepForward, NnError> {
        let xs = self.embed.embed(g, memory)?;
        let os = self.encoder.run(g, &xs);
        let ends = g.concat(&[os[0], os[os.len() - 1]]);
        let h = self.controller.step(g, ends, h_prev);
        let s = self.state.forward(g, h);
        let (ml, mlp) = self.select.forward(g, s);
        let mut keys = os;
        keys.push(g.param(self.sentinel));
        let mut logits = [ml; HEADS];
        let mut log_probs = [mlp; HEADS];
        for (i, p) in self.pointers.iter().enumerate() {
            let (sc, lp) = p.forward(g, &keys, s);
            logits[i + 1] = sc;
            log_probs[i + 1] = lp;
        }
        let value = self.value.linear(g, s);
        Ok(StepForward {
            h,
            logits,
            log_probs,
            value,
        })
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// A trainable interactive skill module bound to its frozen registry.
#[derive(Clone)]
pub struct InteractiveSkillModule {
    task: TaskSpec,
    config: IsmConfig,
    store: ParamStore,
    net: IsmNet,
    registry: SkillRegistry,
}

impl InteractiveSkillModule {
    pub fn new(
        task: TaskSpec,
        registry: SkillRegistry,
        config: IsmConfig,
    ) -> Result<Self, IsmError> {
        config.substrate.validate()?;
        let mut store = ParamStore::new(config.substrate.clone());
        let net = IsmNet::build(&mut store, registry.len(), config.attention_width())?;
        Ok(InteractiveSkillModule {
            task,
            config,
            store,
            net,
            registry,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn config(&self) -> &IsmConfig {
        &self.config
    }

    pub fn registry(&self) -> &SkillRegistry {
        &self.registry
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn net(&self) -> &IsmNet {
        &self.net
    }

    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        input: &[Token],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Trajectory, IsmError> {
        let mut h = vec![0.0; self.net.hidden];
        Trajectory::run_with(input, &self.registry, &self.config, |memory| {
            let mut g = Graph::new(&self.store);
            let h_prev = g.input(std::mem::take(&mut h));
            let f = self.net.step(&mut g, &memory.ids(), h_prev)?;
            let mut raw = [0; HEADS];
            let mut log_prob = 0.0;
            for (k, r) in raw.iter_mut().enumerate() {
                let lp = g.value(f.log_probs[k]);
                *r = match mode {
                    Mode::Greedy => argmax(lp),
                    Mode::Sample => sample_index(lp, rng),
                };
                log_prob += lp[*r];
            }
            h = g.value(f.h).to_vec();
            Ok(Decision {
                action: CompositeAction::from_raw(raw),
                raw,
                log_prob,
                value: g.scalar(f.value),
            })
        })
    }

    /// Rebuilds the whole episode on one tape: per step, the joint
    /// log-probability of the recorded head choices, the summed head
    /// entropy and the value estimate.
    pub fn replay(
        &self,
        g: &mut Graph,
        traj: &Trajectory,
    ) -> Result<Vec<(Var, Var, Var)>, IsmError> {
        let mut h = g.zeros(self.net.hidden);
        let mut out = Vec::with_capacity(traj.steps.len());
        for step in &traj.steps {
            let f = self.net.step(g, &step.memory.ids(), h)?;
            let picks: Vec<Var> = (0..HEADS)
                .map(|k| g.pick(f.log_probs[k], step.raw[k]))
                .collect();
            let lp = g.sum(&picks);
            let ents: Vec<Var> = f.logits.iter().map(|&l| g.entropy(l)).collect();
            let ent = g.sum(&ents);
            out.push((lp, ent, f.value));
            h = f.h;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "task": self.task,
            "config": self.config,
            "registry": self.registry.names(),
        });
        Checkpoint::new(&self.task.id, CHECKPOINT_KIND, meta, &self.store)
    }

    /// Restores a module; `registry` must list the same modules, in order,
    /// as the one it was trained against.
    pub fn from_checkpoint(ck: Checkpoint, registry: SkillRegistry) -> Result<Self, IsmError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(NnError::Format(format!(
                "expected an {CHECKPOINT_KIND} checkpoint, found {}",
                ck.kind
            ))
            .into());
        }
        let bad = |what: &str| NnError::Format(format!("checkpoint meta: {what}"));
        let task: TaskSpec =
            serde_json::from_value(ck.meta["task"].clone()).map_err(|_| bad("task"))?;
        let config: IsmConfig =
            serde_json::from_value(ck.meta["config"].clone()).map_err(|_| bad("config"))?;
        let names: Vec<String> =
            serde_json::from_value(ck.meta["registry"].clone()).map_err(|_| bad("registry"))?;
        if names != registry.names() {
            return Err(IsmError::Registry(format!(
                "trained against {names:?}, given {:?}",
                registry.names()
            )));
        }
        let store = ParamStore::from_snapshot(ck.store)?;
        let mut scratch = ParamStore::new(store.config().clone());
        let net = IsmNet::build(&mut scratch, registry.len(), config.attention_width())?;
        check_layout(&scratch, &store)?;
        Ok(InteractiveSkillModule {
            task,
            config,
            store,
            net,
            registry,
        })
    }
}

impl SkillModule for InteractiveSkillModule {
    fn name(&self) -> &str {
        &self.task.id
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Interactive
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let traj = self
            .run_episode(input, Mode::Greedy, &mut rng)
            .map_err(|e| SkillError::EpisodeFailed(e.to_string()))?;
        match traj.status {
            EpisodeStatus::Halted => Ok(traj.output),
            s => Err(SkillError::EpisodeFailed(format!("{s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::expr::{tokenize, BinOp, OperandShape};
    use crate::nn::Gradients;
    use crate::skill::OracleSkill;

    fn small() -> IsmConfig {
        IsmConfig {
            substrate: SubstrateConfig {
                hidden: 6,
                embedding: 4,
                seed: 11,
                ..SubstrateConfig::default()
            },
            ..IsmConfig::default()
        }
    }

    fn ism(config: IsmConfig) -> InteractiveSkillModule {
        let mut r = SkillRegistry::new();
        r.push(Arc::new(OracleSkill::new(TaskSpec::binary(
            BinOp::Add,
            OperandShape::single(),
            OperandShape::single(),
        ))));
        InteractiveSkillModule::new(
            TaskSpec::binary(
                BinOp::Add,
                OperandShape::multi(1, 2),
                OperandShape::multi(1, 2),
            ),
            r,
            config,
        )
        .unwrap()
    }

    #[test]
    fn halt_only_registry_stops_at_once() {
        let m = InteractiveSkillModule::new(
            TaskSpec::binary(
                BinOp::Add,
                OperandShape::multi(1, 2),
                OperandShape::multi(1, 2),
            ),
            SkillRegistry::new(),
            small(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = m
            .run_episode(&tokenize("12+3").unwrap(), Mode::Sample, &mut rng)
            .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.status, EpisodeStatus::Halted);
        assert_eq!(t.output.to_string(), "12+3");
        // point mass on HALT contributes log 1
        let mut g = Graph::new(m.store());
        let h = g.zeros(6);
        let f = m.net().step(&mut g, &[1, 2, 10, 3], h).unwrap();
        assert_eq!(g.value(f.log_probs[0]), &[0.0]);
    }

    #[test]
    fn heads_are_normalised_over_l_plus_one_positions() {
        let m = ism(small());
        let mut g = Graph::new(m.store());
        let h = g.zeros(6);
        let f = m.net().step(&mut g, &[5, 7, 10, 6, 8], h).unwrap();
        for (k, &lp) in f.log_probs.iter().enumerate() {
            let p: f64 = g.value(lp).iter().map(|x| x.exp()).sum();
            assert!((p - 1.0).abs() < 1e-12);
            assert_eq!(g.dim(lp), if k == 0 { 2 } else { 6 });
        }
    }

    #[test]
    fn greedy_is_deterministic_and_replay_matches_rollout() {
        let m = ism(small());
        let x = tokenize("57+68").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = m.run_episode(&x, Mode::Greedy, &mut rng).unwrap();
        let b = m
            .run_episode(&x, Mode::Greedy, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(
            a.steps.iter().map(|s| s.raw).collect::<Vec<_>>(),
            b.steps.iter().map(|s| s.raw).collect::<Vec<_>>()
        );
        for seed in 0..5 {
            let t = m
                .run_episode(&x, Mode::Sample, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            assert!(t.len() <= T_MAX);
            let mut g = Graph::new(m.store());
            let rep = m.replay(&mut g, &t).unwrap();
            for (s, (lp, ent, v)) in t.steps.iter().zip(rep) {
                assert!((g.scalar(lp) - s.log_prob).abs() < 1e-10);
                assert!((g.scalar(v) - s.value).abs() < 1e-10);
                let bound: f64 = 2f64.ln() + 6.0 * ((s.memory.len() + 1) as f64).ln();
                assert!(g.scalar(ent) >= 0.0 && g.scalar(ent) <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn replay_gradient_matches_finite_differences() {
        // wide init keeps gradients well above finite-difference noise
        let mut config = small();
        config.substrate.init_scale = 0.5;
        let m = ism(config);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = m
            .run_episode(&tokenize("4+5").unwrap(), Mode::Sample, &mut rng)
            .unwrap();
        let objective = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let rep = m.replay(&mut g, &t).unwrap();
            rep.iter()
                .map(|&(lp, ent, v)| g.scalar(lp) + 0.3 * g.scalar(ent) - 0.5 * g.scalar(v))
                .sum::<f64>()
        };
        let mut grads = Gradients::zeros_like(m.store());
        {
            let mut g = Graph::new(m.store());
            let rep = m.replay(&mut g, &t).unwrap();
            let seeds: Vec<_> = rep
                .iter()
                .flat_map(|&(lp, ent, v)| [(lp, vec![1.0]), (ent, vec![0.3]), (v, vec![-0.5])])
                .collect();
            g.backward(&seeds, &mut grads);
        }
        let mut store = m.store().clone();
        let mut worst = 0.0f64;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            // a few coordinates per array keeps this quick
            let n = store.param(id).len();
            for k in [0, n / 2, n - 1] {
                let orig = store.param(id).data[k];
                // round-off in the long replay swamps smaller steps
                store.data_mut(id)[k] = orig + 1e-4;
                let up = objective(&store);
                store.data_mut(id)[k] = orig - 1e-4;
                let down = objective(&store);
                store.data_mut(id)[k] = orig;
                let num = (up - down) / 2e-4;
                worst = worst.max(crate::nn::gradcheck::relative_error(grads.get(id)[k], num));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip_requires_same_registry() {
        let m = ism(small());
        let bytes = m.to_checkpoint().to_bytes().unwrap();
        let back = InteractiveSkillModule::from_checkpoint(
            Checkpoint::from_bytes(&bytes).unwrap(),
            m.registry().clone(),
        )
        .unwrap();
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
        let err = InteractiveSkillModule::from_checkpoint(
            Checkpoint::from_bytes(&bytes).unwrap(),
            SkillRegistry::new(),
        );
        assert!(matches!(err, Err(IsmError::Registry(_))));
    }

    #[test]
    fn raw_ends_are_lifted_to_starts() {
        let a = CompositeAction::from_raw([1, 3, 1, 2, 2, 4, 0]);
        assert_eq!(a.read1, Span::new(3, 3));
        assert_eq!(a.read2, Span::new(2, 2));
        assert_eq!(a.write, Span::new(4, 4));
    }
}
