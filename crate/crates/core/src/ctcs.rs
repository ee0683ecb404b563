//! Curriculum teacher and continual-learning student.
//!
//! The teacher orders tasks, draws hard samples more often
//! (`p_j ∝ exp(d_j / τ)` where `d_j` counts wrong answers on sample `j`) and
//! raises the entropy coefficient `α = min(β, γ·max_j d_j)` while the
//! student struggles. A mastered module is frozen and appended to the
//! registry that later tasks select from.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bsm::{enumerate_single_digit, BasicSkillModule, BsmConfig, BsmError};
use crate::expr::{generate_samples, BinOp, ExprError, OperandShape, Sample, TaskSpec};
use crate::ism::{InteractiveSkillModule, IsmConfig, IsmError};
use crate::nn::NnError;
use crate::ppo::{
    curve_tsv, greedy_accuracy, train_ism, CurvePoint, PpoError, Teacher, TrainConfig, TrainStatus,
};
use crate::skill::{Memoized, SkillModule, SkillRegistry};

#[derive(Debug, Error)]
pub enum CtcsError {
    #[error("sample index {index} out of range for pool of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("task {0} failed: budget exhausted without mastery")]
    TaskFailed(String),
    #[error("invalid curriculum: {0}")]
    InvalidCurriculum(String),
    #[error("curriculum file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Bsm(#[from] BsmError),
    #[error(transparent)]
    Ism(#[from] IsmError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherKnobs {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Samples drawn per round.
    pub n_c: usize,
    /// Consecutive correct answers required for basic modules.
    pub k_bsm: usize,
    /// Consecutive correct answers required for interactive modules.
    pub k_ism: usize,
    /// Sample pool size for generated tasks.
    pub pool_size: usize,
}

impl Default for TeacherKnobs {
    fn default() -> Self {
        TeacherKnobs {
            tau: 10.0,
            beta: 0.5,
            gamma: 0.01,
            n_c: 64,
            k_bsm: 500,
            k_ism: 200,
            pool_size: 1000,
        }
    }
}

/// Ablation switches. All off reproduces the full method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Draw pool samples uniformly.
    pub no_difficulty_sampling: bool,
    /// Hold α at `fixed_alpha`.
    pub no_parameter_adjustment: bool,
    pub fixed_alpha: f64,
    /// Train only the last task, against a registry holding just HALT.
    pub no_curriculum: bool,
}

/// `p_j = exp(d_j/τ) / Σ_k exp(d_k/τ)`, shifted by the maximum.
pub fn sample_probabilities(d: &[u64], tau: f64) -> Vec<f64> {
    let Some(&max) = d.iter().max() else {
        return Vec::new();
    };
    let w: Vec<f64> = d
        .iter()
        .map(|&x| ((x as f64 - max as f64) / tau).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `n` i.i.d. indices drawn from [`sample_probabilities`].
pub fn draw_batch<R: Rng + ?Sized>(d: &[u64], tau: f64, n: usize, rng: &mut R) -> Vec<usize> {
    let p = sample_probabilities(d, tau);
    let dist = WeightedIndex::new(&p).expect("non-empty pool with finite weights");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `α = min(β, γ·max_j d_j)`.
pub fn entropy_coefficient(d: &[u64], beta: f64, gamma: f64) -> f64 {
    let max = d.iter().copied().max().unwrap_or(0) as f64;
    beta.min(gamma * max)
}

/// Wrong-answer counts over one task's pool plus the current run of
/// consecutive correct answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DifficultyState {
    pub d: Vec<u64>,
    pub streak: usize,
}

impl DifficultyState {
    pub fn new(pool: usize) -> Self {
        DifficultyState {
            d: vec![0; pool],
            streak: 0,
        }
    }

    pub fn record_outcome(&mut self, index: usize, correct: bool) -> Result<(), CtcsError> {
        let len = self.d.len();
        let slot = self
            .d
            .get_mut(index)
            .ok_or(CtcsError::IndexOutOfRange { index, len })?;
        if correct {
            self.streak += 1;
        } else {
            *slot += 1;
            self.streak = 0;
        }
        Ok(())
    }

    pub fn mastery_check(&self, k: usize) -> bool {
        self.streak >= k
    }
}

/// Pool-backed teacher for one task.
#[derive(Clone, Debug)]
pub struct CtcsTeacher {
    pub pool: Vec<Sample>,
    pub state: DifficultyState,
    pub knobs: TeacherKnobs,
    pub ablation: Ablation,
    pub k: usize,
}

impl CtcsTeacher {
    pub fn new(pool: Vec<Sample>, knobs: TeacherKnobs, ablation: Ablation, k: usize) -> Self {
        let state = DifficultyState::new(pool.len());
        CtcsTeacher {
            pool,
            state,
            knobs,
            ablation,
            k,
        }
    }
}

impl Teacher for CtcsTeacher {
    fn draw(&mut self, n: usize, rng: &mut dyn RngCore) -> Vec<(usize, Sample)> {
        let idx = if self.ablation.no_difficulty_sampling {
            (0..n).map(|_| rng.gen_range(0..self.pool.len())).collect()
        } else {
            draw_batch(&self.state.d, self.knobs.tau, n, rng)
        };
        idx.into_iter().map(|j| (j, self.pool[j].clone())).collect()
    }

    fn alpha(&self) -> f64 {
        if self.ablation.no_parameter_adjustment {
            self.ablation.fixed_alpha
        } else {
            entropy_coefficient(&self.state.d, self.knobs.beta, self.knobs.gamma)
        }
    }

    fn record(&mut self, index: usize, correct: bool) {
        // indices come from our own draws
        self.state
            .record_outcome(index, correct)
            .expect("drawn index within pool");
    }

    fn mastered(&self) -> bool {
        self.state.mastery_check(self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Bsm,
    Ism,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTask {
    pub kind: ModuleKind,
    pub spec: TaskSpec,
    /// Overrides the teacher's pool size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    /// Overrides the episode budget of interactive tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_episodes: Option<usize>,
}

impl CurriculumTask {
    pub fn bsm(op: BinOp) -> Self {
        CurriculumTask {
            kind: ModuleKind::Bsm,
            spec: TaskSpec::binary(op, OperandShape::single(), OperandShape::single()),
            pool_size: None,
            budget_episodes: None,
        }
    }

    pub fn ism(spec: TaskSpec) -> Self {
        CurriculumTask {
            kind: ModuleKind::Ism,
            spec,
            pool_size: None,
            budget_episodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub tasks: Vec<CurriculumTask>,
}

/// Modules a learned task is expected to build on.
pub fn dependencies(task_id: &str) -> Vec<&'static str> {
    match task_id {
        "M+M" => vec!["S+S"],
        "M-M" => vec!["S-S"],
        "M*S" => vec!["S*S", "S+S"],
        "M*M" => vec!["M*S", "M+M"],
        "M/S" => vec!["S*S", "S-S"],
        "M/M" => vec!["M*S", "M-M"],
        id if id.starts_with("expr") => vec!["M+M", "M-M"],
        _ => Vec::new(),
    }
}

impl Curriculum {
    pub fn validate(&self) -> Result<(), CtcsError> {
        let mut seen: Vec<&str> = Vec::new();
        for t in &self.tasks {
            t.spec.validate()?;
            let id = t.spec.id.as_str();
            if seen.contains(&id) {
                return Err(CtcsError::InvalidCurriculum(format!(
                    "task {id} listed twice"
                )));
            }
            match t.kind {
                ModuleKind::Bsm
                    if !(t.spec.is_binary()
                        && t.spec.operand.is_single()
                        && t.spec.ops.len() == 1) =>
                {
                    return Err(CtcsError::InvalidCurriculum(format!(
                        "{id}: basic modules handle single-digit binary tasks"
                    )));
                }
                ModuleKind::Ism => {
                    if let Some(dep) = dependencies(id).into_iter().find(|d| !seen.contains(d)) {
                        return Err(CtcsError::InvalidCurriculum(format!(
                            "{id} needs {dep} earlier in the order"
                        )));
                    }
                }
                _ => {}
            }
            seen.push(id);
        }
        if self.tasks.is_empty() {
            return Err(CtcsError::InvalidCurriculum("no tasks".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, CtcsError> {
        let c: Curriculum = toml::from_str(text).map_err(|e| CtcsError::Format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String, CtcsError> {
        toml::to_string(self).map_err(|e| CtcsError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CtcsError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Twelve tasks from single-digit skills up to bracketed expressions.
    pub fn default_list() -> Self {
        use BinOp::*;
        let s = OperandShape::single();
        let m = OperandShape::multi(1, 3);
        let mut tasks = vec![
            CurriculumTask::bsm(Add),
            CurriculumTask::bsm(Mul),
            CurriculumTask::bsm(Sub),
        ];
        for (op, rhs) in [(Add, m), (Sub, m), (Mul, s), (Mul, m), (Div, s), (Div, m)] {
            tasks.push(CurriculumTask::ism(TaskSpec::binary(op, m, rhs)));
        }
        let expr = |ops: &[BinOp], parens| {
            TaskSpec::expression(ops, parens, OperandShape::multi(1, 2), [3, 10])
        };
        tasks.push(CurriculumTask::ism(expr(&[Add, Sub], false)));
        tasks.push(CurriculumTask::ism(expr(&[Add, Sub, Mul], false)));
        tasks.push(CurriculumTask::ism(expr(&[Add, Sub, Mul, Div], true)));
        Curriculum { tasks }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub bsm: BsmConfig,
    pub ism: IsmConfig,
    pub train: TrainConfig,
    pub knobs: TeacherKnobs,
    pub ablation: Ablation,
    /// Held-out samples scored after each interactive task.
    pub holdout: usize,
}

/// A trained, frozen module as it sits in the registry.
#[derive(Clone)]
pub enum TrainedModule {
    Basic(Arc<Memoized<BasicSkillModule>>),
    Interactive(Arc<Memoized<InteractiveSkillModule>>),
}

impl TrainedModule {
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>, NnError> {
        match self {
            TrainedModule::Basic(m) => m.inner().to_checkpoint().to_bytes(),
            TrainedModule::Interactive(m) => m.inner().to_checkpoint().to_bytes(),
        }
    }

    fn as_skill(&self) -> Arc<dyn SkillModule> {
        match self {
            TrainedModule::Basic(m) => m.clone(),
            TrainedModule::Interactive(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskLog {
    pub task: String,
    pub kind: ModuleKind,
    pub mastered: bool,
    /// Epochs for basic modules, episodes for interactive ones.
    pub work: usize,
    pub curve: Vec<CurvePoint>,
    /// Greedy accuracy on fresh held-out samples.
    pub holdout_accuracy: f64,
    /// Serialized checkpoint taken when the module was frozen.
    pub checkpoint: Vec<u8>,
}

pub struct CurriculumOutcome {
    pub registry: SkillRegistry,
    pub modules: Vec<TrainedModule>,
    pub logs: Vec<TaskLog>,
    /// First task that ran out of budget; later tasks were not attempted.
    pub failed: Option<String>,
}

impl CurriculumOutcome {
    pub fn ensure_complete(&self) -> Result<(), CtcsError> {
        match &self.failed {
            Some(t) => Err(CtcsError::TaskFailed(t.clone())),
            None => Ok(()),
        }
    }
}

fn checkpoint_path(dir: &Path, index: usize, task: &str) -> PathBuf {
    let safe: String = task
        .chars()
        .map(|c| match c {
            '+' => 'p',
            '-' => 'm',
            '*' => 'x',
            '/' => 'd',
            '(' | ')' => 'b',
            c => c,
        })
        .collect();
    dir.join(format!("{index:02}_{safe}"))
}

/// Trains every task in order. Each mastered module is frozen, memoized
/// and appended to the registry; nothing already in the registry is
/// touched again. When `out_dir` is given, checkpoints and learning curves
/// are written there as tasks finish.
pub fn run_curriculum<R: Rng>(
    curriculum: &Curriculum,
    config: &CurriculumConfig,
    rng: &mut R,
    out_dir: Option<&Path>,
    mut on_batch: impl FnMut(&str, &CurvePoint),
) -> Result<CurriculumOutcome, CtcsError> {
    let tasks: Vec<CurriculumTask> = if config.ablation.no_curriculum {
        let last = curriculum
            .tasks
            .last()
            .ok_or_else(|| CtcsError::InvalidCurriculum("no tasks".into()))?;
        last.spec.validate()?;
        vec![last.clone()]
    } else {
        curriculum.validate()?;
        curriculum.tasks.clone()
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut registry = SkillRegistry::new();
    let mut modules = Vec::new();
    let mut logs = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let id = task.spec.id.clone();
        log::info!(
            "task {} ({:?}) with registry {:?}",
            id,
            task.kind,
            registry.names()
        );
        let (module, log) = match task.kind {
            ModuleKind::Bsm => train_basic(task, config, rng)?,
            ModuleKind::Ism => {
                train_interactive(task, &registry, config, rng, |p| on_batch(&id, p))?
            }
        };
        if let Some(dir) = out_dir {
            let base = checkpoint_path(dir, i + 1, &id);
            fs::write(base.with_extension("ckpt"), &log.checkpoint)?;
            if !log.curve.is_empty() {
                fs::write(base.with_extension("tsv"), curve_tsv(&log.curve))?;
            }
        }
        let mastered = log.mastered;
        logs.push(log);
        if !mastered {
            return Ok(CurriculumOutcome {
                registry,
                modules,
                logs,
                failed: Some(id),
            });
        }
        registry.push(module.as_skill());
        modules.push(module);
    }
    Ok(CurriculumOutcome {
        registry,
        modules,
        logs,
        failed: None,
    })
}

fn train_basic<R: Rng>(
    task: &CurriculumTask,
    config: &CurriculumConfig,
    rng: &mut R,
) -> Result<(TrainedModule, TaskLog), CtcsError> {
    let op = task.spec.bin_ops()?[0];
    let data = enumerate_single_digit(op);
    let mut bsm =
        BasicSkillModule::new(&task.spec.id, config.bsm.l_io, config.bsm.substrate.clone())?;
    let metrics = bsm.train_supervised(&data, config.bsm.epochs, config.bsm.batch, rng)?;
    // the teacher's acceptance test: K consecutive correct difficulty-sampled answers
    let k = config.knobs.k_bsm;
    let mut teacher = CtcsTeacher::new(
        data.clone(),
        config.knobs.clone(),
        config.ablation.clone(),
        k,
    );
    while !teacher.mastered() {
        let drawn = teacher.draw(k.min(config.knobs.n_c.max(1)), rng);
        let mut wrong = false;
        for (j, s) in drawn {
            let ok = bsm.predict(&s.input).is_ok_and(|p| p == s.truth);
            teacher.record(j, ok);
            wrong |= !ok;
        }
        if wrong {
            break;
        }
    }
    let mastered = teacher.mastered();
    let correct = data
        .iter()
        .filter(|s| bsm.predict(&s.input).is_ok_and(|p| p == s.truth))
        .count();
    let checkpoint = bsm.to_checkpoint().to_bytes()?;
    let log = TaskLog {
        task: task.spec.id.clone(),
        kind: ModuleKind::Bsm,
        mastered,
        work: metrics.epochs.len(),
        curve: Vec::new(),
        holdout_accuracy: correct as f64 / data.len() as f64,
        checkpoint,
    };
    Ok((TrainedModule::Basic(Arc::new(Memoized::new(bsm))), log))
}

fn train_interactive<R: Rng>(
    task: &CurriculumTask,
    registry: &SkillRegistry,
    config: &CurriculumConfig,
    rng: &mut R,
    on_batch: impl FnMut(&CurvePoint),
) -> Result<(TrainedModule, TaskLog), CtcsError> {
    let pool = generate_samples(
        &task.spec,
        task.pool_size.unwrap_or(config.knobs.pool_size),
        rng,
    )?;
    let holdout = generate_samples(&task.spec, config.holdout, rng)?;
    let mut ism =
        InteractiveSkillModule::new(task.spec.clone(), registry.clone(), config.ism.clone())?;
    let mut teacher = CtcsTeacher::new(
        pool,
        config.knobs.clone(),
        config.ablation.clone(),
        config.knobs.k_ism,
    );
    let mut train = config.train.clone();
    train.batch_episodes = config.knobs.n_c;
    if let Some(b) = task.budget_episodes {
        train.budget_episodes = b;
    }
    // mastery is the teacher's call here; held-out data is only reported
    train.target_accuracy = None;
    let report = train_ism(&mut ism, &mut teacher, &[], &train, rng, on_batch)?;
    let holdout_accuracy = greedy_accuracy(&ism, &holdout)?;
    let checkpoint = ism.to_checkpoint().to_bytes()?;
    let log = TaskLog {
        task: task.spec.id.clone(),
        kind: ModuleKind::Ism,
        mastered: report.status == TrainStatus::Mastered,
        work: report.episodes,
        curve: report.curve,
        holdout_accuracy,
        checkpoint,
    };
    Ok((
        TrainedModule::Interactive(Arc::new(Memoized::new(ism))),
        log,
    ))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn probabilities_examples() {
        assert_eq!(sample_probabilities(&[0, 0, 0, 0], 10.0), vec![0.25; 4]);
        let p = sample_probabilities(&[10, 0], 10.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let flat = sample_probabilities(&[500, 0, 3], 1e12);
        assert!(flat.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-9));
        // huge counts do not overflow
        let big = sample_probabilities(&[100_000, 99_990], 10.0);
        assert!(big.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(entropy_coefficient(&[0, 0], 0.5, 0.01), 0.0);
        assert!((entropy_coefficient(&[3, 10], 0.5, 0.01) - 0.1).abs() < 1e-12);
        assert_eq!(entropy_coefficient(&[200], 0.5, 0.01), 0.5);
    }

    #[test]
    fn single_sample_pool_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(draw_batch(&[7], 10.0, 5, &mut rng), vec![0; 5]);
    }

    #[test]
    fn draws_are_seeded() {
        let d = [3, 0, 9, 1];
        let a = draw_batch(&d, 10.0, 50, &mut ChaCha8Rng::seed_from_u64(4));
        let b = draw_batch(&d, 10.0, 50, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn outcome_bookkeeping() {
        let mut s = DifficultyState::new(3);
        s.record_outcome(1, false).unwrap();
        s.record_outcome(1, false).unwrap();
        assert_eq!(s.d, vec![0, 2, 0]);
        s.record_outcome(2, true).unwrap();
        assert_eq!(s.d, vec![0, 2, 0]);
        assert_eq!(s.streak, 1);
        assert!(s.mastery_check(1));
        assert!(matches!(
            s.record_outcome(3, true),
            Err(CtcsError::IndexOutOfRange { index: 3, len: 3 })
        ));
        let mut s = DifficultyState::new(1);
        for _ in 0..499 {
            s.record_outcome(0, true).unwrap();
        }
        s.record_outcome(0, false).unwrap();
        assert_eq!(s.streak, 0);
        assert!(!s.mastery_check(500));
        for _ in 0..500 {
            s.record_outcome(0, true).unwrap();
        }
        assert!(s.mastery_check(500));
    }

    #[test]
    fn default_list_is_valid_and_round_trips() {
        let c = Curriculum::default_list();
        assert_eq!(c.tasks.len(), 12);
        c.validate().unwrap();
        let ids: Vec<_> = c.tasks.iter().map(|t| t.spec.id.as_str()).collect();
        assert_eq!(
            &ids[..9],
            ["S+S", "S*S", "S-S", "M+M", "M-M", "M*S", "M*M", "M/S", "M/M"]
        );
        assert_eq!(ids[11], "expr+-*/()");
        let text = c.to_toml().unwrap();
        assert_eq!(Curriculum::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn order_is_enforced() {
        let c = Curriculum {
            tasks: vec![CurriculumTask::ism(TaskSpec::binary(
                BinOp::Add,
                OperandShape::multi(1, 2),
                OperandShape::multi(1, 2),
            ))],
        };
        assert!(matches!(c.validate(), Err(CtcsError::InvalidCurriculum(_))));
    }

    #[test]
    fn ablations_change_teacher_behaviour() {
        let pool = vec![Sample::from_input("1+1".parse().unwrap()).unwrap(); 2];
        let mut t = CtcsTeacher::new(pool, TeacherKnobs::default(), Ablation::default(), 5);
        for _ in 0..30 {
            t.record(0, false);
        }
        assert!((t.alpha() - 0.3).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hard = t
            .draw(1000, &mut rng)
            .iter()
            .filter(|(j, _)| *j == 0)
            .count();
        assert!(hard > 900);
        t.ablation = Ablation {
            no_difficulty_sampling: true,
            no_parameter_adjustment: true,
            fixed_alpha: 0.05,
            ..Ablation::default()
        };
        assert_eq!(t.alpha(), 0.05);
        let hard = t
            .draw(1000, &mut rng)
            .iter()
            .filter(|(j, _)| *j == 0)
            .count();
        assert!((400..600).contains(&hard));
    }
}
