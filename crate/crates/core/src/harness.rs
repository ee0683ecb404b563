//! Run configuration, registries for evaluation, accuracy grids and traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bsm::{BasicSkillModule, BsmConfig, BsmError, CHECKPOINT_KIND as BSM_KIND};
use crate::ctcs::{Ablation, CtcsError, Curriculum, CurriculumConfig, TeacherKnobs};
use crate::expr::{
    generate_samples, tokenize, BinOp, ExprError, OperandShape, Sample, TaskSpec, TokenSeq,
};
use crate::ism::scripted::ScriptedSkill;
use crate::ism::{
    InteractiveSkillModule, IsmConfig, IsmError, Mode, Trajectory, CHECKPOINT_KIND as ISM_KIND,
};
use crate::nn::{Checkpoint, NnError};
use crate::ppo::{episode_reward, TrainConfig};
use crate::skill::{Memoized, OracleSkill, SkillModule, SkillRegistry};

/// Overrides `output_dir` from the config file when set.
pub const OUTPUT_DIR_ENV: &str = "SKILLCALC_OUTPUT_DIR";

/// Eval streams never overlap training, which uses stream 0.
const EVAL_STREAM_BASE: u64 = 1 << 32;

/// Published reference accuracies for the full expression task, reported
/// next to measured grids; not pass/fail targets.
pub const REFERENCE_TARGETS: [(&str, usize, f64); 2] =
    [("expr+-*/()", 10, 1.0), ("expr+-*/()", 20, 0.78)];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no module {0} in the registry")]
    MissingModule(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot trace {0}: not an interactive module")]
    NotTraceable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Ctcs(#[from] CtcsError),
    #[error(transparent)]
    Ism(#[from] IsmError),
    #[error(transparent)]
    Bsm(#[from] BsmError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Curriculum file; the built-in twelve-task list when absent.
    pub curriculum: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub bsm: BsmConfig,
    pub ism: IsmConfig,
    pub train: TrainConfig,
    pub knobs: TeacherKnobs,
    pub ablation: Ablation,
    pub holdout: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            curriculum: None,
            output_dir: PathBuf::from("runs/default"),
            bsm: BsmConfig::default(),
            ism: IsmConfig::default(),
            train: TrainConfig::default(),
            knobs: TeacherKnobs::default(),
            ablation: Ablation::default(),
            holdout: 200,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; a relative curriculum path is taken relative
    /// to the config file.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut c = Self::from_toml(&fs::read_to_string(path)?)?;
        if let (Some(cur), Some(dir)) = (&c.curriculum, path.parent()) {
            if cur.is_relative() {
                c.curriculum = Some(dir.join(cur));
            }
        }
        if let Some(cur) = &c.curriculum {
            if !cur.exists() {
                return Err(HarnessError::Config(format!(
                    "curriculum {} does not exist",
                    cur.display()
                )));
            }
        }
        Ok(c)
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn load_curriculum(&self) -> Result<Curriculum, HarnessError> {
        Ok(match &self.curriculum {
            Some(p) => Curriculum::load(p)?,
            None => Curriculum::default_list(),
        })
    }

    pub fn curriculum_config(&self) -> CurriculumConfig {
        CurriculumConfig {
            bsm: self.bsm.clone(),
            ism: self.ism.clone(),
            train: self.train.clone(),
            knobs: self.knobs.clone(),
            ablation: self.ablation.clone(),
            holdout: self.holdout,
        }
    }
}

fn single(op: BinOp) -> Arc<dyn SkillModule> {
    Arc::new(OracleSkill::new(TaskSpec::binary(
        op,
        OperandShape::single(),
        OperandShape::single(),
    )))
}

/// Exact single-digit skills, scripted `M+M`, `M*S` and expression
/// policies, and exact wide `M-M`, `M*M`, `M/M` for the expression script
/// to call. Everything is memoized.
pub fn scripted_registry() -> Result<SkillRegistry, HarnessError> {
    let wide = OperandShape::multi(1, 40);
    let mut r = SkillRegistry::new();
    for op in [BinOp::Add, BinOp::Mul, BinOp::Sub] {
        r.push(single(op));
    }
    let config = IsmConfig::default();
    r.push(Arc::new(Memoized::new(ScriptedSkill::new(
        "M+M",
        r.clone(),
        config.clone(),
    )?)));
    r.push(Arc::new(Memoized::new(OracleSkill::new(TaskSpec::binary(
        BinOp::Sub,
        wide,
        wide,
    )))));
    r.push(Arc::new(Memoized::new(ScriptedSkill::new(
        "M*S",
        r.clone(),
        config.clone(),
    )?)));
    for op in [BinOp::Mul, BinOp::Div] {
        r.push(Arc::new(Memoized::new(OracleSkill::new(TaskSpec::binary(
            op, wide, wide,
        )))));
    }
    for id in ["expr+-", "expr+-*", "expr+-*/()"] {
        let s = ScriptedSkill::new(id, r.clone(), config.clone())?;
        r.push(Arc::new(Memoized::new(s)));
    }
    Ok(r)
}

/// Checkpoints in a run directory, in training order.
pub fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Rebuilds the registry a run produced, module by module.
pub fn load_registry(dir: &Path) -> Result<SkillRegistry, HarnessError> {
    let mut r = SkillRegistry::new();
    for f in checkpoint_files(dir)? {
        let ck = Checkpoint::load(&f)?;
        let m: Arc<dyn SkillModule> = match ck.kind.as_str() {
            BSM_KIND => Arc::new(Memoized::new(BasicSkillModule::from_checkpoint(ck)?)),
            ISM_KIND => Arc::new(Memoized::new(InteractiveSkillModule::from_checkpoint(
                ck,
                r.clone(),
            )?)),
            other => {
                return Err(NnError::Format(format!(
                    "{}: unknown checkpoint kind {other}",
                    f.display()
                ))
                .into())
            }
        };
        r.push(m);
    }
    Ok(r)
}

/// Loads the interactive module stored for `task` in a run directory,
/// against the registry that preceded it.
pub fn load_interactive(dir: &Path, task: &str) -> Result<InteractiveSkillModule, HarnessError> {
    let mut r = SkillRegistry::new();
    for f in checkpoint_files(dir)? {
        let ck = Checkpoint::load(&f)?;
        if ck.tag == task && ck.kind == ISM_KIND {
            return Ok(InteractiveSkillModule::from_checkpoint(ck, r)?);
        }
        let m: Arc<dyn SkillModule> = match ck.kind.as_str() {
            BSM_KIND => Arc::new(Memoized::new(BasicSkillModule::from_checkpoint(ck)?)),
            _ => Arc::new(Memoized::new(InteractiveSkillModule::from_checkpoint(
                ck,
                r.clone(),
            )?)),
        };
        r.push(m);
    }
    Err(HarnessError::MissingModule(task.into()))
}

/// Spec used to generate evaluation inputs of exactly `length` tokens for
/// a registry task id. `None` when the task has no inputs of that length.
pub fn eval_spec(task_id: &str, length: usize) -> Option<TaskSpec> {
    let chars: Vec<char> = task_id.chars().collect();
    if let [a, op, b] = chars[..] {
        let op = BinOp::from_symbol(op)?;
        let span = |c: char| match c {
            'S' => Some((1, 1)),
            'M' => Some((1, length.saturating_sub(2).max(1))),
            _ => None,
        };
        let ((alo, ahi), (blo, bhi)) = (span(a)?, span(b)?);
        if length < alo + blo + 1 || length > ahi + bhi + 1 {
            return None;
        }
        let spec = TaskSpec::binary(
            op,
            OperandShape::multi(alo, ahi),
            OperandShape::multi(blo, bhi),
        );
        return Some(spec.with_id(task_id).with_length([length, length]));
    }
    let rest = task_id.strip_prefix("expr")?;
    let parens = rest.contains("()");
    let ops: Vec<BinOp> = rest.chars().filter_map(BinOp::from_symbol).collect();
    if ops.is_empty() || length < 3 {
        return None;
    }
    Some(
        TaskSpec::expression(&ops, parens, OperandShape::multi(1, 2), [length, length])
            .with_id(task_id),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalCell {
    pub task: String,
    pub length: usize,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n: usize,
    pub tasks: Vec<String>,
    pub lengths: Vec<usize>,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, task: &str, length: usize) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.task == task && c.length == length)
    }

    /// Accuracy grid, tasks by lengths, followed by reference targets.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# seed={} n={}\n", self.seed, self.n);
        out.push_str("task");
        for l in &self.lengths {
            let _ = write!(out, "\tlen{l}");
        }
        out.push('\n');
        for t in &self.tasks {
            out.push_str(t);
            for &l in &self.lengths {
                match self.cell(t, l) {
                    Some(c) => {
                        let _ = write!(out, "\t{:.4}", c.accuracy);
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        for (task, len, target) in REFERENCE_TARGETS {
            let _ = writeln!(out, "# reference\t{task}\tlen{len}\t{target:.2}");
        }
        out
    }

    pub fn min_accuracy(&self) -> Option<f64> {
        self.cells.iter().map(|c| c.accuracy).reduce(f64::min)
    }
}

/// Greedy exact-match accuracy per task and length on freshly generated
/// inputs. Cells with no possible input of that length are left out.
pub fn evaluate(
    registry: &SkillRegistry,
    tasks: &[String],
    lengths: &[usize],
    n: usize,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    let mut cells = Vec::new();
    for (ti, task) in tasks.iter().enumerate() {
        let idx = registry
            .index_of(task)
            .ok_or_else(|| HarnessError::MissingModule(task.clone()))?;
        let module = registry.get(idx).expect("index from registry");
        for (li, &length) in lengths.iter().enumerate() {
            let Some(spec) = eval_spec(task, length) else {
                continue;
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(EVAL_STREAM_BASE + (ti * lengths.len() + li) as u64);
            let samples = match generate_samples(&spec, n, &mut rng) {
                Ok(s) => s,
                Err(ExprError::GenerationExhausted(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let correct = samples
                .iter()
                .filter(|s| module.invoke(&s.input).is_ok_and(|out| out == s.truth))
                .count();
            cells.push(EvalCell {
                task: task.clone(),
                length,
                samples: samples.len(),
                correct,
                accuracy: correct as f64 / samples.len().max(1) as f64,
            });
        }
    }
    Ok(EvalReport {
        seed,
        n,
        tasks: tasks.to_vec(),
        lengths: lengths.to_vec(),
        cells,
    })
}

/// A module that can be stepped through.
#[allow(clippy::large_enum_variant)]
pub enum Tracer {
    Scripted(ScriptedSkill),
    Learned(InteractiveSkillModule),
}

impl Tracer {
    pub fn registry(&self) -> &SkillRegistry {
        match self {
            Tracer::Scripted(s) => s.registry(),
            Tracer::Learned(m) => m.registry(),
        }
    }

    pub fn run(&self, input: &[crate::expr::Token]) -> Result<Trajectory, HarnessError> {
        Ok(match self {
            Tracer::Scripted(s) => s.run(input)?,
            Tracer::Learned(m) => m.run_episode(
                input,
                Mode::Greedy,
                &mut rand::rngs::mock::StepRng::new(0, 0),
            )?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    pub steps: Vec<String>,
    pub answer: TokenSeq,
    pub truth: TokenSeq,
    pub matched: bool,
    pub reward: f64,
}

impl TraceReport {
    /// One line per step plus a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.steps {
            out.push_str(l);
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "answer={} truth={} match={} reward={:.4}",
            self.answer, self.truth, self.matched, self.reward
        );
        out
    }
}

pub fn trace(tracer: &Tracer, expression: &str) -> Result<TraceReport, HarnessError> {
    let input = tokenize(expression)?;
    let Sample { truth, .. } = Sample::from_input(input.clone())?;
    let traj = tracer.run(&input)?;
    let reward = episode_reward(&traj, &truth);
    Ok(TraceReport {
        steps: traj.trace(tracer.registry()),
        answer: traj.output.clone(),
        matched: reward == 1.0,
        truth,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_tables_may_be_partial() {
        let c = RunConfig::from_toml(
            "[bsm]\nepochs = 50\n[ism]\nt_max = 12\n[ism.substrate]\nhidden = 20\n[train]\nbudget_episodes = 9\n",
        )
        .unwrap();
        assert_eq!(c.bsm.epochs, 50);
        assert_eq!(c.bsm.l_io, BsmConfig::default().l_io);
        assert_eq!((c.ism.t_max, c.ism.l_max), (12, IsmConfig::default().l_max));
        assert_eq!(c.ism.substrate.hidden, 20);
        assert_eq!(c.ism.substrate.learning_rate, 1e-3);
        assert_eq!(c.train.budget_episodes, 9);
    }

    #[test]
    fn config_round_trips_and_env_overrides() {
        let c = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::from_toml("seed = 4\n[ablation]\nno_curriculum = true\n").unwrap();
        assert_eq!(partial.seed, 4);
        assert!(partial.ablation.no_curriculum);
        assert_eq!(partial.knobs.tau, 10.0);
    }

    #[test]
    fn eval_specs_hit_exact_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (id, len) in [
            ("M+M", 5),
            ("M*S", 5),
            ("M*M", 10),
            ("S+S", 3),
            ("expr+-*/()", 10),
            ("expr+-", 20),
        ] {
            let spec = eval_spec(id, len).unwrap();
            for s in generate_samples(&spec, 20, &mut rng).unwrap() {
                assert_eq!(s.input.len(), len, "{id}");
            }
        }
        assert!(eval_spec("S+S", 5).is_none());
        assert!(eval_spec("HALT", 5).is_none());
    }

    #[test]
    fn scripted_registry_scores_perfectly() {
        let r = scripted_registry().unwrap();
        let tasks: Vec<String> = ["M+M", "M*S", "expr+-*/()"].map(String::from).to_vec();
        let report = evaluate(&r, &tasks, &[5, 10], 30, 1).unwrap();
        assert_eq!(report.cells.len(), 6);
        assert_eq!(report.min_accuracy(), Some(1.0));
        let tsv = report.to_tsv();
        assert!(tsv.lines().nth(1).unwrap().starts_with("task\tlen5\tlen10"));
        assert!(tsv.contains("# reference\texpr+-*/()\tlen20\t0.78"));
        assert!(matches!(
            evaluate(&r, &["Q".into()], &[5], 1, 1),
            Err(HarnessError::MissingModule(_))
        ));
    }

    #[test]
    fn eval_is_seeded() {
        let r = scripted_registry().unwrap();
        let tasks = vec!["M+M".to_string()];
        assert_eq!(
            evaluate(&r, &tasks, &[6], 10, 5).unwrap(),
            evaluate(&r, &tasks, &[6], 10, 5).unwrap()
        );
    }

    #[test]
    fn trace_of_scripted_expression() {
        let r = scripted_registry().unwrap();
        let tracer =
            Tracer::Scripted(ScriptedSkill::new("expr+-*/()", r, IsmConfig::default()).unwrap());
        let t = trace(&tracer, "(3+5)*2").unwrap();
        assert_eq!(t.answer.to_string(), "16");
        assert!(t.matched);
        let text = t.render();
        assert!(text.lines().count() <= crate::ism::T_MAX + 1);
        assert!(text.ends_with("match=true reward=1.0000\n"));
    }
}
