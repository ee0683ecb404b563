//! Rewards, discounted returns and the clipped PPO update for interactive
//! skill modules, plus the training loop driven by a teacher.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{generate_sample, ExprError, Sample, Token, TokenSeq};
use crate::ism::{EpisodeStatus, InteractiveSkillModule, IsmConfig, IsmError, Mode, Trajectory};
use crate::nn::{Gradients, Graph, NnError, StoreSnapshot};
use crate::skill::{SkillError, SkillKind, SkillModule, SkillRegistry};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("budget of {budget} episodes exhausted without mastery (best greedy accuracy {best_accuracy:.3})")]
    BudgetExhausted { budget: usize, best_accuracy: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid RL config: {0}")]
    Config(String),
    #[error(transparent)]
    Ism(#[from] IsmError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub discount: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Trajectories per Adam step.
    pub minibatch: usize,
    pub value_weight: f64,
    /// Global gradient-norm cap; 0 disables it.
    pub max_grad_norm: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            discount: 0.99,
            clip: 0.2,
            epochs: 4,
            minibatch: 16,
            value_weight: 0.5,
            max_grad_norm: 0.0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.into()));
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be positive");
        }
        if self.value_weight < 0.0 || self.max_grad_norm < 0.0 {
            return bad("weights must be non-negative");
        }
        Ok(())
    }
}

/// `+1` on an exact match, otherwise minus the length-normalised edit
/// distance, floored at `-1`.
pub fn compute_reward(output: &[Token], truth: &[Token]) -> f64 {
    if output == truth {
        return 1.0;
    }
    let d = strsim::generic_levenshtein(&output.to_vec(), &truth.to_vec()) as f64;
    -(d / truth.len().max(1) as f64).min(1.0)
}

/// Episodes that never halted earn the failure reward.
pub fn episode_reward(traj: &Trajectory, truth: &[Token]) -> f64 {
    match traj.status {
        EpisodeStatus::Halted => compute_reward(&traj.output, truth),
        _ => -1.0,
    }
}

/// `G_t = discount^(T-t) * reward` for `t = 1..=T`.
pub fn discounted_returns(len: usize, reward: f64, discount: f64) -> Vec<f64> {
    (0..len)
        .map(|i| discount.powi((len - 1 - i) as i32) * reward)
        .collect()
}

/// Scales to zero mean and unit variance; the deviation is floored at 1e-8.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    for x in xs {
        *x = (*x - mean) / sd;
    }
}

/// Completed trajectories with per-step returns and normalised advantages.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub returns: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
}

impl RolloutBatch {
    /// Rewards must already be set on each trajectory.
    pub fn new(trajectories: Vec<Trajectory>, discount: f64) -> Self {
        let returns: Vec<Vec<f64>> = trajectories
            .iter()
            .map(|t| discounted_returns(t.len(), t.reward, discount))
            .collect();
        let mut flat: Vec<f64> = trajectories
            .iter()
            .zip(&returns)
            .flat_map(|(t, g)| t.steps.iter().zip(g).map(|(s, g)| g - s.value))
            .collect();
        normalize(&mut flat);
        let mut it = flat.into_iter();
        let advantages = trajectories
            .iter()
            .map(|t| it.by_ref().take(t.len()).collect())
            .collect();
        RolloutBatch {
            trajectories,
            returns,
            advantages,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.trajectories.iter().map(|t| t.reward).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Per-step means over the steps that entered one gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
}

/// Loss and its gradient over the trajectories in `subset`. The loss is the
/// negated objective: `-(clipped surrogate) - alpha*H + value_weight*(V-G)^2`.
pub fn loss_gradient(
    ism: &InteractiveSkillModule,
    batch: &RolloutBatch,
    subset: &[usize],
    alpha: f64,
    config: &RlConfig,
) -> Result<(Gradients, LossParts), PpoError> {
    let steps: usize = subset.iter().map(|&i| batch.trajectories[i].len()).sum();
    if steps == 0 {
        return Err(PpoError::EmptyBatch);
    }
    let n = steps as f64;
    let mut grads = Gradients::zeros_like(ism.store());
    let mut parts = LossParts::default();
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    for &i in subset {
        let traj = &batch.trajectories[i];
        let mut g = Graph::new(ism.store());
        let nodes = ism.replay(&mut g, traj)?;
        let mut seeds = Vec::with_capacity(3 * nodes.len());
        for (k, &(lp, ent, v)) in nodes.iter().enumerate() {
            let adv = batch.advantages[i][k];
            let ret = batch.returns[i][k];
            let ratio = (g.scalar(lp) - traj.steps[k].log_prob).exp();
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(lo, hi) * adv;
            let surrogate = unclipped.min(clipped);
            let active = unclipped <= clipped;
            if !active {
                parts.clip_fraction += 1.0;
            }
            let h = g.scalar(ent);
            let value = g.scalar(v);
            parts.surrogate += surrogate;
            parts.entropy += h;
            parts.value += (value - ret).powi(2);
            // d(ratio)/d(lp) = ratio
            let d_lp = if active { -unclipped / n } else { 0.0 };
            seeds.push((lp, vec![d_lp]));
            seeds.push((ent, vec![-alpha / n]));
            seeds.push((v, vec![2.0 * config.value_weight * (value - ret) / n]));
        }
        g.backward(&seeds, &mut grads);
    }
    parts.surrogate /= n;
    parts.entropy /= n;
    parts.value /= n;
    parts.clip_fraction /= n;
    parts.total = -parts.surrogate - alpha * parts.entropy + config.value_weight * parts.value;
    if !parts.total.is_finite() || !grads.is_finite() {
        return Err(PpoError::NonFiniteLoss(format!(
            "surrogate {} value {} entropy {} over {steps} steps",
            parts.surrogate, parts.value, parts.entropy
        )));
    }
    Ok((grads, parts))
}

/// Several epochs of shuffled minibatch Adam steps. Returns the mean loss
/// parts of the first minibatch pass and of the whole update.
pub fn ppo_update<R: Rng + ?Sized>(
    ism: &mut InteractiveSkillModule,
    batch: &RolloutBatch,
    alpha: f64,
    config: &RlConfig,
    rng: &mut R,
) -> Result<LossParts, PpoError> {
    if batch.steps() == 0 {
        return Err(PpoError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut sum = LossParts::default();
    let mut count = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            if chunk.iter().all(|&i| batch.trajectories[i].is_empty()) {
                continue;
            }
            let (mut grads, parts) = loss_gradient(ism, batch, chunk, alpha, config)?;
            if config.max_grad_norm > 0.0 {
                grads.clip_norm(config.max_grad_norm);
            }
            ism.store_mut().adam_step(&grads)?;
            sum.surrogate += parts.surrogate;
            sum.value += parts.value;
            sum.entropy += parts.entropy;
            sum.total += parts.total;
            sum.clip_fraction += parts.clip_fraction;
            count += 1.0;
        }
    }
    Ok(LossParts {
        surrogate: sum.surrogate / count,
        value: sum.value / count,
        entropy: sum.entropy / count,
        total: sum.total / count,
        clip_fraction: sum.clip_fraction / count,
    })
}

/// Greedy exact-match rate; an episode counts only if it halts.
pub fn greedy_accuracy(ism: &InteractiveSkillModule, samples: &[Sample]) -> Result<f64, PpoError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut hits = 0usize;
    for s in samples {
        let t = ism.run_episode(&s.input, Mode::Greedy, &mut rng)?;
        if t.status == EpisodeStatus::Halted && t.output == s.truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// What the training loop asks of a curriculum teacher.
pub trait Teacher {
    /// Indices into the teacher's pool together with the samples.
    fn draw(&mut self, n: usize, rng: &mut dyn RngCore) -> Vec<(usize, Sample)>;
    /// Entropy coefficient for the next update.
    fn alpha(&self) -> f64;
    /// Greedy outcome on pool sample `index`.
    fn record(&mut self, index: usize, correct: bool);
    fn mastered(&self) -> bool;
}

/// Uniform draws from a fixed pool with a constant entropy coefficient and
/// mastery after `window` consecutive correct answers.
#[derive(Clone, Debug)]
pub struct UniformTeacher {
    pub pool: Vec<Sample>,
    pub alpha: f64,
    pub window: usize,
    streak: usize,
}

impl UniformTeacher {
    pub fn new(pool: Vec<Sample>, alpha: f64, window: usize) -> Self {
        UniformTeacher {
            pool,
            alpha,
            window,
            streak: 0,
        }
    }
}

impl Teacher for UniformTeacher {
    fn draw(&mut self, n: usize, rng: &mut dyn RngCore) -> Vec<(usize, Sample)> {
        (0..n)
            .map(|_| {
                let j = rng.gen_range(0..self.pool.len());
                (j, self.pool[j].clone())
            })
            .collect()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn record(&mut self, _index: usize, correct: bool) {
        self.streak = if correct { self.streak + 1 } else { 0 };
    }

    fn mastered(&self) -> bool {
        self.streak >= self.window
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rl: RlConfig,
    /// Sampled episodes per PPO batch.
    pub batch_episodes: usize,
    /// Episode budget, counting sampled training episodes only.
    pub budget_episodes: usize,
    /// Fresh samples scored greedily after every batch.
    pub eval_samples: usize,
    /// Stop once greedy accuracy on the held-out set reaches this value.
    pub target_accuracy: Option<f64>,
    /// Batches between held-out evaluations.
    pub holdout_every: usize,
    /// Wall-clock limit in seconds; 0 means none.
    pub max_seconds: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rl: RlConfig::default(),
            batch_episodes: 64,
            budget_episodes: 200_000,
            eval_samples: 32,
            target_accuracy: None,
            holdout_every: 10,
            max_seconds: 0.0,
        }
    }
}

/// One learning-curve row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub batch: usize,
    pub episodes: usize,
    pub greedy_acc: f64,
    pub mean_reward: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub loss: f64,
    pub elapsed_s: f64,
    /// Mean sampled episode length.
    pub mean_steps: f64,
}

pub const CURVE_HEADER: &str =
    "batch\tepisodes\tgreedy_acc\tmean_reward\tentropy\talpha\tloss\telapsed_s\tmean_steps";

impl CurvePoint {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{:.2}\t{:.2}",
            self.batch,
            self.episodes,
            self.greedy_acc,
            self.mean_reward,
            self.entropy,
            self.alpha,
            self.loss,
            self.elapsed_s,
            self.mean_steps
        )
    }
}

pub fn curve_tsv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in curve {
        out.push_str(&p.tsv());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrainStatus {
    /// The teacher reported mastery.
    Mastered,
    /// Held-out accuracy reached the configured target.
    TargetReached,
    /// Episode or time budget spent; the best parameters seen were restored.
    BudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub status: TrainStatus,
    pub episodes: usize,
    pub curve: Vec<CurvePoint>,
    /// Held-out accuracy history as `(episodes, accuracy)`.
    pub holdout: Vec<(usize, f64)>,
    pub best_accuracy: f64,
}

impl TrainReport {
    pub fn succeeded(&self) -> bool {
        self.status != TrainStatus::BudgetExhausted
    }

    pub fn ensure_success(&self, budget: usize) -> Result<(), PpoError> {
        if self.succeeded() {
            Ok(())
        } else {
            Err(PpoError::BudgetExhausted {
                budget,
                best_accuracy: self.best_accuracy,
            })
        }
    }
}

/// Trains `ism` until the teacher reports mastery, the held-out target is
/// met, or the episode budget runs out. In the last case the parameters
/// with the best greedy accuracy seen are restored.
pub fn train_ism<R: Rng>(
    ism: &mut InteractiveSkillModule,
    teacher: &mut dyn Teacher,
    holdout: &[Sample],
    config: &TrainConfig,
    rng: &mut R,
    mut on_batch: impl FnMut(&CurvePoint),
) -> Result<TrainReport, PpoError> {
    config.rl.validate()?;
    if config.batch_episodes == 0 {
        return Err(PpoError::Config("batch_episodes must be positive".into()));
    }
    let started = Instant::now();
    let task = ism.task().clone();
    let mut curve = Vec::new();
    let mut holdout_log = Vec::new();
    let mut best: Option<(f64, StoreSnapshot)> = None;
    let mut episodes = 0;
    let mut greedy_rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut status = TrainStatus::BudgetExhausted;
    while episodes < config.budget_episodes {
        let n = config.batch_episodes.min(config.budget_episodes - episodes);
        let drawn = teacher.draw(n, rng);
        let mut trajectories = Vec::with_capacity(n);
        for (j, sample) in &drawn {
            let mut t = ism.run_episode(&sample.input, Mode::Sample, rng)?;
            t.reward = episode_reward(&t, &sample.truth);
            trajectories.push(t);
            let greedy = ism.run_episode(&sample.input, Mode::Greedy, &mut greedy_rng)?;
            teacher.record(
                *j,
                greedy.status == EpisodeStatus::Halted && greedy.output == sample.truth,
            );
        }
        episodes += n;
        let alpha = teacher.alpha();
        let batch = RolloutBatch::new(trajectories, config.rl.discount);
        let parts = ppo_update(ism, &batch, alpha, &config.rl, rng)?;

        let fresh: Vec<Sample> = (0..config.eval_samples)
            .map(|_| generate_sample(&task, rng))
            .collect::<Result<_, _>>()?;
        let greedy_acc = greedy_accuracy(ism, &fresh)?;
        let point = CurvePoint {
            batch: curve.len() + 1,
            episodes,
            greedy_acc,
            mean_reward: batch.mean_reward(),
            entropy: parts.entropy,
            alpha,
            loss: parts.total,
            elapsed_s: started.elapsed().as_secs_f64(),
            mean_steps: batch.steps() as f64 / batch.len() as f64,
        };
        on_batch(&point);
        curve.push(point);

        let check_holdout = !holdout.is_empty() && (curve.len() % config.holdout_every.max(1) == 0);
        let score = if check_holdout {
            let acc = greedy_accuracy(ism, holdout)?;
            holdout_log.push((episodes, acc));
            Some(acc)
        } else if holdout.is_empty() {
            Some(greedy_acc)
        } else {
            None
        };
        if let Some(acc) = score {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, ism.store().snapshot()));
            }
            if check_holdout && config.target_accuracy.is_some_and(|t| acc >= t) {
                status = TrainStatus::TargetReached;
                break;
            }
        }
        if teacher.mastered() {
            status = TrainStatus::Mastered;
            break;
        }
        if config.max_seconds > 0.0 && started.elapsed().as_secs_f64() >= config.max_seconds {
            break;
        }
    }
    let best_accuracy = best.as_ref().map_or(0.0, |(a, _)| *a);
    if status == TrainStatus::BudgetExhausted {
        if let Some((_, snap)) = best {
            *ism.store_mut() = crate::nn::ParamStore::from_snapshot(snap)?;
        }
    }
    Ok(TrainReport {
        status,
        episodes,
        curve,
        holdout: holdout_log,
        best_accuracy,
    })
}

/// Returns its input unchanged. The rewarded arm of the bandit check.
#[derive(Debug, Default)]
pub struct Echo;

impl SkillModule for Echo {
    fn name(&self) -> &str {
        "ECHO"
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Oracle
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        Ok(TokenSeq::from_tokens(input.to_vec()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BanditReport {
    pub episodes: usize,
    /// Share of greedy evaluation episodes whose first pick is `ECHO`.
    pub greedy_rate: f64,
    /// Greedy rate after every update, as `(episodes, rate)`.
    pub history: Vec<(usize, f64)>,
}

/// Two-armed module-selection bandit over the registry `[HALT, ECHO]`.
/// Episodes last one step; picking `ECHO` pays `+1`, `HALT` pays `-1`.
pub fn run_bandit<R: Rng>(
    config: IsmConfig,
    rl: &RlConfig,
    batch_episodes: usize,
    budget: usize,
    eval_episodes: usize,
    rng: &mut R,
) -> Result<BanditReport, PpoError> {
    rl.validate()?;
    let mut registry = SkillRegistry::new();
    registry.push(Arc::new(Echo));
    let task = crate::expr::TaskSpec::binary(
        crate::expr::BinOp::Add,
        crate::expr::OperandShape::single(),
        crate::expr::OperandShape::single(),
    )
    .with_id("bandit");
    let config = IsmConfig { t_max: 1, ..config };
    let mut ism = InteractiveSkillModule::new(task, registry, config)?;
    let input = |rng: &mut R| vec![Token::digit(rng.gen_range(0..10))];
    let eval = |ism: &InteractiveSkillModule, rng: &mut R| -> Result<f64, PpoError> {
        let mut greedy = rand::rngs::mock::StepRng::new(0, 0);
        let mut hits = 0;
        for _ in 0..eval_episodes {
            let t = ism.run_episode(&input(rng), Mode::Greedy, &mut greedy)?;
            hits += usize::from(t.steps[0].action.module == 1);
        }
        Ok(hits as f64 / eval_episodes.max(1) as f64)
    };
    let mut episodes = 0;
    let mut history = Vec::new();
    while episodes < budget {
        let n = batch_episodes.min(budget - episodes);
        let mut trajs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut t = ism.run_episode(&input(rng), Mode::Sample, rng)?;
            t.reward = if t.steps[0].action.module == 1 {
                1.0
            } else {
                -1.0
            };
            trajs.push(t);
        }
        episodes += n;
        let batch = RolloutBatch::new(trajs, rl.discount);
        ppo_update(&mut ism, &batch, 0.0, rl, rng)?;
        history.push((episodes, eval(&ism, rng)?));
    }
    let greedy_rate = eval(&ism, rng)?;
    Ok(BanditReport {
        episodes,
        greedy_rate,
        history,
    })
}
