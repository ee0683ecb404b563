//! Hand-written policies that drive the machine with registry modules only.
//! They pin down the action semantics independently of any learning.
//!
//! `M+M` and `M*S` follow the schoolbook layout: column results are written
//! into place as "cells" (a cell may temporarily hold two digits), then
//! carries are pushed leftwards one adjacent pair at a time with `S+S`.
//! Expressions reduce one innermost literal-pair node per step.

use std::collections::VecDeque;
use std::sync::Arc;

use super::{CompositeAction, Decision, IsmConfig, IsmError, Memory, Span, Trajectory};
use crate::expr::{self, parse_answer, BinOp, Expr, Token, TokenSeq};
use crate::skill::{SkillError, SkillKind, SkillModule, SkillRegistry};

/// Chooses the next action from the current memory.
pub trait Script: Send {
    fn next_action(&mut self, memory: &Memory) -> Result<CompositeAction, IsmError>;
}

/// Builds the scripted policy for `task_id` against `registry`.
pub fn scripted_policy(
    task_id: &str,
    registry: &SkillRegistry,
) -> Result<Box<dyn Script>, IsmError> {
    let need = |name: &str| {
        registry
            .index_of(name)
            .ok_or_else(|| IsmError::Registry(format!("{task_id} needs {name} in the registry")))
    };
    match task_id {
        "M+M" => Ok(Box::new(PlannedScript::new(Kind::Add {
            add: need("S+S")?,
        }))),
        "M*S" => Ok(Box::new(PlannedScript::new(Kind::MulDigit {
            add: need("S+S")?,
            mul: need("S*S")?,
        }))),
        id if id.starts_with("expr") => Ok(Box::new(ExpressionScript {
            modules: [need("M+M")?, need("M-M")?, need("M*M")?, need("M/M")?],
        })),
        other => Err(IsmError::UnsupportedTask(other.to_string())),
    }
}

/// Runs one episode under a script.
pub fn run_scripted(
    script: &mut dyn Script,
    input: &[Token],
    registry: &SkillRegistry,
    config: &IsmConfig,
) -> Result<Trajectory, IsmError> {
    Trajectory::run_with(input, registry, config, |m| {
        script.next_action(m).map(Decision::from)
    })
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Add { add: usize },
    MulDigit { add: usize, mul: usize },
}

/// Plans the whole episode from the initial memory by exact simulation,
/// then replays it, checking that memory evolves as planned.
struct PlannedScript {
    kind: Kind,
    plan: Option<VecDeque<(Vec<Token>, CompositeAction)>>,
}

impl PlannedScript {
    fn new(kind: Kind) -> Self {
        PlannedScript { kind, plan: None }
    }
}

impl Script for PlannedScript {
    fn next_action(&mut self, memory: &Memory) -> Result<CompositeAction, IsmError> {
        if self.plan.is_none() {
            let steps = plan(self.kind, memory.tokens())
                .ok_or_else(|| IsmError::ScriptStuck(memory.to_string()))?;
            self.plan = Some(steps.into());
        }
        let plan = self.plan.as_mut().expect("plan built");
        match plan.pop_front() {
            Some((expected, action)) if expected == memory.tokens() => Ok(action),
            _ => Err(IsmError::ScriptStuck(memory.to_string())),
        }
    }
}

struct Sim {
    mem: Vec<Token>,
    steps: Vec<(Vec<Token>, CompositeAction)>,
}

impl Sim {
    fn call(&mut self, module: usize, read1: Span, read2: Span, write: Span, out: &[Token]) {
        self.steps.push((
            self.mem.clone(),
            CompositeAction {
                module,
                read1,
                read2,
                write,
            },
        ));
        self.mem.splice(write.start..write.end, out.iter().copied());
    }

    fn halt(&mut self) {
        self.steps.push((self.mem.clone(), CompositeAction::HALT));
    }
}

fn one(pos: usize) -> Span {
    Span::new(pos, pos + 1)
}

fn digits_of(v: u32) -> Vec<Token> {
    v.to_string()
        .bytes()
        .map(|b| Token::digit(b - b'0'))
        .collect()
}

fn split_binary(mem: &[Token], op: Token) -> Option<(Vec<u8>, Vec<u8>)> {
    let p = mem.iter().position(|&t| t == op)?;
    let (a, b) = (&mem[..p], &mem[p + 1..]);
    let digits = |s: &[Token]| {
        s.iter()
            .map(|t| t.digit_value())
            .collect::<Option<Vec<u8>>>()
    };
    let (a, b) = (digits(a)?, digits(b)?);
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

fn plan(kind: Kind, mem: &[Token]) -> Option<Vec<(Vec<Token>, CompositeAction)>> {
    let mut sim = Sim {
        mem: mem.to_vec(),
        steps: Vec::new(),
    };
    match kind {
        Kind::Add { add } => plan_add(&mut sim, add)?,
        Kind::MulDigit { add, mul } => plan_mul_digit(&mut sim, add, mul)?,
    }
    sim.halt();
    Some(sim.steps)
}

/// Digit lists are most-significant first; cells are returned units first.
fn plan_add(sim: &mut Sim, add: usize) -> Option<()> {
    let (a, b) = split_binary(&sim.mem, Token::PLUS)?;
    let (n, m) = (a.len(), b.len());
    let overlap = n.min(m);
    // cells[k] for k >= overlap are untouched digits of the longer operand
    let longer = if n >= m { &a } else { &b };
    let mut cells: Vec<Vec<Token>> = (0..longer.len())
        .map(|k| vec![Token::digit(longer[longer.len() - 1 - k])])
        .collect();
    if n >= m {
        // sums replace a_k left to right; the last one also swallows "+B"
        let mut shift = 0;
        for k in (0..overlap).rev() {
            let pa = n - 1 - k + shift;
            let pb = sim.mem.len() - 1 - k;
            let s = digits_of(u32::from(a[n - 1 - k] + b[m - 1 - k]));
            let write = if k == 0 {
                Span::new(pa, sim.mem.len())
            } else {
                one(pa)
            };
            sim.call(add, one(pa), one(pb), write, &s);
            shift += s.len() - 1;
            cells[k] = s;
        }
        normalize(sim, 0, &mut cells, add)
    } else {
        // sums replace b_k, then "A+" is deleted by an empty read
        for k in (0..overlap).rev() {
            let pa = n - 1 - k;
            let pb = sim.mem.len() - 1 - k;
            let s = digits_of(u32::from(a[n - 1 - k] + b[m - 1 - k]));
            sim.call(add, one(pa), one(pb), one(pb), &s);
            cells[k] = s;
        }
        sim.call(
            add,
            Span::EMPTY,
            Span::EMPTY,
            Span::new(0, n + 1),
            &[Token::BLANK],
        );
        normalize(sim, 1, &mut cells, add)
    }
}

fn plan_mul_digit(sim: &mut Sim, add: usize, mul: usize) -> Option<()> {
    let (a, d) = split_binary(&sim.mem, Token::TIMES)?;
    let [d] = d[..] else { return None };
    let n = a.len();
    let pd = n + 1;
    if d == 0 || a == [0] {
        sim.call(
            mul,
            one(n - 1),
            one(pd),
            Span::new(0, sim.mem.len()),
            &[Token::digit(0)],
        );
        return Some(());
    }
    let mut cells = vec![Vec::new(); n];
    let mut shift = 0;
    for k in (0..n).rev() {
        let pa = n - 1 - k + shift;
        let pd = sim.mem.len() - 1;
        let p = digits_of(u32::from(a[n - 1 - k]) * u32::from(d));
        let write = if k == 0 {
            Span::new(pa, sim.mem.len())
        } else {
            one(pa)
        };
        sim.call(mul, one(pa), one(pd), write, &p);
        shift += p.len() - 1;
        cells[k] = p;
    }
    normalize(sim, 0, &mut cells, add)
}

/// Pushes carries leftwards until every cell but the top one is a single
/// digit. Cells sit contiguously from `base`, most significant first.
fn normalize(sim: &mut Sim, base: usize, cells: &mut [Vec<Token>], add: usize) -> Option<()> {
    let value = |t: &Token| u32::from(t.digit_value().expect("digit"));
    let pos =
        |cells: &[Vec<Token>], i: usize| base + cells[i + 1..].iter().map(Vec::len).sum::<usize>();
    for i in 0..cells.len().saturating_sub(1) {
        if cells[i].len() > 2 {
            return None;
        }
        if cells[i].len() == 2 {
            // "..y" "cd": y + c replaces y and c
            let pc = pos(cells, i);
            let py = pc - 1;
            let s = digits_of(value(cells[i + 1].last()?) + value(&cells[i][0]));
            sim.call(add, one(py), one(pc), Span::new(py, pc + 1), &s);
            cells[i].remove(0);
            cells[i + 1].pop();
            cells[i + 1].extend(&s);
            if cells[i + 1].len() == 3 {
                // "x" "1z" stands for 10x + 1z: fold the 1 into x
                let px = pos(cells, i + 1);
                let s = digits_of(value(&cells[i + 1][0]) + value(&cells[i + 1][1]));
                if s.len() != 1 {
                    return None;
                }
                sim.call(add, one(px), one(px + 1), Span::new(px, px + 2), &s);
                cells[i + 1].splice(0..2, s);
            }
        }
    }
    Some(())
}

/// One reduction per step: innermost group first, then the leftmost
/// `*` or `/`, then the leftmost `+` or `-`. Halts once memory is a number.
struct ExpressionScript {
    /// Registry indices for `+ - * /`.
    modules: [usize; 4],
}

struct Candidate {
    op: BinOp,
    depth: usize,
    read: Span,
    write: Span,
}

fn candidates(
    e: &Expr,
    offset: usize,
    depth: usize,
    grouped: Option<Span>,
    out: &mut Vec<Candidate>,
) -> usize {
    match e {
        Expr::Lit(v) => v.to_string().len(),
        Expr::Group(inner) => {
            let len = 2 + inner.to_string().len();
            candidates(
                inner,
                offset + 1,
                depth + 1,
                Some(Span::new(offset, offset + len)),
                out,
            );
            len
        }
        Expr::Bin { op, lhs, rhs } => {
            let l = candidates(lhs, offset, depth, None, out);
            let r = candidates(rhs, offset + l + 1, depth, None, out);
            let len = l + 1 + r;
            if matches!((&**lhs, &**rhs), (Expr::Lit(_), Expr::Lit(_))) {
                let read = Span::new(offset, offset + len);
                out.push(Candidate {
                    op: *op,
                    depth,
                    read,
                    write: grouped.unwrap_or(read),
                });
            }
            len
        }
    }
}

impl Script for ExpressionScript {
    fn next_action(&mut self, memory: &Memory) -> Result<CompositeAction, IsmError> {
        let stuck = || IsmError::ScriptStuck(memory.to_string());
        if memory.tokens().iter().any(|t| t.is_blank()) {
            return Err(stuck());
        }
        if parse_answer(memory.tokens()).is_some() {
            return Ok(CompositeAction::HALT);
        }
        let ast = expr::parse(memory.tokens()).map_err(|_| stuck())?;
        let mut found = Vec::new();
        candidates(&ast, 0, 0, None, &mut found);
        let deepest = found.iter().map(|c| c.depth).max().ok_or_else(stuck)?;
        found.retain(|c| c.depth == deepest);
        let pick = found
            .iter()
            .find(|c| c.op.precedence() == 2)
            .or_else(|| found.first())
            .ok_or_else(stuck)?;
        let module = self.modules[BinOp::ALL
            .iter()
            .position(|&o| o == pick.op)
            .expect("operator")];
        Ok(CompositeAction {
            module,
            read1: pick.read,
            read2: Span::EMPTY,
            write: pick.write,
        })
    }
}

/// A scripted policy packaged as a frozen skill.
pub struct ScriptedSkill {
    name: String,
    registry: SkillRegistry,
    config: IsmConfig,
}

impl ScriptedSkill {
    pub fn new(
        task_id: &str,
        registry: SkillRegistry,
        config: IsmConfig,
    ) -> Result<Self, IsmError> {
        scripted_policy(task_id, &registry)?;
        Ok(ScriptedSkill {
            name: task_id.to_string(),
            registry,
            config,
        })
    }

    pub fn into_arc(self) -> Arc<dyn SkillModule> {
        Arc::new(self)
    }

    pub fn run(&self, input: &[Token]) -> Result<Trajectory, IsmError> {
        let mut script = scripted_policy(&self.name, &self.registry)?;
        run_scripted(script.as_mut(), input, &self.registry, &self.config)
    }

    pub fn registry(&self) -> &SkillRegistry {
        &self.registry
    }
}

impl SkillModule for ScriptedSkill {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Interactive
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        let traj = self
            .run(input)
            .map_err(|e| SkillError::EpisodeFailed(e.to_string()))?;
        match traj.status {
            super::EpisodeStatus::Halted => Ok(traj.output),
            s => Err(SkillError::EpisodeFailed(format!("{s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{tokenize, OperandShape, TaskSpec};
    use crate::skill::OracleSkill;

    fn single(op: BinOp) -> Arc<dyn SkillModule> {
        Arc::new(OracleSkill::new(TaskSpec::binary(
            op,
            OperandShape::single(),
            OperandShape::single(),
        )))
    }

    fn adder() -> ScriptedSkill {
        let mut r = SkillRegistry::new();
        r.push(single(BinOp::Add));
        ScriptedSkill::new("M+M", r, IsmConfig::default()).unwrap()
    }

    fn run(skill: &ScriptedSkill, text: &str) -> String {
        skill.invoke(&tokenize(text).unwrap()).unwrap().to_string()
    }

    #[test]
    fn addition_layouts() {
        let s = adder();
        for (q, a) in [
            ("3+4", "7"),
            ("57+68", "125"),
            ("999+1", "1000"),
            ("1+999", "1000"),
            ("0+0", "0"),
            ("95+5", "100"),
            ("5+95", "100"),
            ("123+45", "168"),
            ("45+123", "168"),
            ("909+91", "1000"),
        ] {
            assert_eq!(run(&s, q), a, "{q}");
        }
    }

    #[test]
    fn addition_trace_fits_budget() {
        let s = adder();
        let t = s.run(&tokenize("999+999").unwrap()).unwrap();
        assert!(t.len() <= super::super::T_MAX);
        let lines = t.trace(s.registry());
        assert!(lines[0].starts_with("1 | 999+999 | S+S | "), "{}", lines[0]);
        assert!(lines.last().unwrap().contains("HALT"));
    }

    #[test]
    fn multiply_by_digit() {
        let mut r = SkillRegistry::new();
        r.push(single(BinOp::Add));
        r.push(single(BinOp::Mul));
        let s = ScriptedSkill::new("M*S", r, IsmConfig::default()).unwrap();
        for (q, a) in [
            ("234*6", "1404"),
            ("99*9", "891"),
            ("105*0", "0"),
            ("0*7", "0"),
            ("7*8", "56"),
            ("909*9", "8181"),
        ] {
            assert_eq!(run(&s, q), a, "{q}");
        }
    }

    #[test]
    fn expression_steps() {
        let mut base = SkillRegistry::new();
        base.push(single(BinOp::Add));
        let mut r = SkillRegistry::new();
        r.push(
            ScriptedSkill::new("M+M", base, IsmConfig::default())
                .unwrap()
                .into_arc(),
        );
        for op in [BinOp::Sub, BinOp::Mul, BinOp::Div] {
            r.push(Arc::new(OracleSkill::new(TaskSpec::binary(
                op,
                OperandShape::multi(1, 12),
                OperandShape::multi(1, 12),
            ))));
        }
        let s = ScriptedSkill::new("expr+-*/()", r, IsmConfig::default()).unwrap();
        assert_eq!(run(&s, "(2+3)*4"), "20");
        assert_eq!(run(&s, "2*(3+(4-1))*2"), "24");
        assert_eq!(run(&s, "8-2-3"), "3");
        assert_eq!(run(&s, "3-5"), "-2");
        assert_eq!(run(&s, "17"), "17");
    }

    #[test]
    fn unsupported_and_missing() {
        assert!(matches!(
            scripted_policy("M/M", &SkillRegistry::new()),
            Err(IsmError::UnsupportedTask(_))
        ));
        assert!(matches!(
            scripted_policy("M+M", &SkillRegistry::new()),
            Err(IsmError::Registry(_))
        ));
    }
}
