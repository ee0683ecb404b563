//! Task shapes and the constrained random expression generator.

use std::fmt;

use num_bigint::BigInt;
use num_traits::Signed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::TokenSeq;
use super::ast::{evaluate, render, BinOp, Expr};
use super::ExprError;

/// Rejection budget for a single sample.
pub const GENERATION_ATTEMPTS: usize = 10_000;

/// Digit-count range of an operand. `S` is exactly one digit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandShape {
    pub min_digits: usize,
    pub max_digits: usize,
}

impl OperandShape {
    pub const fn single() -> Self {
        OperandShape {
            min_digits: 1,
            max_digits: 1,
        }
    }

    pub const fn multi(min_digits: usize, max_digits: usize) -> Self {
        OperandShape {
            min_digits,
            max_digits,
        }
    }

    pub fn is_single(&self) -> bool {
        self.max_digits == 1
    }

    fn contains(&self, digits: usize) -> bool {
        (self.min_digits..=self.max_digits).contains(&digits)
    }
}

/// Everything the generator needs to know about one curriculum task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    /// Operator set, drawn from `+ - * /`.
    pub ops: Vec<char>,
    /// Shape of every operand (left operand for binary tasks).
    pub operand: OperandShape,
    /// Right operand shape for single-operator tasks such as `M*S`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs_operand: Option<OperandShape>,
    /// Inclusive range of the serialized input length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<[usize; 2]>,
    /// Inclusive range of the operator count.
    pub operators: [usize; 2],
    #[serde(default)]
    pub parens: bool,
}

impl TaskSpec {
    /// A single-operator task such as `S+S`, `M*S` or `M/M`.
    pub fn binary(op: BinOp, lhs: OperandShape, rhs: OperandShape) -> Self {
        let tag = |s: &OperandShape| if s.is_single() { 'S' } else { 'M' };
        TaskSpec {
            id: format!("{}{}{}", tag(&lhs), op.symbol(), tag(&rhs)),
            ops: vec![op.symbol()],
            operand: lhs,
            rhs_operand: Some(rhs),
            length: None,
            operators: [1, 1],
            parens: false,
        }
    }

    /// Mixed-operator expression task. Operator count defaults to roughly
    /// three per ten characters.
    pub fn expression(
        ops: &[BinOp],
        parens: bool,
        operand: OperandShape,
        length: [usize; 2],
    ) -> Self {
        let mid = (length[0] + length[1]) as f64 / 2.0;
        let centre = (mid * 0.3).round().max(1.0) as usize;
        let lo = centre.saturating_sub(1).max(1);
        let hi = centre + 1;
        let mut sym: String = ops.iter().map(|o| o.symbol()).collect();
        if parens {
            sym.push_str("()");
        }
        TaskSpec {
            id: format!("expr{sym}"),
            ops: ops.iter().map(|o| o.symbol()).collect(),
            operand,
            rhs_operand: None,
            length: Some(length),
            operators: [lo, hi],
            parens,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_length(mut self, length: [usize; 2]) -> Self {
        self.length = Some(length);
        self
    }

    pub fn bin_ops(&self) -> Result<Vec<BinOp>, ExprError> {
        self.ops
            .iter()
            .map(|&c| {
                BinOp::from_symbol(c)
                    .ok_or_else(|| ExprError::InvalidSpec(format!("unknown operator {c:?}")))
            })
            .collect()
    }

    /// True for tasks with exactly one operator per sample.
    pub fn is_binary(&self) -> bool {
        self.operators == [1, 1] && !self.parens
    }

    pub fn validate(&self) -> Result<(), ExprError> {
        let ops = self.bin_ops()?;
        let bad = |m: &str| Err(ExprError::InvalidSpec(format!("{}: {m}", self.id)));
        if ops.is_empty() {
            return bad("empty operator set");
        }
        for s in std::iter::once(&self.operand).chain(self.rhs_operand.iter()) {
            if s.min_digits == 0 || s.min_digits > s.max_digits {
                return bad("empty operand range");
            }
        }
        if self.operators[0] == 0 || self.operators[0] > self.operators[1] {
            return bad("empty operator-count range");
        }
        if let Some([lo, hi]) = self.length {
            if lo > hi {
                return bad("empty length range");
            }
        }
        Ok(())
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// One supervised example: input expression and its exact answer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub input: TokenSeq,
    pub truth: TokenSeq,
}

impl Sample {
    /// Builds a sample by evaluating `input` with the oracle.
    pub fn from_input(input: TokenSeq) -> Result<Sample, ExprError> {
        let v = evaluate(&super::parse(&input)?)?;
        Ok(Sample {
            input,
            truth: render(&v),
        })
    }
}

fn random_operand<R: Rng + ?Sized>(digits: usize, rng: &mut R) -> BigInt {
    if digits == 1 {
        return BigInt::from(rng.gen_range(0u32..10));
    }
    let mut s = String::with_capacity(digits);
    s.push(char::from(b'0' + rng.gen_range(1u8..10)));
    for _ in 1..digits {
        s.push(char::from(b'0' + rng.gen_range(0u8..10)));
    }
    s.parse().expect("decimal digits")
}

/// Every proper subtree must be non-negative and every division exact.
fn admissible(e: &Expr) -> Result<BigInt, ExprError> {
    let root = e.ungrouped();
    e.evaluate_with(&mut |node, v| {
        if v.is_negative() && !std::ptr::eq(node, root) {
            Err(ExprError::NegativeIntermediate)
        } else {
            Ok(())
        }
    })
}

/// Draws one sample satisfying `spec`, by rejection.
pub fn generate_sample<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> Result<Sample, ExprError> {
    spec.validate()?;
    let ops = spec.bin_ops()?;
    for _ in 0..GENERATION_ATTEMPTS {
        let candidate = if spec.is_binary() {
            propose_binary(spec, &ops, rng)?
        } else {
            match propose_expression(spec, &ops, rng) {
                Some(e) => e,
                None => continue,
            }
        };
        match admissible(&candidate) {
            Ok(v) => {
                let text = candidate.to_string();
                let input = super::tokenize(&text)?;
                return Ok(Sample {
                    input,
                    truth: render(&v),
                });
            }
            Err(
                ExprError::DivisionByZero
                | ExprError::InexactDivision
                | ExprError::NegativeIntermediate,
            ) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ExprError::GenerationExhausted(spec.id.clone()))
}

/// Draws `count` samples from one seeded stream.
pub fn generate_samples<R: Rng + ?Sized>(
    spec: &TaskSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Sample>, ExprError> {
    (0..count).map(|_| generate_sample(spec, rng)).collect()
}

fn propose_binary<R: Rng + ?Sized>(
    spec: &TaskSpec,
    ops: &[BinOp],
    rng: &mut R,
) -> Result<Expr, ExprError> {
    let lhs_shape = spec.operand;
    let rhs_shape = spec.rhs_operand.unwrap_or(spec.operand);
    let mut pairs = Vec::new();
    for n in lhs_shape.min_digits..=lhs_shape.max_digits {
        for m in rhs_shape.min_digits..=rhs_shape.max_digits {
            let len = n + m + 1;
            if spec.length.is_none_or(|[lo, hi]| (lo..=hi).contains(&len)) {
                pairs.push((n, m));
            }
        }
    }
    let &(n, m) = pairs.choose(rng).ok_or_else(|| {
        ExprError::InvalidSpec(format!(
            "{}: no operand sizes fit the length range",
            spec.id
        ))
    })?;
    let op = *ops.choose(rng).expect("non-empty operator set");
    Ok(Expr::bin(
        op,
        Expr::Lit(random_operand(n, rng)),
        Expr::Lit(random_operand(m, rng)),
    ))
}

/// Random tree shape with `ops` internal nodes. Leaves carry placeholder
/// zeros; digit counts are filled in afterwards.
fn random_tree<R: Rng + ?Sized>(n_ops: usize, ops: &[BinOp], rng: &mut R) -> Expr {
    if n_ops == 0 {
        return Expr::lit(0);
    }
    let left = rng.gen_range(0..n_ops);
    let op = *ops.choose(rng).expect("non-empty operator set");
    Expr::bin(
        op,
        random_tree(left, ops, rng),
        random_tree(n_ops - 1 - left, ops, rng),
    )
}

/// Inserts exactly the groups needed to preserve the tree shape.
fn add_required_groups(e: Expr) -> (Expr, usize) {
    match e {
        Expr::Bin { op, lhs, rhs } => {
            let (l, lc) = add_required_groups(*lhs);
            let (r, rc) = add_required_groups(*rhs);
            let lp = matches!(&l, Expr::Bin { op: lo, .. } if lo.precedence() < op.precedence());
            let rp = matches!(&r, Expr::Bin { op: ro, .. } if ro.precedence() <= op.precedence());
            let l = if lp { Expr::group(l) } else { l };
            let r = if rp { Expr::group(r) } else { r };
            (Expr::bin(op, l, r), lc + rc + lp as usize + rp as usize)
        }
        other => (other, 0),
    }
}

/// Left-associative chain with no parentheses, honouring precedence.
fn random_flat<R: Rng + ?Sized>(n_ops: usize, ops: &[BinOp], rng: &mut R) -> Expr {
    let mut toks = vec![super::Token::digit(0)];
    for _ in 0..n_ops {
        toks.push(ops.choose(rng).expect("non-empty operator set").token());
        toks.push(super::Token::digit(0));
    }
    super::parse(&toks).expect("flat chain parses")
}

fn fill_literals<R: Rng + ?Sized>(
    e: &mut Expr,
    digits: &mut std::slice::Iter<'_, usize>,
    rng: &mut R,
) {
    match e {
        Expr::Lit(v) => {
            *v = random_operand(*digits.next().expect("one digit count per literal"), rng)
        }
        Expr::Bin { lhs, rhs, .. } => {
            fill_literals(lhs, digits, rng);
            fill_literals(rhs, digits, rng);
        }
        Expr::Group(inner) => fill_literals(inner, digits, rng),
    }
}

fn propose_expression<R: Rng + ?Sized>(
    spec: &TaskSpec,
    ops: &[BinOp],
    rng: &mut R,
) -> Option<Expr> {
    let [kmin, kmax] = spec.operators;
    let k = rng.gen_range(kmin..=kmax);
    let (mut tree, groups) = if spec.parens {
        add_required_groups(random_tree(k, ops, rng))
    } else {
        (random_flat(k, ops, rng), 0)
    };
    let leaves = k + 1;
    let shape = spec.operand;
    let digits: Vec<usize> = match spec.length {
        Some([lo, hi]) => {
            let target = rng.gen_range(lo..=hi);
            let budget = target.checked_sub(k + 2 * groups)?;
            if budget < leaves * shape.min_digits || budget > leaves * shape.max_digits {
                return None;
            }
            let mut d = vec![shape.min_digits; leaves];
            for _ in 0..budget - leaves * shape.min_digits {
                let open: Vec<usize> = (0..leaves).filter(|&i| d[i] < shape.max_digits).collect();
                d[*open.choose(rng)?] += 1;
            }
            d
        }
        None => (0..leaves)
            .map(|_| rng.gen_range(shape.min_digits..=shape.max_digits))
            .collect(),
    };
    debug_assert!(digits.iter().all(|&d| shape.contains(d)));
    fill_literals(&mut tree, &mut digits.iter(), rng);
    Some(tree)
}
