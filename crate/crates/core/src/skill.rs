//! Callable skills and the append-only registry an ISM selects from.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::expr::{self, render, BinOp, Expr, TaskSpec, Token, TokenSeq};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SkillError {
    #[error("input length {got} exceeds module width {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("module {module} rejected input {input}")]
    Rejected { module: String, input: String },
    #[error("episode failed: {0}")]
    EpisodeFailed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkillKind {
    Halt,
    Basic,
    Interactive,
    Oracle,
}

/// A frozen policy from token sequences to token sequences.
pub trait SkillModule: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> SkillKind;
    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError>;

    /// Operator placed between two read spans that meet without one.
    fn join_operator(&self) -> Option<Token> {
        binary_operator_of(self.name())
    }
}

/// The operator of a single-operator task id such as `S+S` or `M*S`.
pub fn binary_operator_of(task_id: &str) -> Option<Token> {
    let c: Vec<char> = task_id.chars().collect();
    let shape = |x: char| x == 'S' || x == 'M';
    match c.as_slice() {
        [a, op, b] if shape(*a) && shape(*b) => Token::from_char(*op).filter(|t| t.is_operator()),
        _ => None,
    }
}

/// Stops the episode; never invoked on memory content.
#[derive(Debug, Default)]
pub struct Halt;

impl SkillModule for Halt {
    fn name(&self) -> &str {
        "HALT"
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Halt
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        Ok(TokenSeq::from_tokens(input.to_vec()))
    }

    fn join_operator(&self) -> Option<Token> {
        None
    }
}

/// Exact evaluator restricted to inputs of one task's shape. Stands in for a
/// trained module when testing machine semantics.
#[derive(Clone, Debug)]
pub struct OracleSkill {
    spec: TaskSpec,
}

impl OracleSkill {
    pub fn new(spec: TaskSpec) -> Self {
        OracleSkill { spec }
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn accepts(&self, e: &Expr) -> bool {
        let spec = &self.spec;
        if spec.is_binary() {
            let Expr::Bin { op, lhs, rhs } = e else {
                return false;
            };
            let digits = |x: &Expr, lo: usize, hi: usize| match x {
                Expr::Lit(v) => {
                    let n = v.to_string().len();
                    (lo..=hi).contains(&n)
                }
                _ => false,
            };
            let rhs_shape = spec.rhs_operand.unwrap_or(spec.operand);
            spec.bin_ops().is_ok_and(|ops| ops.contains(op))
                && digits(lhs, spec.operand.min_digits, spec.operand.max_digits)
                && digits(rhs, rhs_shape.min_digits, rhs_shape.max_digits)
        } else {
            fn ok(e: &Expr, ops: &[BinOp], parens: bool) -> bool {
                match e {
                    Expr::Lit(_) => true,
                    Expr::Group(inner) => parens && ok(inner, ops, parens),
                    Expr::Bin { op, lhs, rhs } => {
                        ops.contains(op) && ok(lhs, ops, parens) && ok(rhs, ops, parens)
                    }
                }
            }
            spec.bin_ops().is_ok_and(|ops| ok(e, &ops, spec.parens))
        }
    }
}

impl SkillModule for OracleSkill {
    fn name(&self) -> &str {
        &self.spec.id
    }

    fn kind(&self) -> SkillKind {
        SkillKind::Oracle
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        let reject = || SkillError::Rejected {
            module: self.spec.id.clone(),
            input: TokenSeq::from_tokens(input.to_vec()).to_string(),
        };
        let ast = expr::parse(input).map_err(|_| reject())?;
        if !self.accepts(&ast) {
            return Err(reject());
        }
        let v = expr::evaluate(&ast).map_err(|_| reject())?;
        Ok(render(&v))
    }
}

/// Caches the outputs of a deterministic skill.
pub struct Memoized<S> {
    inner: S,
    cache: Mutex<HashMap<Vec<Token>, Result<TokenSeq, SkillError>>>,
}

impl<S: SkillModule> Memoized<S> {
    pub fn new(inner: S) -> Self {
        Memoized {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: SkillModule> SkillModule for Memoized<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn kind(&self) -> SkillKind {
        self.inner.kind()
    }

    fn join_operator(&self) -> Option<Token> {
        self.inner.join_operator()
    }

    fn invoke(&self, input: &[Token]) -> Result<TokenSeq, SkillError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(input) {
            return hit.clone();
        }
        let out = self.inner.invoke(input);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(input.to_vec(), out.clone());
        out
    }
}

/// Ordered list `[HALT, M1, ..]`. Entries are only ever appended.
#[derive(Clone)]
pub struct SkillRegistry {
    modules: Vec<Arc<dyn SkillModule>>,
}

impl Default for SkillRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl SkillRegistry {
    pub fn new() -> Self {
        SkillRegistry {
            modules: vec![Arc::new(Halt)],
        }
    }

    pub fn push(&mut self, module: Arc<dyn SkillModule>) -> usize {
        self.modules.push(module);
        self.modules.len() - 1
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    /// Always false: HALT is present from construction.
    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Arc<dyn SkillModule>> {
        self.modules.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name() == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.modules.iter().map(|m| m.name().to_string()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn SkillModule>> {
        self.modules.iter()
    }
}

impl fmt::Debug for SkillRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{tokenize, OperandShape};

    fn call(s: &dyn SkillModule, text: &str) -> Result<String, SkillError> {
        s.invoke(&tokenize(text).unwrap()).map(|t| t.to_string())
    }

    #[test]
    fn oracle_respects_shape() {
        let ss = OracleSkill::new(TaskSpec::binary(
            BinOp::Add,
            OperandShape::single(),
            OperandShape::single(),
        ));
        assert_eq!(call(&ss, "3+5").unwrap(), "8");
        assert!(call(&ss, "13+5").is_err());
        assert!(call(&ss, "3-5").is_err());
        let sub = OracleSkill::new(TaskSpec::binary(
            BinOp::Sub,
            OperandShape::single(),
            OperandShape::single(),
        ));
        assert_eq!(call(&sub, "3-5").unwrap(), "-2");
        let mm = OracleSkill::new(TaskSpec::binary(
            BinOp::Mul,
            OperandShape::multi(1, 3),
            OperandShape::multi(1, 3),
        ));
        assert_eq!(call(&mm, "12*34").unwrap(), "408");
        assert!(call(&mm, "(12)*3").is_err());
    }

    #[test]
    fn registry_is_indexed_from_halt() {
        let mut r = SkillRegistry::new();
        assert_eq!(r.len(), 1);
        assert_eq!(r.get(0).unwrap().kind(), SkillKind::Halt);
        let i = r.push(Arc::new(OracleSkill::new(TaskSpec::binary(
            BinOp::Add,
            OperandShape::single(),
            OperandShape::single(),
        ))));
        assert_eq!(i, 1);
        assert_eq!(r.index_of("S+S"), Some(1));
        assert_eq!(r.names(), vec!["HALT", "S+S"]);
    }

    #[test]
    fn join_operator_from_task_id() {
        assert_eq!(binary_operator_of("S+S"), Some(Token::PLUS));
        assert_eq!(binary_operator_of("M*S"), Some(Token::TIMES));
        assert_eq!(binary_operator_of("M/M"), Some(Token::DIVIDE));
        assert_eq!(binary_operator_of("expr+-"), None);
        assert_eq!(binary_operator_of("HALT"), None);
        assert_eq!(Halt.join_operator(), None);
    }

    #[test]
    fn memoized_is_transparent() {
        let m = Memoized::new(OracleSkill::new(TaskSpec::binary(
            BinOp::Mul,
            OperandShape::single(),
            OperandShape::single(),
        )));
        assert_eq!(call(&m, "9*9").unwrap(), "81");
        assert_eq!(call(&m, "9*9").unwrap(), "81");
        assert!(call(&m, "9+9").is_err());
    }
}
