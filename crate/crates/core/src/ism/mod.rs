//! Interactive skill modules: an episodic machine over a token memory.
//!
//! Each step picks a registry module, two read spans and a write span. The
//! two read spans are concatenated into a sub-expression, the module is
//! called on it, and its answer replaces the write span. Selecting HALT
//! (registry index 0) ends the episode with the memory as the answer.
//!
//! Two rules beyond plain concatenation keep the machine closed under the
//! column-wise algorithms it is meant to learn:
//!
//! * when both read spans are non-empty, meet without an operator, and the
//!   module is a single-operator task (`S+S`, `M*S`, ..), that operator is
//!   placed between them;
//! * a failed call writes one blank, and blanks are ignored when reading
//!   and in the final answer, so a failed call acts as a deletion.

use std::fmt;

use thiserror::Error;

use crate::expr::{Token, TokenSeq};
use crate::nn::NnError;
use crate::skill::{SkillError, SkillRegistry};

mod machine;
pub mod scripted;

pub use machine::{
    CompositeAction, Decision, EpisodeStatus, InteractiveSkillModule, IsmConfig, IsmNet, Mode,
    Step, StepForward, Trajectory, CHECKPOINT_KIND, HEADS,
};

pub const T_MAX: usize = 40;
pub const L_MAX: usize = 64;

#[derive(Debug, Error)]
pub enum IsmError {
    #[error("memory would hold {0} tokens, above capacity")]
    CapacityExceeded(usize),
    #[error("memory must not be empty")]
    EmptyMemory,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("registry mismatch: {0}")]
    Registry(String),
    #[error("no scripted policy for task {0}")]
    UnsupportedTask(String),
    #[error("scripted policy cannot handle memory {0}")]
    ScriptStuck(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The working memory. Always holds between 1 and `capacity` tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Memory {
    tokens: Vec<Token>,
    capacity: usize,
}

impl Memory {
    pub fn new(input: &[Token], capacity: usize) -> Result<Self, IsmError> {
        if input.is_empty() {
            return Err(IsmError::EmptyMemory);
        }
        if input.len() > capacity {
            return Err(IsmError::CapacityExceeded(input.len()));
        }
        Ok(Memory {
            tokens: input.to_vec(),
            capacity,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    pub fn to_seq(&self) -> TokenSeq {
        TokenSeq::from_tokens(self.tokens.clone())
    }

    /// Memory content with blanks removed: the episode answer.
    pub fn answer(&self) -> TokenSeq {
        self.to_seq().without_blanks()
    }
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_seq())
    }
}

/// Half-open span `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const EMPTY: Span = Span { start: 0, end: 0 };

    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    fn check(&self, len: usize) -> Result<(), IsmError> {
        if self.start > self.end || self.end > len {
            return Err(IsmError::InvalidAction(format!(
                "span {self} outside memory of length {len}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// What a non-HALT step did.
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    /// Sub-expression handed to the module.
    pub input: TokenSeq,
    /// The module's answer, or why it refused.
    pub result: Result<TokenSeq, SkillError>,
    /// Tokens actually spliced into memory.
    pub written: TokenSeq,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Halted(TokenSeq),
    Continue(Memory, Invocation),
}

/// Builds the sub-expression for `action` without blanks, inserting the
/// module's operator at a bare junction when `join` is on.
pub fn read_subexpression(
    memory: &Memory,
    action: &CompositeAction,
    join_op: Option<Token>,
    join: bool,
) -> TokenSeq {
    let m = memory.tokens();
    let a: Vec<Token> = m[action.read1.start..action.read1.end]
        .iter()
        .copied()
        .filter(|t| !t.is_blank())
        .collect();
    let b: Vec<Token> = m[action.read2.start..action.read2.end]
        .iter()
        .copied()
        .filter(|t| !t.is_blank())
        .collect();
    let mut out = a.clone();
    if let (true, Some(op), Some(&l), Some(&r)) = (join, join_op, a.last(), b.first()) {
        if !l.is_operator() && !r.is_operator() && l != Token::LPAREN && r != Token::RPAREN {
            out.push(op);
        }
    }
    out.extend(b);
    TokenSeq::from_tokens(out)
}

/// Executes one composite action against the registry.
pub fn apply_action(
    memory: &Memory,
    action: &CompositeAction,
    registry: &SkillRegistry,
    join: bool,
) -> Result<Outcome, IsmError> {
    let module = registry.get(action.module).ok_or_else(|| {
        IsmError::InvalidAction(format!(
            "module {} not in registry of {}",
            action.module,
            registry.len()
        ))
    })?;
    for s in [action.read1, action.read2, action.write] {
        s.check(memory.len())?;
    }
    if action.module == 0 {
        return Ok(Outcome::Halted(memory.answer()));
    }
    let input = read_subexpression(memory, action, module.join_operator(), join);
    let result = if input.is_empty() {
        Err(SkillError::Rejected {
            module: module.name().to_string(),
            input: String::new(),
        })
    } else {
        module.invoke(&input)
    };
    let written = match &result {
        Ok(c) if !c.is_empty() => c.clone(),
        _ => TokenSeq::from_tokens(vec![Token::BLANK]),
    };
    let m = memory.tokens();
    let mut next = Vec::with_capacity(m.len() + written.len());
    next.extend_from_slice(&m[..action.write.start]);
    next.extend(written.iter().copied());
    next.extend_from_slice(&m[action.write.end..]);
    if next.len() > memory.capacity {
        return Err(IsmError::CapacityExceeded(next.len()));
    }
    let next = Memory {
        tokens: next,
        capacity: memory.capacity,
    };
    Ok(Outcome::Continue(
        next,
        Invocation {
            input,
            result,
            written,
        },
    ))
}

/// `t | memory | module | read spans | write span | sub-output`
pub fn trace_line(
    t: usize,
    memory: &Memory,
    action: &CompositeAction,
    registry: &SkillRegistry,
    sub: Option<&Invocation>,
) -> String {
    let name = registry
        .get(action.module)
        .map(|m| m.name().to_string())
        .unwrap_or_else(|| "?".into());
    let out = match sub {
        None => "-".to_string(),
        Some(inv) => match &inv.result {
            Ok(c) => format!("{} <- {}", c.pretty(), inv.input.pretty()),
            Err(e) => format!("{} ({e})", inv.written.pretty()),
        },
    };
    format!(
        "{t} | {} | {name} | {} {} | {} | {out}",
        memory.to_seq().pretty(),
        action.read1,
        action.read2,
        action.write
    )
}
