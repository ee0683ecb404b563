//! Alphabet, parsing, exact evaluation and data generation.
//!
//! `parse` + `evaluate` and `evaluate_independent` are two unrelated routes
//! to the same exact integer value; every generated sample must agree on
//! both.

mod alphabet;
mod ast;
mod dataset;
mod shunting;
mod task;

pub use alphabet::{detokenize, tokenize, Token, TokenSeq, VOCAB_SIZE};
pub use ast::{evaluate, parse, parse_answer, render, BinOp, Expr};
pub use dataset::{parse_dataset, read_dataset, write_dataset};
pub use shunting::evaluate_independent;
pub use task::{
    generate_sample, generate_samples, OperandShape, Sample, TaskSpec, GENERATION_ATTEMPTS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("empty input")]
    EmptyInput,
    #[error("unknown character at position {0}")]
    UnknownCharacter(usize),
    #[error("syntax error at position {0}")]
    Syntax(usize),
    #[error("division by zero")]
    DivisionByZero,
    #[error("inexact division")]
    InexactDivision,
    #[error("negative intermediate value")]
    NegativeIntermediate,
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("generation budget exhausted for task {0}")]
    GenerationExhausted(String),
    #[error("malformed dataset line {0}")]
    Format(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for ExprError {
    fn eq(&self, other: &Self) -> bool {
        use ExprError::*;
        match (self, other) {
            (UnknownCharacter(a), UnknownCharacter(b))
            | (Syntax(a), Syntax(b))
            | (Format(a), Format(b)) => a == b,
            (InvalidSpec(a), InvalidSpec(b)) | (GenerationExhausted(a), GenerationExhausted(b)) => {
                a == b
            }
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}
