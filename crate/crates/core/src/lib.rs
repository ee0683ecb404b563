//! Hierarchical skill-module arithmetic calculator.
//!
//! Basic skill modules (supervised Bi-GRU sequence labelers) solve
//! single-digit operations. Interactive skill modules run an episodic
//! machine over a character memory: at every step they pick a frozen
//! sub-module, two read spans and a write span, invoke the sub-module on the
//! read text and splice its answer back into memory. They are trained with
//! PPO while a curriculum teacher orders the tasks, samples hard examples
//! more often and adjusts the entropy bonus.

pub mod bsm;
pub mod ctcs;
pub mod expr;
pub mod harness;
pub mod ism;
pub mod nn;
pub mod ppo;
pub mod skill;
