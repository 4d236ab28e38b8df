//! Behavior-tree orchestration of LLM calls for a kitchen-assistant robot.
//!
//! User instructions are classified as clear, ambiguous, modification or
//! infeasible by a behavior tree whose leaves prompt a chat model; guard
//! leaves keep unvalidated sequences from ever reaching execution.

pub mod baseline;
pub mod bt;
pub mod classifier;
pub mod config;
pub mod domain;
pub mod eval;
pub mod guards;
pub mod llm;
pub mod orchestrator;
pub mod seqgen;
pub mod wire;
