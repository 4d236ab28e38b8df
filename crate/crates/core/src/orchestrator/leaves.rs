//! Leaf handlers for the shipped trees.
//!
//! Leaves only read and write the blackboard; the orchestrator applies the
//! outcome (execution, pending state, library growth) after the tick.

use crate::bt::{Blackboard, BoardError, LeafError, Leaves, NodeStatus};
use crate::classifier::{check_ambiguous, check_known_match};
use crate::config::Kitchen;
use crate::domain::{lookup_task, ConversationHistory, TaskLibrary, TaskSequence};
use crate::guards::{check_mapping, check_new_seq, knowno, run_safety_check, CandidateSet, SafetyVerdict, ValidationReport};
use crate::llm::{parse_bool_answer, render_user_embedding, encode_history, Llm, PromptKind};
use crate::seqgen::{generate_sequence, name_generated_task, GenerationRequest};

use super::replies;
use super::{Attachment, ReplyKind, RobotReply};

pub const PREDICATES: &[&str] = &[
    "is_ambiguous",
    "is_known_task",
    "single_candidate",
    "multiple_candidates",
    "no_candidates",
    "mapping_confirmed",
    "is_feasible",
    "sequence_valid",
    "user_affirmed",
];

pub const EFFECTS: &[&str] = &[
    "ask_followup",
    "run_knowno",
    "ask_candidate_clarification",
    "acknowledge_execution",
    "generate_sequence",
    "request_confirmation",
    "ask_restate",
    "explain_infeasible",
    "execute_confirmed",
    "ask_restate_after_rejection",
];

pub mod keys {
    pub const INSTRUCTION: &str = "u";
    pub const HISTORY: &str = "history";
    pub const AMBIGUOUS: &str = "ambiguous";
    pub const KNOWN_MATCH: &str = "known_match";
    pub const CANDIDATES: &str = "candidates";
    pub const MAPPING_CONFIRMED: &str = "mapping_confirmed";
    pub const MAPPED_TASK: &str = "mapped_task";
    pub const SAFETY: &str = "safety";
    pub const GENERATED_RAW: &str = "generated_raw";
    pub const VALIDATION: &str = "validation";
    pub const VALIDATED: &str = "validated_sequence";
    pub const PROPOSAL: &str = "proposal";
    pub const AFFIRMED: &str = "affirmed";
    pub const EXECUTE: &str = "execute";
    pub const REPLY: &str = "reply";
}

/// Typed blackboard values.
#[derive(Debug, Clone, PartialEq)]
pub enum BoardValue {
    Text(String),
    Flag(bool),
    History(ConversationHistory),
    Candidates(CandidateSet),
    Sequence(TaskSequence),
    Safety(SafetyVerdict),
    Validation(ValidationReport),
    Reply(RobotReply),
}

macro_rules! getter {
    ($fn:ident, $variant:ident, $ty:ty) => {
        pub fn $fn<'b>(board: &'b Blackboard<BoardValue>, key: &str) -> Result<&'b $ty, BoardError> {
            match board.get(key)? {
                BoardValue::$variant(v) => Ok(v),
                _ => Err(BoardError::WrongType(key.to_string())),
            }
        }
    };
}

getter!(get_text, Text, String);
getter!(get_flag, Flag, bool);
getter!(get_history, History, ConversationHistory);
getter!(get_candidates, Candidates, CandidateSet);
getter!(get_sequence, Sequence, TaskSequence);
getter!(get_safety, Safety, SafetyVerdict);
getter!(get_reply, Reply, RobotReply);

pub struct TurnLeaves<'a> {
    pub kitchen: &'a Kitchen,
    pub library: &'a TaskLibrary,
    pub llm: Llm<'a>,
    /// Proposals made earlier in the session, for naming.
    pub proposals_so_far: u32,
}

impl TurnLeaves<'_> {
    fn reply(&self, board: &mut Blackboard<BoardValue>, reply: RobotReply) -> Result<NodeStatus, LeafError> {
        board.set(keys::REPLY, BoardValue::Reply(reply))?;
        Ok(NodeStatus::Success)
    }

    fn inputs<'b>(&self, board: &'b Blackboard<BoardValue>) -> Result<(&'b str, &'b ConversationHistory), LeafError> {
        Ok((
            get_text(board, keys::INSTRUCTION)?.as_str(),
            get_history(board, keys::HISTORY)?,
        ))
    }
}

impl Leaves<BoardValue> for TurnLeaves<'_> {
    fn condition(&mut self, predicate: &str, board: &mut Blackboard<BoardValue>) -> Result<bool, LeafError> {
        match predicate {
            "is_ambiguous" => {
                let (u, h) = self.inputs(board)?;
                let out = check_ambiguous(u, h, self.library, self.llm);
                board.set(keys::AMBIGUOUS, BoardValue::Flag(out.answer))?;
                Ok(out.answer)
            }
            "is_known_task" => {
                let (u, h) = self.inputs(board)?;
                let out = check_known_match(u, h, self.library, &self.kitchen.inventory, self.llm);
                board.set(keys::KNOWN_MATCH, BoardValue::Flag(out.answer))?;
                Ok(out.answer)
            }
            "single_candidate" => Ok(get_candidates(board, keys::CANDIDATES)?.len() == 1),
            "multiple_candidates" => Ok(get_candidates(board, keys::CANDIDATES)?.len() > 1),
            "no_candidates" => Ok(get_candidates(board, keys::CANDIDATES)?.is_empty()),
            "mapping_confirmed" => {
                let (u, h) = self.inputs(board)?;
                let candidates = get_candidates(board, keys::CANDIDATES)?;
                let name = candidates
                    .single()
                    .ok_or_else(|| LeafError::new("mapping check needs exactly one candidate"))?;
                let task = lookup_task(name, self.library)
                    .ok_or_else(|| LeafError::new(format!("candidate '{name}' is not in the library")))?
                    .clone();
                // A backend failure counts as a rejection.
                let confirmed = check_mapping(u, h, &task, self.llm).unwrap_or(false);
                board.set(keys::MAPPING_CONFIRMED, BoardValue::Flag(confirmed))?;
                if confirmed {
                    board.set(keys::MAPPED_TASK, BoardValue::Sequence(task))?;
                }
                Ok(confirmed)
            }
            "is_feasible" => {
                let (u, h) = self.inputs(board)?;
                let (verdict, _) = run_safety_check(u, h, &self.kitchen.catalog, &self.kitchen.inventory, self.llm);
                let feasible = verdict.feasible;
                board.set(keys::SAFETY, BoardValue::Safety(verdict))?;
                Ok(feasible)
            }
            "sequence_valid" => {
                let raw = get_text(board, keys::GENERATED_RAW)?.clone();
                let (report, seq) = check_new_seq(&raw, &self.kitchen.catalog, &self.kitchen.inventory);
                let valid = report.valid;
                board.set(keys::VALIDATION, BoardValue::Validation(report))?;
                if let Some(seq) = seq {
                    board.set(keys::VALIDATED, BoardValue::Sequence(seq))?;
                }
                Ok(valid)
            }
            "user_affirmed" => {
                let (r, h) = self.inputs(board)?;
                let embedded = render_user_embedding(r).map_err(|e| LeafError::new(e.to_string()))?;
                let affirmed = self
                    .llm
                    .ask(PromptKind::Confirmation, &[], &[embedded, encode_history(h)])
                    .ok()
                    .and_then(|raw| parse_bool_answer(&raw))
                    .unwrap_or(false);
                board.set(keys::AFFIRMED, BoardValue::Flag(affirmed))?;
                Ok(affirmed)
            }
            other => Err(LeafError::new(format!("unknown predicate '{other}'"))),
        }
    }

    fn action(&mut self, effect: &str, board: &mut Blackboard<BoardValue>) -> Result<NodeStatus, LeafError> {
        match effect {
            "ask_followup" => {
                let (_, h) = self.inputs(board)?;
                let text = replies::make_followup_question(h, self.library, self.llm);
                self.reply(board, RobotReply::new(text, ReplyKind::ClarificationQuestion))
            }
            "run_knowno" => {
                let (u, h) = self.inputs(board)?;
                let set = knowno(u, h, self.library, self.llm);
                board.set(keys::CANDIDATES, BoardValue::Candidates(set))?;
                Ok(NodeStatus::Success)
            }
            "ask_candidate_clarification" => {
                let set = get_candidates(board, keys::CANDIDATES)?.clone();
                let reply = RobotReply::new(replies::candidate_question(set.tasks()), ReplyKind::ClarificationQuestion)
                    .with(Attachment::Candidates(set));
                self.reply(board, reply)
            }
            "acknowledge_execution" => {
                let task = get_sequence(board, keys::MAPPED_TASK)?.clone();
                let reply = RobotReply::new(replies::acknowledgment(&task.task_name), ReplyKind::Acknowledgment)
                    .with(Attachment::Sequence(task.clone()));
                board.set(keys::EXECUTE, BoardValue::Sequence(task))?;
                self.reply(board, reply)
            }
            "generate_sequence" => {
                let (u, h) = self.inputs(board)?;
                let req = GenerationRequest {
                    instruction: u,
                    history: h,
                    library: self.library,
                    catalog: &self.kitchen.catalog,
                    inventory: &self.kitchen.inventory,
                };
                match generate_sequence(&req, self.llm) {
                    Ok(raw) => {
                        board.set(keys::GENERATED_RAW, BoardValue::Text(raw))?;
                        Ok(NodeStatus::Success)
                    }
                    Err(e) => Err(LeafError::new(format!("generation failed: {e}"))),
                }
            }
            "request_confirmation" => {
                let (u, h) = self.inputs(board)?;
                let mut seq = get_sequence(board, keys::VALIDATED)?.clone();
                seq.task_name = name_generated_task(&seq, u, self.library, self.proposals_so_far + 1);
                let text = replies::summarize_for_confirmation(&seq, h, self.llm);
                board.set(keys::PROPOSAL, BoardValue::Sequence(seq.clone()))?;
                self.reply(
                    board,
                    RobotReply::new(text, ReplyKind::ConfirmationRequest).with(Attachment::Sequence(seq)),
                )
            }
            "ask_restate" => self.reply(
                board,
                RobotReply::new(replies::RESTATE_AFTER_INVALID, ReplyKind::Fallback),
            ),
            "explain_infeasible" => {
                let (u, _) = self.inputs(board)?;
                let reason = match get_safety(board, keys::SAFETY) {
                    Ok(v) if !v.feasible => v.reason.clone(),
                    _ => "I could not confirm that this request is something I can do".to_string(),
                };
                let text =
                    replies::explain_infeasible(u, &reason, &self.kitchen.catalog, &self.kitchen.inventory, self.llm);
                self.reply(board, RobotReply::new(text, ReplyKind::InfeasibilityExplanation))
            }
            "execute_confirmed" => {
                let seq = get_sequence(board, keys::PROPOSAL)?.clone();
                let reply = RobotReply::new(replies::confirmed_acknowledgment(&seq.task_name), ReplyKind::Acknowledgment)
                    .with(Attachment::Sequence(seq.clone()));
                board.set(keys::EXECUTE, BoardValue::Sequence(seq))?;
                self.reply(board, reply)
            }
            "ask_restate_after_rejection" => self.reply(
                board,
                RobotReply::new(replies::RESTATE_AFTER_REJECTION, ReplyKind::Fallback),
            ),
            other => Err(LeafError::new(format!("unknown effect '{other}'"))),
        }
    }
}
