//! Sessions and the per-turn driver: one tree tick per user turn, replies
//! appended to the history, execution applied after the tick.

mod leaves;
pub mod replies;

use std::time::Instant;

use chrono::{DateTime, Duration as ChronoDuration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::baseline;
use crate::bt::{tick, Blackboard, TickTrace, TreeError, TreeSpec};
use crate::config::Kitchen;
use crate::domain::{Classification, ConversationHistory, Role, TaskLibrary, TaskSequence, Verdict};
use crate::guards::CandidateSet;
use crate::llm::{ChatBackend, Llm, PromptSet, TallyBackend};

pub use leaves::{keys, BoardValue, TurnLeaves, EFFECTS, PREDICATES};

const BUILTIN_TREES: &str = include_str!("../../../../config/trees.json");

/// The two trees a session ticks: the main one and the one used while a
/// generated sequence awaits confirmation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trees {
    pub bt_action: TreeSpec,
    pub confirmation: TreeSpec,
}

#[derive(Deserialize)]
struct TreesFile {
    bt_action: crate::bt::NodeSpec,
    confirmation: crate::bt::NodeSpec,
}

impl Trees {
    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let file: TreesFile = serde_json::from_str(text).map_err(|e| TreeError::Parse(e.to_string()))?;
        let trees = Self {
            bt_action: crate::bt::build_tree(file.bt_action)?,
            confirmation: crate::bt::build_tree(file.confirmation)?,
        };
        trees.bt_action.check_references(PREDICATES, EFFECTS)?;
        trees.confirmation.check_references(PREDICATES, EFFECTS)?;
        Ok(trees)
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TREES).expect("shipped trees are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    BtAction,
    Baseline,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::BtAction => "bt_action",
            SystemKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bt_action" => Ok(SystemKind::BtAction),
            "baseline" => Ok(SystemKind::Baseline),
            other => Err(format!("unknown system '{other}' (expected bt_action or baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Acknowledgment,
    ClarificationQuestion,
    ConfirmationRequest,
    InfeasibilityExplanation,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attachment {
    Sequence(TaskSequence),
    Candidates(CandidateSet),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotReply {
    pub text: String,
    pub kind: ReplyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachments: Option<Attachment>,
}

impl RobotReply {
    pub fn new(text: impl Into<String>, kind: ReplyKind) -> Self {
        Self {
            text: text.into(),
            kind,
            attachments: None,
        }
    }

    pub fn with(mut self, attachment: Attachment) -> Self {
        self.attachments = Some(attachment);
        self
    }

    pub fn sequence(&self) -> Option<&TaskSequence> {
        match &self.attachments {
            Some(Attachment::Sequence(s)) => Some(s),
            _ => None,
        }
    }

    pub fn candidates(&self) -> Option<&CandidateSet> {
        match &self.attachments {
            Some(Attachment::Candidates(c)) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Pending {
    None,
    AwaitingClarification,
    AwaitingConfirmation { sequence: TaskSequence },
}

impl Pending {
    pub fn name(&self) -> &'static str {
        match self {
            Pending::None => "none",
            Pending::AwaitingClarification => "awaiting_clarification",
            Pending::AwaitingConfirmation { .. } => "awaiting_confirmation",
        }
    }
}

/// How an executed sequence got past the guards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum Provenance {
    /// Library task confirmed by a single candidate and the mapping re-check.
    Known { candidates: Vec<String>, mapping_confirmed: bool },
    /// Generated sequence that passed validation and was confirmed by the user.
    Generated { diagnostics: usize, user_confirmed: bool },
    /// Baseline output; no guards ran.
    Unguarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedTask {
    pub turn: usize,
    pub sequence: TaskSequence,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: usize,
    pub user_text: String,
    pub reply: RobotReply,
    /// The verdict of this turn's classification; absent for confirmation
    /// turns and turns lost to a backend outage.
    pub verdict: Option<Verdict>,
    /// JSON found in the model output that this turn surfaced (generated
    /// sequences for the tree system, extracted blocks for the baseline).
    pub emitted_json: Option<String>,
    pub executed: Option<TaskSequence>,
    pub trace: TickTrace,
    pub llm_calls: usize,
    pub llm_failures: usize,
    pub terminal: bool,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub elapsed_ms: f64,
}

/// Wall-clock timestamps that never go backwards within a session.
#[derive(Debug, Clone)]
struct SessionClock {
    origin: DateTime<Utc>,
    start: Instant,
}

impl SessionClock {
    fn new() -> Self {
        Self {
            origin: Utc::now(),
            start: Instant::now(),
        }
    }

    fn now(&self) -> DateTime<Utc> {
        let elapsed = ChronoDuration::from_std(self.start.elapsed()).unwrap_or_else(|_| ChronoDuration::zero());
        self.origin + elapsed
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: Uuid,
    pub system: SystemKind,
    pub created_at: DateTime<Utc>,
    pub history: ConversationHistory,
    pub session_library: TaskLibrary,
    pub pending: Pending,
    pub executed: Vec<ExecutedTask>,
    pub turns: Vec<TurnRecord>,
    /// Consecutive clarification or fallback replies.
    pub fallback_streak: u32,
    pub proposals: u32,
    clock: SessionClock,
}

impl Session {
    pub fn new(system: SystemKind, library: TaskLibrary) -> Self {
        let clock = SessionClock::new();
        Self {
            id: Uuid::new_v4(),
            system,
            created_at: clock.now(),
            history: ConversationHistory::new(),
            session_library: library,
            pending: Pending::None,
            executed: Vec::new(),
            turns: Vec::new(),
            fallback_streak: 0,
            proposals: 0,
            clock,
        }
    }

    pub fn traces(&self) -> Vec<&TickTrace> {
        self.turns.iter().map(|t| &t.trace).collect()
    }

    pub(crate) fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TurnError {
    #[error("the message is empty")]
    EmptyInstruction,
}

/// Immutable per-deployment state shared by all sessions.
#[derive(Debug, Clone)]
pub struct Engine {
    pub kitchen: Kitchen,
    pub prompts: PromptSet,
    pub trees: Trees,
    pub max_fallback_turns: u32,
}

/// What a tick produced, before it is applied to the session.
struct TickOutcome {
    reply: RobotReply,
    trace: TickTrace,
    verdict: Option<Verdict>,
    execute: Option<(TaskSequence, Provenance)>,
    pending: Pending,
    emitted_json: Option<String>,
}

impl Engine {
    pub fn new(kitchen: Kitchen, prompts: PromptSet, trees: Trees, max_fallback_turns: u32) -> Self {
        Self {
            kitchen,
            prompts,
            trees,
            max_fallback_turns: max_fallback_turns.max(1),
        }
    }

    pub fn from_config(config: &crate::config::AppConfig) -> Self {
        Self::new(
            config.kitchen.clone(),
            config.prompts.clone(),
            config.trees.clone(),
            config.max_fallback_turns,
        )
    }

    pub fn new_session(&self, system: SystemKind) -> Session {
        Session::new(system, self.kitchen.library.clone())
    }

    /// Processes one user message and returns the robot's reply.
    ///
    /// Exactly one user and one robot utterance are appended to the history.
    pub fn run_turn(&self, session: &mut Session, text: &str, backend: &dyn ChatBackend) -> Result<RobotReply, TurnError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(TurnError::EmptyInstruction);
        }
        let started_at = session.now();
        let timer = Instant::now();
        let tally = TallyBackend::new(backend);
        let llm = Llm::new(&tally, &self.prompts);

        let outcome = match session.system {
            SystemKind::BtAction => {
                session
                    .history
                    .append(Role::User, text, session.now())
                    .expect("user text is non-empty");
                let outcome = self.bt_tick(session, text, llm);
                if tally.total_outage().is_some() && !matches!(session.pending, Pending::AwaitingConfirmation { .. }) {
                    TickOutcome {
                        reply: RobotReply::new(replies::OUTAGE_RETRY, ReplyKind::Fallback),
                        trace: outcome.trace,
                        verdict: None,
                        execute: None,
                        pending: session.pending.clone(),
                        emitted_json: None,
                    }
                } else {
                    outcome
                }
            }
            SystemKind::Baseline => {
                let out = baseline::baseline_turn(&self.kitchen, session, text, llm);
                session
                    .history
                    .append(Role::User, text, session.now())
                    .expect("user text is non-empty");
                TickOutcome {
                    reply: out.reply,
                    trace: TickTrace::default(),
                    verdict: out.verdict,
                    execute: out.execute.map(|s| (s, Provenance::Unguarded)),
                    pending: out.pending,
                    emitted_json: out.emitted_json,
                }
            }
        };

        let TickOutcome {
            mut reply,
            trace,
            verdict,
            execute,
            mut pending,
            emitted_json,
        } = outcome;
        let turn = session.turns.len();

        let mut executed = None;
        if let Some((seq, provenance)) = execute {
            tracing::info!(
                target: "btaction::execution",
                session = %session.id,
                turn,
                sequence = %seq.to_wire_json(),
                "executing task"
            );
            if matches!(provenance, Provenance::Generated { .. }) && !session.session_library.contains(&seq.task_name) {
                if let Err(e) = session.session_library.push(seq.clone()) {
                    tracing::warn!(error = %e, "could not add generated task to the session library");
                }
            }
            session.executed.push(ExecutedTask {
                turn,
                sequence: seq.clone(),
                provenance,
            });
            executed = Some(seq);
        }
        if reply.kind == ReplyKind::ConfirmationRequest {
            session.proposals += 1;
        }

        let mut terminal = false;
        if session.system == SystemKind::BtAction {
            if matches!(reply.kind, ReplyKind::ClarificationQuestion | ReplyKind::Fallback) {
                session.fallback_streak += 1;
                if session.fallback_streak >= self.max_fallback_turns {
                    reply = RobotReply::new(replies::TERMINAL_FALLBACK, ReplyKind::Fallback);
                    pending = Pending::None;
                    session.fallback_streak = 0;
                    terminal = true;
                }
            } else {
                session.fallback_streak = 0;
            }
        }
        session.pending = pending;

        session
            .history
            .append(Role::Robot, reply.text.clone(), session.now())
            .expect("replies are non-empty");
        let finished_at = session.now();
        session.turns.push(TurnRecord {
            index: turn,
            user_text: text.to_string(),
            reply: reply.clone(),
            verdict,
            emitted_json,
            executed,
            trace,
            llm_calls: tally.calls(),
            llm_failures: tally.failures(),
            terminal,
            started_at,
            finished_at,
            elapsed_ms: timer.elapsed().as_secs_f64() * 1000.0,
        });
        Ok(reply)
    }

    fn bt_tick(&self, session: &Session, text: &str, llm: Llm<'_>) -> TickOutcome {
        let mut board = Blackboard::new();
        board
            .set(keys::INSTRUCTION, BoardValue::Text(text.to_string()))
            .expect("fresh board");
        board
            .set(keys::HISTORY, BoardValue::History(session.history.clone()))
            .expect("fresh board");
        let confirming = match &session.pending {
            Pending::AwaitingConfirmation { sequence } => {
                board
                    .set(keys::PROPOSAL, BoardValue::Sequence(sequence.clone()))
                    .expect("fresh board");
                true
            }
            _ => false,
        };
        let mut leaves = TurnLeaves {
            kitchen: &self.kitchen,
            library: &session.session_library,
            llm,
            proposals_so_far: session.proposals,
        };
        let tree = if confirming {
            &self.trees.confirmation
        } else {
            &self.trees.bt_action
        };
        let (_, trace) = tick(tree, &mut board, &mut leaves);

        let reply = leaves::get_reply(&board, keys::REPLY)
            .cloned()
            .unwrap_or_else(|_| RobotReply::new(replies::RESTATE_AFTER_INVALID, ReplyKind::Fallback));
        let execute = leaves::get_sequence(&board, keys::EXECUTE).ok().cloned().map(|seq| {
            let provenance = if confirming {
                Provenance::Generated {
                    diagnostics: 0,
                    user_confirmed: leaves::get_flag(&board, keys::AFFIRMED).copied().unwrap_or(false),
                }
            } else {
                Provenance::Known {
                    candidates: leaves::get_candidates(&board, keys::CANDIDATES)
                        .map(|c| c.tasks().to_vec())
                        .unwrap_or_default(),
                    mapping_confirmed: leaves::get_flag(&board, keys::MAPPING_CONFIRMED).copied().unwrap_or(false),
                }
            };
            (seq, provenance)
        });
        let verdict = if confirming {
            None
        } else {
            derive_classification(&board).map(|c| c.verdict())
        };
        let pending = match reply.kind {
            ReplyKind::ClarificationQuestion => Pending::AwaitingClarification,
            ReplyKind::ConfirmationRequest => match reply.sequence() {
                Some(seq) => Pending::AwaitingConfirmation { sequence: seq.clone() },
                None => Pending::None,
            },
            _ => Pending::None,
        };
        let emitted_json = if reply.kind == ReplyKind::ConfirmationRequest {
            reply.sequence().map(TaskSequence::to_wire_json)
        } else {
            None
        };
        TickOutcome {
            reply,
            trace,
            verdict,
            execute,
            pending,
            emitted_json,
        }
    }
}

/// The turn's verdict, read back from what the condition leaves wrote.
///
/// First true check wins: ambiguous; known match with a unique, confirmed
/// candidate; infeasible; otherwise modification. A known match whose
/// candidate set is not a singleton is ambiguous; one whose mapping was
/// rejected falls through to the feasibility check.
pub fn derive_classification(board: &Blackboard<BoardValue>) -> Option<Classification> {
    if *leaves::get_flag(board, keys::AMBIGUOUS).ok()? {
        return Some(Classification::ambiguous());
    }
    if leaves::get_flag(board, keys::KNOWN_MATCH).copied().unwrap_or(false) {
        if let Ok(candidates) = leaves::get_candidates(board, keys::CANDIDATES) {
            if candidates.len() != 1 {
                return Some(Classification::ambiguous());
            }
        }
        if let Ok(task) = leaves::get_sequence(board, keys::MAPPED_TASK) {
            return Some(Classification::clear(task.task_name.clone()));
        }
        // A single candidate the mapping check rejected is a modification
        // of that task; the safety check is not consulted.
        if board.contains(keys::CANDIDATES) {
            return Some(Classification::modification());
        }
    }
    let safety = leaves::get_safety(board, keys::SAFETY).ok()?;
    Some(if safety.feasible {
        Classification::modification()
    } else {
        Classification::infeasible()
    })
}
