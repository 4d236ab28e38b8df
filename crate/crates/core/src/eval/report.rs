use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{TaskSequence, Verdict};
use crate::orchestrator::{ReplyKind, SystemKind, TurnRecord};

use super::detect::{TaxonomyError, TaxonomyKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOutcome {
    Pass,
    Fail,
    /// The replay itself broke; counted as a failure.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSummary {
    pub index: usize,
    pub user_text: String,
    pub reply: String,
    pub kind: ReplyKind,
    pub verdict: Option<Verdict>,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl From<&TurnRecord> for TurnSummary {
    fn from(t: &TurnRecord) -> Self {
        Self {
            index: t.index,
            user_text: t.user_text.clone(),
            reply: t.reply.text.clone(),
            kind: t.reply.kind,
            verdict: t.verdict,
            llm_calls: t.llm_calls,
            started_at: Some(t.started_at),
            finished_at: Some(t.finished_at),
            elapsed_ms: Some(t.elapsed_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    pub category: Verdict,
    pub observed_verdict: Option<Verdict>,
    pub outcome: CaseOutcome,
    pub failures: Vec<String>,
    pub taxonomy_errors: Vec<TaxonomyError>,
    pub turn_count: usize,
    pub turns: Vec<TurnSummary>,
    pub executed: Vec<TaskSequence>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.outcome == CaseOutcome::Pass
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub total: usize,
    pub passed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub system: SystemKind,
    pub total: usize,
    pub passed: usize,
    pub by_category: BTreeMap<String, CategoryTally>,
    /// Count per taxonomy kind; every kind is present, zero or not.
    pub taxonomy: BTreeMap<String, usize>,
    pub cases: Vec<CaseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl RunReport {
    pub fn new(system: SystemKind, cases: Vec<CaseReport>, elapsed_ms: f64) -> Self {
        let mut by_category: BTreeMap<String, CategoryTally> =
            Verdict::ALL.iter().map(|v| (v.to_string(), CategoryTally::default())).collect();
        let mut taxonomy: BTreeMap<String, usize> =
            TaxonomyKind::ALL.iter().map(|k| (k.name().to_string(), 0)).collect();
        for case in &cases {
            let tally = by_category.entry(case.category.to_string()).or_default();
            tally.total += 1;
            tally.passed += usize::from(case.passed());
            for e in &case.taxonomy_errors {
                *taxonomy.entry(e.kind.name().to_string()).or_default() += 1;
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            system,
            total: cases.len(),
            passed: cases.iter().filter(|c| c.passed()).count(),
            by_category,
            taxonomy,
            cases,
            elapsed_ms: Some(elapsed_ms),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }

    /// Drops wall-clock fields so two runs can be compared byte for byte.
    pub fn strip_timings(&mut self) {
        self.elapsed_ms = None;
        for case in &mut self.cases {
            for turn in &mut case.turns {
                turn.started_at = None;
                turn.finished_at = None;
                turn.elapsed_ms = None;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(Format::Human),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (expected human or json)")),
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Human => human(report),
    }
}

fn human(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "system: {}", report.system.name());
    for case in &report.cases {
        let mark = match case.outcome {
            CaseOutcome::Pass => "PASS",
            CaseOutcome::Fail => "FAIL",
            CaseOutcome::Error => "ERROR",
        };
        let observed = case.observed_verdict.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{mark:5} {:<18} {:<12} observed {:<12} turns {}",
            case.id, case.category, observed, case.turn_count
        );
        for f in &case.failures {
            let _ = writeln!(out, "      {f}");
        }
        for e in &case.taxonomy_errors {
            let _ = writeln!(out, "      [{}] {}", e.kind.name(), e.evidence);
        }
    }
    let _ = writeln!(out);
    for (category, tally) in &report.by_category {
        let _ = writeln!(out, "{category:<12} {}/{}", tally.passed, tally.total);
    }
    let errors: Vec<String> = report.taxonomy.iter().map(|(k, n)| format!("{k}={n}")).collect();
    let _ = writeln!(out, "taxonomy: {}", errors.join(" "));
    if let Some(ms) = report.elapsed_ms {
        let _ = writeln!(out, "elapsed: {ms:.1} ms");
    }
    let _ = writeln!(out, "{}/{} cases passed", report.passed, report.total);
    out
}
