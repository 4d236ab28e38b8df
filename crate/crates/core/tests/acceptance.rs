//! Acceptance criteria for the tree-guarded orchestrator. Prints one line per
//! criterion and exits non-zero if any of them fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use btaction_core::bt::NodeStatus;
use btaction_core::config::AppConfig;
use btaction_core::domain::{
    lookup_task, ActionCall, ArgValue, DiagnosticKind, ParamKind, Role, TaskLibrary, TaskSequence, Verdict,
};
use btaction_core::eval::{
    canonical_backend, detect_taxonomy_errors, emit_report, golden_trace_text, load_cases, run_case, run_suite,
    score_case, CaseRecord, Format, TaxonomyKind, Transcript,
};
use btaction_core::guards::{check_new_seq, option_label};
use btaction_core::llm::{CountingBackend, PromptKind, RuleMatcher, ScriptRule, ScriptedBackend};
use btaction_core::orchestrator::{
    Engine, ExecutedTask, ReplyKind, RobotReply, Session, SystemKind, TurnRecord,
};
use btaction_core::wire::parse_sequence;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Fixture {
    engine: Engine,
    cases: Vec<CaseRecord>,
    /// The kitchen file as plain JSON, for checks that must not reuse the
    /// crate's own domain types.
    raw_kitchen: Value,
}

impl Fixture {
    fn load() -> Self {
        let path = root().join("config/kitchen.json");
        let config = AppConfig::load(&path).expect("config loads");
        let engine = Engine::from_config(&config);
        let cases = load_cases(&root().join("data/cases.json")).expect("cases load");
        let raw_kitchen = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        Self {
            engine,
            cases,
            raw_kitchen,
        }
    }

    fn canonical(&self) -> ScriptedBackend {
        canonical_backend(&self.cases, &self.engine.kitchen.library).expect("canonical rules")
    }

    fn library(&self) -> &TaskLibrary {
        &self.engine.kitchen.library
    }
}

// ---------------------------------------------------------------------------
// Brute-force re-validator. Works on serde_json values and the raw kitchen
// file only.

struct RawKitchen {
    actions: BTreeMap<String, Vec<(String, String)>>,
    ingredients: Vec<String>,
    limit: i64,
}

fn norm(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

impl RawKitchen {
    fn from(raw: &Value) -> Self {
        let mut actions = BTreeMap::new();
        for a in raw["catalog"].as_array().unwrap() {
            let params = a["params"]
                .as_array()
                .map(|ps| {
                    ps.iter()
                        .map(|p| (p["name"].as_str().unwrap().to_string(), p["kind"].as_str().unwrap().to_string()))
                        .collect()
                })
                .unwrap_or_default();
            actions.insert(a["name"].as_str().unwrap().to_string(), params);
        }
        let ingredients = raw["inventory"]["ingredients"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| norm(v.as_str().unwrap()))
            .collect();
        Self {
            actions,
            ingredients,
            limit: raw["quantity_limit"].as_i64().unwrap_or(10),
        }
    }

    /// The object a completion carries: inside the first fence if there is
    /// one, otherwise the first value starting at the first brace.
    fn object_of(text: &str) -> Option<Value> {
        let body = match text.find("```") {
            Some(open) => {
                let rest = &text[open + 3..];
                let rest = &rest[rest.find('\n')? + 1..];
                &rest[..rest.find("```")?]
            }
            None => text,
        };
        let start = body.find('{')?;
        serde_json::Deserializer::from_str(&body[start..])
            .into_iter::<Value>()
            .next()?
            .ok()
    }

    fn accepts(&self, text: &str) -> bool {
        let Some(obj) = Self::object_of(text) else { return false };
        if !obj["task_name"].is_string() {
            return false;
        }
        let Some(steps) = obj["steps"].as_array() else { return false };
        if steps.is_empty() {
            return false;
        }
        steps.iter().all(|step| {
            let Some(params) = step["action"].as_str().and_then(|a| self.actions.get(&norm(a))) else {
                return false;
            };
            let empty = serde_json::Map::new();
            let args = match &step["args"] {
                Value::Null => &empty,
                Value::Object(m) => m,
                _ => return false,
            };
            if args.len() != params.len() {
                return false;
            }
            params.iter().all(|(name, kind)| match (kind.as_str(), args.get(name)) {
                ("ingredient", Some(Value::String(s))) => self.ingredients.contains(&norm(s)),
                ("quantity", Some(Value::Number(n))) => n.as_i64().is_some_and(|q| (1..=self.limit).contains(&q)),
                ("free_text", Some(Value::String(_))) => true,
                _ => false,
            })
        })
    }
}

// ---------------------------------------------------------------------------
// Random sequences and completions.

fn random_valid_sequence(rng: &mut StdRng, fx: &Fixture) -> TaskSequence {
    let specs: Vec<_> = fx.engine.kitchen.catalog.specs().collect();
    let ingredients: Vec<&str> = fx.engine.kitchen.inventory.ingredients().collect();
    let n = rng.gen_range(1..=6);
    let steps = (0..n)
        .map(|_| {
            let spec = specs.choose(rng).unwrap();
            let mut call = ActionCall::new(spec.name.clone());
            for p in &spec.params {
                let value = match p.kind {
                    ParamKind::Ingredient => ArgValue::Text(ingredients.choose(rng).unwrap().to_string()),
                    ParamKind::Quantity => ArgValue::Int(rng.gen_range(1..=10)),
                    ParamKind::FreeText => ArgValue::Text("breakfast plate".into()),
                };
                call = call.arg(p.name.clone(), value);
            }
            call
        })
        .collect();
    TaskSequence {
        task_name: "random plate".into(),
        steps,
    }
}

#[derive(Debug, Clone, Copy)]
enum Attack {
    UnknownAction,
    UnknownIngredient,
    Quantity,
    Malformed,
    Empty,
}

const ATTACKS: [Attack; 5] = [
    Attack::UnknownAction,
    Attack::UnknownIngredient,
    Attack::Quantity,
    Attack::Malformed,
    Attack::Empty,
];

fn adversarial_completion(rng: &mut StdRng, fx: &Fixture, attack: Attack) -> String {
    let mut seq = random_valid_sequence(rng, fx);
    let i = rng.gen_range(0..seq.steps.len());
    let json = match attack {
        Attack::UnknownAction => {
            seq.steps[i].action = ["juggle", "launch_rocket", "paint_wall", "deep_fry", "cook eggs"].choose(rng).unwrap().to_string();
            seq.to_wire_json()
        }
        Attack::UnknownIngredient => {
            let bogus = ["plutonium", "goat cheese", "dragon fruit", "eggs", ""].choose(rng).unwrap().to_string();
            match seq.steps.iter_mut().find(|s| s.args.contains_key("ingredient")) {
                Some(step) => {
                    step.args.insert("ingredient".into(), ArgValue::Text(bogus));
                }
                None => seq.steps.push(
                    ActionCall::new("get_ingredient")
                        .arg("ingredient", ArgValue::Text(bogus))
                        .arg("quantity", ArgValue::Int(1)),
                ),
            }
            seq.to_wire_json()
        }
        Attack::Quantity => {
            let q = rng.gen_range(11..=1_000_000);
            seq.steps.push(
                ActionCall::new("get_ingredient")
                    .arg("ingredient", ArgValue::Text("egg".into()))
                    .arg("quantity", ArgValue::Int(q)),
            );
            let len = seq.steps.len();
            seq.steps.swap(i, len - 1);
            seq.to_wire_json()
        }
        Attack::Malformed => {
            let wire = seq.to_wire_json();
            match rng.gen_range(0..5) {
                0 => wire[..rng.gen_range(1..wire.len() - 1)].to_string(),
                1 => wire.replacen("\":", "\"", 1),
                2 => wire.replace('"', "'"),
                3 => wire.replacen("}]", "},]", 1),
                _ => "Sure, here is the plan: get bread, toast it, serve.".into(),
            }
        }
        Attack::Empty => {
            seq.steps.clear();
            seq.to_wire_json()
        }
    };
    if rng.gen_bool(0.3) {
        format!("Here is the sequence:\n```json\n{json}\n```")
    } else {
        json
    }
}

// ---------------------------------------------------------------------------
// Backends built from short rule lists.

fn rules(pairs: &[(PromptKind, &str)]) -> ScriptedBackend {
    let mut out: Vec<ScriptRule> = pairs
        .iter()
        .enumerate()
        .map(|(i, (kind, respond))| {
            ScriptRule::new(
                format!("r{i}"),
                RuleMatcher {
                    prompt: Some(kind.name().into()),
                    ..Default::default()
                },
                *respond,
            )
        })
        .collect();
    out.push(ScriptRule::new("catch-all", RuleMatcher::default(), "Okay."));
    ScriptedBackend::new(out).unwrap()
}

// ---------------------------------------------------------------------------
// Guarded-execution oracle, driven by traces and the re-validator.

fn success(turn: &TurnRecord, node: &str) -> bool {
    turn.trace.status_of(node) == Some(NodeStatus::Success)
}

fn check_guarded(
    turns: &[TurnRecord],
    executed: &[ExecutedTask],
    library: &TaskLibrary,
    raw: &RawKitchen,
) -> Result<(), String> {
    let logged = turns.iter().filter(|t| t.executed.is_some()).count();
    if logged != executed.len() {
        return Err(format!("{logged} turns executed but the log has {}", executed.len()));
    }
    for e in executed {
        let turn = turns
            .iter()
            .find(|t| t.index == e.turn)
            .ok_or_else(|| format!("execution at unknown turn {}", e.turn))?;
        if turn.executed.as_ref() != Some(&e.sequence) {
            return Err(format!("turn {} log and record disagree", e.turn));
        }
        let known = success(turn, "known_task_check")
            && success(turn, "knowno")
            && success(turn, "single_candidate")
            && success(turn, "check_mapping")
            && lookup_task(&e.sequence.task_name, library).is_some_and(|t| t.steps == e.sequence.steps);
        let generated = success(turn, "user_affirmed")
            && e.turn > 0
            && turns.iter().find(|t| t.index == e.turn - 1).is_some_and(|prev| {
                prev.reply.kind == ReplyKind::ConfirmationRequest
                    && prev.emitted_json.as_deref().is_some_and(|j| {
                        raw.accepts(j) && parse_sequence(j).is_ok_and(|s| s.steps == e.sequence.steps)
                    })
            });
        if !(known || generated) {
            return Err(format!(
                "turn {} executed '{}' without passing a guard path",
                e.turn, e.sequence.task_name
            ));
        }
    }
    Ok(())
}

fn library_with_generated(base: &TaskLibrary, executed: &[ExecutedTask]) -> TaskLibrary {
    let mut lib = base.clone();
    for e in executed {
        if !lib.contains(&e.sequence.task_name) {
            let _ = lib.push(e.sequence.clone());
        }
    }
    lib
}

// ---------------------------------------------------------------------------
// Criteria.

type Outcome = Result<String, String>;

fn oracle_consistency(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let first = run_suite(SystemKind::BtAction, &fx.cases, &fx.engine, &fx.canonical()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let second = run_suite(SystemKind::BtAction, &fx.cases, &fx.engine, &fx.canonical()).map_err(|e| e.to_string())?;
    let human = emit_report(&first, Format::Human);
    let last = human.lines().last().unwrap_or_default().to_string();
    if last != "18/18 cases passed" || fx.cases.len() != 18 {
        return Err(format!("report ends with '{last}'\n{human}"));
    }
    if elapsed.as_secs_f64() >= 5.0 {
        return Err(format!("took {elapsed:?}"));
    }
    let (mut a, mut b) = (first, second);
    a.strip_timings();
    b.strip_timings();
    if emit_report(&a, Format::Json) != emit_report(&b, Format::Json) {
        return Err("two runs produced different reports".into());
    }
    Ok(format!("18/18 in {:.0} ms, identical across runs", elapsed.as_secs_f64() * 1000.0))
}

fn golden_traces(fx: &Fixture) -> Outcome {
    let expected_branch: [(&str, Verdict, &[&str]); 4] = [
        ("clear", Verdict::Clear, &["clear_subtree", "check_mapping", "acknowledge_execution"]),
        ("ambiguous", Verdict::Ambiguous, &["ambiguous_subtree", "ask_followup"]),
        ("modification", Verdict::Modification, &["modification_subtree", "check_new_seq", "request_confirmation"]),
        ("infeasible", Verdict::Infeasible, &["infeasible_subtree", "explain_infeasible"]),
    ];
    let backend = fx.canonical();
    for (stem, verdict, must_succeed) in expected_branch {
        let case = fx
            .cases
            .iter()
            .find(|c| c.golden_trace.as_deref() == Some(stem))
            .ok_or_else(|| format!("no case names golden trace '{stem}'"))?;
        if case.category != verdict {
            return Err(format!("'{stem}' is attached to a {} case", case.category));
        }
        let path = root().join(format!("crates/core/tests/golden/{stem}.json"));
        let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let got = golden_trace_text(case, &fx.engine, &backend);
        if got != want {
            return Err(format!("{stem}: trace differs from {}\n{got}", path.display()));
        }
        let events: Vec<Value> = serde_json::from_str(&want).unwrap();
        for node in must_succeed {
            let ok = events.iter().any(|e| e["node"] == *node && e["status"] == "Success");
            if !ok {
                return Err(format!("{stem}: golden trace lacks a successful '{node}'"));
            }
        }
    }
    Ok("4 of 4 golden traces match byte for byte".into())
}

fn guard_property(fx: &Fixture) -> Outcome {
    let raw = RawKitchen::from(&fx.raw_kitchen);
    let kitchen = &fx.engine.kitchen;
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut per_attack = BTreeMap::new();
    for i in 0..1000 {
        let attack = ATTACKS[i % ATTACKS.len()];
        let text = adversarial_completion(&mut rng, fx, attack);
        let (report, _) = check_new_seq(&text, &kitchen.catalog, &kitchen.inventory);
        if report.valid {
            return Err(format!("accepted adversarial completion ({attack:?}): {text}"));
        }
        if raw.accepts(&text) {
            return Err(format!("re-validator accepted ({attack:?}): {text}"));
        }
        *per_attack.entry(format!("{attack:?}")).or_insert(0) += 1;
    }
    // The two validators must also agree on well-formed plans.
    for _ in 0..200 {
        let text = random_valid_sequence(&mut rng, fx).to_wire_json();
        let (report, _) = check_new_seq(&text, &kitchen.catalog, &kitchen.inventory);
        if !report.valid || !raw.accepts(&text) {
            return Err(format!("validators disagree on a valid plan: {text}"));
        }
    }
    Ok(format!("0 of 1000 adversarial completions accepted, re-validator agrees ({per_attack:?})"))
}

fn safety_bound(fx: &Fixture) -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let templates = [
        "Add {q} eggs to a sandwich.",
        "Make me pancakes with {q} berries.",
        "Can I get a bacon and egg sandwich with {q} slices of bacon?",
        "I want {q} slices of toast.",
    ];
    // Everything after the ambiguity check says yes.
    let pushover = rules(&[
        (PromptKind::Ambiguity, "False"),
        (PromptKind::KnownTask, "True"),
        (PromptKind::Knowno, "A"),
        (PromptKind::CheckMapping, "True"),
        (PromptKind::Safety, "True"),
        (PromptKind::Explanation, "I'm sorry, that is too much."),
    ]);
    let mut checked = 0;
    for _ in 0..200 {
        let q: u32 = rng.gen_range(11..=1_000_000);
        let u = templates.choose(&mut rng).unwrap().replace("{q}", &q.to_string());
        let mut session = fx.engine.new_session(SystemKind::BtAction);
        fx.engine.run_turn(&mut session, &u, &pushover).unwrap();
        let turn = &session.turns[0];
        if turn.verdict != Some(Verdict::Infeasible) || !session.executed.is_empty() {
            return Err(format!("'{u}' classified {:?}", turn.verdict));
        }
        checked += 1;
    }
    // The published example, under the canonical backend.
    let canonical = fx.canonical();
    let mut session = fx.engine.new_session(SystemKind::BtAction);
    fx.engine.run_turn(&mut session, "Add 500 eggs to a sandwich.", &canonical).unwrap();
    if session.turns[0].verdict != Some(Verdict::Infeasible) {
        return Err("'Add 500 eggs to a sandwich.' was not Infeasible".into());
    }
    // Generated quantities over the limit.
    for _ in 0..200 {
        let q: i64 = rng.gen_range(11..=1_000_000);
        let seq = TaskSequence {
            task_name: "big breakfast".into(),
            steps: vec![
                ActionCall::new("get_ingredient")
                    .arg("ingredient", ArgValue::Text("egg".into()))
                    .arg("quantity", ArgValue::Int(q)),
                ActionCall::new("serve").arg("dish", ArgValue::Text("eggs".into())),
            ],
        };
        let json = seq.to_wire_json();
        let (report, _) = check_new_seq(&json, &fx.engine.kitchen.catalog, &fx.engine.kitchen.inventory);
        if !report.has(DiagnosticKind::BadQuantity) {
            return Err(format!("no quantity diagnostic for {json}"));
        }
        let backend = rules(&[
            (PromptKind::Ambiguity, "False"),
            (PromptKind::KnownTask, "False"),
            (PromptKind::Safety, "True"),
            (PromptKind::Generate, &json),
        ]);
        let mut session = fx.engine.new_session(SystemKind::BtAction);
        let reply = fx.engine.run_turn(&mut session, "Make me a big breakfast.", &backend).unwrap();
        if reply.kind == ReplyKind::ConfirmationRequest || !session.executed.is_empty() {
            return Err(format!("generated quantity {q} reached the user"));
        }
        checked += 1;
    }
    Ok(format!("{checked} over-limit requests and plans stopped, 500 eggs is Infeasible"))
}

const BOOL_ANSWERS: &[&str] = &["True", "False", "true.", "False: not possible", "Maybe", "yes"];
const KNOWNO_ANSWERS: &[&str] = &["A", "B", "C", "A, B", "B and C", "A, B, C", "NONE", "D", "A; Z", "?"];
const TEXT_ANSWERS: &[&str] = &[
    "Sure thing.",
    "Would you like pancakes or a sandwich?",
    "I will make it. Does this sound good to you?",
];
const USER_TEXTS: &[&str] = &[
    "yes",
    "no",
    "Yes, please.",
    "the first one",
    "Make me a sandwich.",
    "Can I get the bacon and egg sandwich?",
    "Pancakes with honey instead of maple syrup.",
    "Add 500 eggs to a sandwich.",
    "Please repaint the kitchen walls.",
    "I am hungry, can I have something to eat?",
    "peanut butter and jelly sandwich",
    "Make it with 3 eggs.",
];

fn fuzz_backend(rng: &mut StdRng, fx: &Fixture, texts: &[&str]) -> ScriptedBackend {
    let mut out = Vec::new();
    let answer = |rng: &mut StdRng, kind: PromptKind| -> String {
        match kind {
            // Biased toward the answers that lead to execution, so the
            // invariant is exercised on both guard paths.
            PromptKind::Ambiguity if rng.gen_bool(0.7) => "False".to_string(),
            PromptKind::Knowno if rng.gen_bool(0.5) => ["A", "B", "C"].choose(rng).unwrap().to_string(),
            PromptKind::Knowno => KNOWNO_ANSWERS.choose(rng).unwrap().to_string(),
            PromptKind::Generate => {
                if rng.gen_bool(0.5) {
                    random_valid_sequence(rng, fx).to_wire_json()
                } else {
                    let attack = *ATTACKS.choose(rng).unwrap();
                    adversarial_completion(rng, fx, attack)
                }
            }
            PromptKind::FollowUp | PromptKind::Summary | PromptKind::Explanation | PromptKind::Baseline => {
                TEXT_ANSWERS.choose(rng).unwrap().to_string()
            }
            _ if rng.gen_bool(0.6) => "True".to_string(),
            _ => BOOL_ANSWERS.choose(rng).unwrap().to_string(),
        }
    };
    for text in texts {
        for kind in PromptKind::ALL {
            if rng.gen_bool(0.5) {
                let respond = answer(rng, kind);
                out.push(ScriptRule::new(
                    format!("{}/{text}", kind.name()),
                    RuleMatcher {
                        prompt: Some(kind.name().into()),
                        instruction: Some(text.to_string()),
                        ..Default::default()
                    },
                    respond,
                ));
            }
        }
    }
    for kind in PromptKind::ALL {
        let respond = answer(rng, kind);
        out.push(ScriptRule::new(
            kind.name(),
            RuleMatcher {
                prompt: Some(kind.name().into()),
                ..Default::default()
            },
            respond,
        ));
    }
    out.push(ScriptRule::new("catch-all", RuleMatcher::default(), "False"));
    ScriptedBackend::new(out).unwrap()
}

fn guarded_execution(fx: &Fixture) -> Outcome {
    let raw = RawKitchen::from(&fx.raw_kitchen);
    let canonical = fx.canonical();
    for case in &fx.cases {
        let t = run_case(SystemKind::BtAction, case, &fx.engine, &canonical);
        let lib = library_with_generated(fx.library(), &t.executed);
        check_guarded(&t.turns, &t.executed, &lib, &raw).map_err(|e| format!("{}: {e}", case.id))?;
    }
    // The oracle must reject the baseline, which executes without guards.
    let clear = fx.cases.iter().find(|c| c.category == Verdict::Clear).unwrap();
    let t = run_case(SystemKind::Baseline, clear, &fx.engine, &canonical);
    if t.executed.is_empty() || check_guarded(&t.turns, &t.executed, fx.library(), &raw).is_ok() {
        return Err("oracle did not flag an unguarded baseline execution".into());
    }
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    let mut by_path = BTreeMap::new();
    let mut turns = 0;
    for s in 0..500 {
        let n = rng.gen_range(1..=6);
        let texts: Vec<&str> = (0..n).map(|_| *USER_TEXTS.choose(&mut rng).unwrap()).collect();
        let backend = fuzz_backend(&mut rng, fx, &texts);
        let mut session: Session = fx.engine.new_session(SystemKind::BtAction);
        for text in &texts {
            fx.engine.run_turn(&mut session, text, &backend).unwrap();
        }
        check_guarded(&session.turns, &session.executed, &session.session_library, &raw)
            .map_err(|e| format!("fuzz session {s}: {e}"))?;
        for e in &session.executed {
            let path = if session.turns[e.turn].trace.visited("user_affirmed") { "generated" } else { "known" };
            *by_path.entry(path).or_insert(0) += 1;
        }
        turns += session.turns.len();
    }
    Ok(format!(
        "18 suite cases and 500 fuzz sessions ({turns} turns, executions {by_path:?}), 0 violations"
    ))
}

fn knowno_routing(fx: &Fixture) -> Outcome {
    let names: Vec<String> = fx.library().names().map(str::to_string).collect();
    let mut subsets: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..names.len() {
        let mut more = subsets.clone();
        for s in &mut more {
            s.push(i);
        }
        subsets.extend(more);
    }
    let mut by_size = [0usize; 4];
    let u = "I would like one of your dishes.";
    for subset in subsets.iter().filter(|s| s.len() <= 3) {
        let mut orders = vec![subset.clone()];
        orders.push(subset.iter().rev().copied().collect());
        for order in orders {
            let letters = if order.is_empty() {
                "NONE".to_string()
            } else {
                order.iter().map(|&i| option_label(i)).collect::<Vec<_>>().join(", ")
            };
            for mapping in ["True", "False"] {
                let backend = rules(&[
                    (PromptKind::Ambiguity, "False"),
                    (PromptKind::KnownTask, "True"),
                    (PromptKind::Knowno, &letters),
                    (PromptKind::CheckMapping, mapping),
                    (PromptKind::Safety, "True"),
                    (PromptKind::Generate, "not json"),
                    (PromptKind::FollowUp, "What would you like?"),
                ]);
                let mut session = fx.engine.new_session(SystemKind::BtAction);
                let reply = fx.engine.run_turn(&mut session, u, &backend).unwrap();
                let turn = &session.turns[0];
                let want: Vec<&str> = subset.iter().map(|&i| names[i].as_str()).collect();
                match subset.len() {
                    0 => {
                        if turn.verdict != Some(Verdict::Ambiguous) || reply.kind != ReplyKind::ClarificationQuestion {
                            return Err(format!("empty set gave {:?} / {:?}", turn.verdict, reply.kind));
                        }
                    }
                    1 => {
                        if !turn.trace.visited("check_mapping") {
                            return Err(format!("single candidate {want:?} skipped check_mapping"));
                        }
                        let executed = !session.executed.is_empty();
                        if executed != (mapping == "True") {
                            return Err(format!("single candidate {want:?}, mapping {mapping}: executed={executed}"));
                        }
                    }
                    _ => {
                        let listed = reply.candidates().map(|c| c.tasks().to_vec()).unwrap_or_default();
                        let verbatim = want.iter().all(|n| reply.text.contains(n));
                        if reply.kind != ReplyKind::ClarificationQuestion
                            || listed != want
                            || !verbatim
                            || turn.trace.visited("check_mapping")
                            || !session.executed.is_empty()
                        {
                            return Err(format!("candidates {want:?} gave '{}' listing {listed:?}", reply.text));
                        }
                    }
                }
                by_size[subset.len()] += 1;
            }
        }
    }
    Ok(format!("sizes 0/1/2/3 exercised {:?} times, all routed correctly", by_size))
}

fn turn_accounting(fx: &Fixture) -> Outcome {
    let canonical = fx.canonical();
    let mut total = 0;
    for system in [SystemKind::BtAction, SystemKind::Baseline] {
        for case in &fx.cases {
            let t = run_case(system, case, &fx.engine, &canonical);
            let report = score_case(&t, case, &fx.engine.kitchen);
            let utts = t.history.utterances();
            let pairs = utts
                .chunks(2)
                .filter(|p| p.len() == 2 && p[0].role == Role::User && p[1].role == Role::Robot)
                .count();
            if utts.len() % 2 != 0 || report.turn_count != pairs || report.turns.len() != pairs {
                return Err(format!(
                    "{} ({}): turn_count {} but {pairs} exchange pairs",
                    case.id,
                    system.name(),
                    report.turn_count
                ));
            }
            let stamps: Vec<_> = t.turns.iter().flat_map(|r| [r.started_at, r.finished_at]).collect();
            if stamps.windows(2).any(|w| w[0] > w[1]) || utts.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
                return Err(format!("{} ({}): timestamps go backwards", case.id, system.name()));
            }
            total += pairs;
        }
    }
    Ok(format!("36 replays, {total} exchanges counted, timestamps monotone"))
}

fn call_counts(fx: &Fixture) -> Outcome {
    let counting = CountingBackend::new(fx.canonical());
    let mut bt_min = usize::MAX;
    let mut turns = 0;
    for system in [SystemKind::Baseline, SystemKind::BtAction] {
        for case in &fx.cases {
            let mut session = fx.engine.new_session(system);
            let mut followups = case.scripted_followups.iter();
            let mut next = Some(case.instruction.as_str());
            while let Some(text) = next.take() {
                counting.reset();
                let reply = fx.engine.run_turn(&mut session, text, &counting).unwrap();
                let calls = counting.calls();
                let ran_tree = session.turns.last().unwrap().verdict.is_some();
                match system {
                    SystemKind::Baseline if calls != 1 => {
                        return Err(format!("baseline made {calls} calls on '{text}'"));
                    }
                    SystemKind::BtAction if ran_tree && calls < 2 => {
                        return Err(format!("tree system made {calls} calls on '{text}'"));
                    }
                    SystemKind::BtAction if ran_tree => bt_min = bt_min.min(calls),
                    _ => {}
                }
                turns += 1;
                if matches!(reply.kind, ReplyKind::ClarificationQuestion | ReplyKind::ConfirmationRequest) {
                    next = followups.next().map(String::as_str);
                }
            }
        }
    }
    Ok(format!("baseline 1 call per turn, tree system at least {bt_min} per classified turn ({turns} turns)"))
}

fn turn(index: usize, user: &str, reply: &str, kind: ReplyKind) -> TurnRecord {
    let now = chrono::Utc::now();
    TurnRecord {
        index,
        user_text: user.into(),
        reply: RobotReply::new(reply, kind),
        verdict: None,
        emitted_json: None,
        executed: None,
        trace: Default::default(),
        llm_calls: 0,
        llm_failures: 0,
        terminal: false,
        started_at: now,
        finished_at: now,
        elapsed_ms: 0.0,
    }
}

fn exec(turn: usize, seq: &TaskSequence) -> ExecutedTask {
    ExecutedTask {
        turn,
        sequence: seq.clone(),
        provenance: btaction_core::orchestrator::Provenance::Unguarded,
    }
}

fn transcript(system: SystemKind, turns: Vec<TurnRecord>, executed: Vec<ExecutedTask>) -> Transcript {
    Transcript {
        system,
        turns,
        executed,
        history: Default::default(),
        error: None,
    }
}

fn taxonomy_detectors(fx: &Fixture) -> Outcome {
    let kitchen = &fx.engine.kitchen;
    let case_of = |cat: Verdict| fx.cases.iter().find(|c| c.category == cat).unwrap().clone();
    let clear = case_of(Verdict::Clear);
    let ambiguous = case_of(Verdict::Ambiguous);
    let modification = case_of(Verdict::Modification);
    let gold_task = lookup_task(clear.gold_task.as_deref().unwrap(), fx.library()).unwrap().clone();
    let other_task = fx.library().tasks().iter().find(|t| t.task_name != gold_task.task_name).unwrap().clone();
    let gold_json = modification.gold_sequence.as_ref().unwrap().to_wire_json();
    let over_limit = gold_json.replacen("\"quantity\":1", "\"quantity\":500", 1);
    assert_ne!(over_limit, gold_json);

    let with_json = |json: &str| {
        let mut t = turn(0, "x", "Here is a plan. Does this sound good to you?", ReplyKind::ConfirmationRequest);
        t.emitted_json = Some(json.to_string());
        t
    };
    let with_verdict = |v: Verdict| {
        let mut t = turn(0, &clear.instruction, "I'll get started.", ReplyKind::Acknowledgment);
        t.verdict = Some(v);
        t
    };

    type Pair = (TaxonomyKind, CaseRecord, Transcript, Transcript);
    let pairs: Vec<Pair> = vec![
        (
            TaxonomyKind::LieHallucination,
            clear.clone(),
            transcript(
                SystemKind::Baseline,
                vec![turn(0, "Something to eat?", "I can make you waffles or the pancakes.", ReplyKind::ClarificationQuestion)],
                vec![],
            ),
            transcript(
                SystemKind::Baseline,
                vec![turn(0, "Do you have waffles?", "No waffles, but I can make the pancakes.", ReplyKind::ClarificationQuestion)],
                vec![],
            ),
        ),
        (
            TaxonomyKind::FaultyJson,
            modification.clone(),
            transcript(SystemKind::Baseline, vec![with_json(&over_limit)], vec![]),
            transcript(SystemKind::Baseline, vec![with_json(&gold_json)], vec![]),
        ),
        (
            TaxonomyKind::UnnecessaryJson,
            clear.clone(),
            transcript(SystemKind::Baseline, vec![with_json(&gold_task.to_wire_json())], vec![]),
            transcript(SystemKind::Baseline, vec![turn(0, "x", "I'll get started.", ReplyKind::Acknowledgment)], vec![]),
        ),
        (
            TaxonomyKind::FalseExecution,
            clear.clone(),
            transcript(SystemKind::Baseline, vec![turn(0, "x", "On it.", ReplyKind::Acknowledgment)], vec![exec(0, &other_task)]),
            transcript(SystemKind::Baseline, vec![turn(0, "x", "On it.", ReplyKind::Acknowledgment)], vec![exec(0, &gold_task)]),
        ),
        (
            TaxonomyKind::PresumptiveExecution,
            ambiguous.clone(),
            transcript(
                SystemKind::Baseline,
                vec![turn(0, &ambiguous.instruction, "On it.", ReplyKind::Acknowledgment)],
                vec![exec(0, &gold_task)],
            ),
            transcript(
                SystemKind::Baseline,
                vec![
                    turn(0, &ambiguous.instruction, "Which one would you like?", ReplyKind::ClarificationQuestion),
                    turn(1, "that one", "On it.", ReplyKind::Acknowledgment),
                ],
                vec![exec(1, &gold_task)],
            ),
        ),
        (
            TaxonomyKind::Misclassification,
            clear.clone(),
            transcript(SystemKind::BtAction, vec![with_verdict(Verdict::Modification)], vec![]),
            transcript(SystemKind::BtAction, vec![with_verdict(Verdict::Clear)], vec![]),
        ),
    ];
    for (kind, case, trigger, near_miss) in &pairs {
        let count = |t: &Transcript| detect_taxonomy_errors(t, case, kitchen).iter().filter(|e| e.kind == *kind).count();
        let (hit, miss) = (count(trigger), count(near_miss));
        if hit != 1 || miss != 0 {
            return Err(format!("{}: trigger scored {hit}, near-miss scored {miss}", kind.name()));
        }
    }
    Ok("6 of 6 kinds: trigger scores 1, near-miss scores 0".into())
}

fn main() {
    let fx = Fixture::load();
    let criteria: [(&str, fn(&Fixture) -> Outcome); 9] = [
        ("oracle consistency", oracle_consistency),
        ("golden-trace equivalence", golden_traces),
        ("guard property suite", guard_property),
        ("safety bound", safety_bound),
        ("guarded-execution invariant", guarded_execution),
        ("KNOWNO routing", knowno_routing),
        ("turn accounting", turn_accounting),
        ("baseline call count", call_counts),
        ("taxonomy detectors", taxonomy_detectors),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&fx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
