//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

use tcbench::cli::{cmd_report, cmd_run, resolve_run, ReportArgs, RunArgs};
use tcbench::domain::mini_retail;
use tcbench::env::{
    canonical_json, compute_reward, db_hash, execute_tool, load_task_suite, DomainDb, Speaker, Task,
    TaskAnnotations, TaskSuite, ToolCall, TranscriptEntry,
};
use tcbench::gateway::{ChatMessage, ChatProvider, CompletionRequest, GatewayError};
use tcbench::metrics::{
    annotate_error, filter_tasks, format_score, overall_score, parse_decimal, pass_hat_k, AnnotationStore,
    ErrorAnnotation, ErrorCategory, RewardMatrix,
};
use tcbench::runner::{
    run_experiment, EventKind, ProviderFactory, RunConfig, ScriptFile, ScriptedProviders, Trajectory, TrialProviders,
};
use tcbench::strategies::{parse_reformulated, Ablation, StrategyKind};
use tcbench::usersim::FaultProfile;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn mini() -> PathBuf {
    fixtures().join("mini_retail")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn suite() -> TaskSuite {
    load_task_suite(mini().join("suite.json")).expect("mini suite loads")
}

fn scripts() -> ScriptFile {
    ScriptFile::load(&mini().join("scripts.json")).expect("scripts load")
}

/// Run settings of the committed experiment file.
fn experiment_config() -> RunConfig {
    let args = RunArgs {
        config: Some(mini().join("experiment.toml")),
        ..RunArgs::default()
    };
    resolve_run(args).expect("experiment resolves").config
}

fn run(config: &RunConfig, factory: &dyn ProviderFactory) -> (RewardMatrix, Vec<Trajectory>) {
    let (m, mut ts) = run_experiment(&suite(), factory, config).expect("experiment runs");
    ts.iter_mut().for_each(Trajectory::normalize_timestamps);
    (m, ts)
}

// 1 -------------------------------------------------------------------

/// Fraction of k-subsets of a concrete reward vector that are all ones.
fn brute_force_task(rewards: &[bool], k: u32) -> BigRational {
    let n = rewards.len() as u32;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != k {
            continue;
        }
        total += 1;
        if (0..n).all(|i| mask & (1 << i) == 0 || rewards[i as usize]) {
            hits += 1;
        }
    }
    ratio(hits, total)
}

fn pass_k_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut comparisons = 0;
    for case in 0..1000 {
        let tasks = rng.gen_range(1..=20);
        let mut vectors = Vec::new();
        let mut rows = Vec::new();
        for t in 0..tasks {
            let n: usize = rng.gen_range(1..=8);
            let c = rng.gen_range(0..=n);
            let mut v: Vec<bool> = (0..n).map(|i| i < c).collect();
            v.shuffle(&mut rng);
            rows.push((format!("task-{t:02}"), n as u32, c as u32));
            vectors.push(v);
        }
        let matrix = RewardMatrix::from_rows(rows);
        let k_max = vectors.iter().map(Vec::len).min().unwrap() as u32;
        for k in 1..=k_max {
            let sum: BigRational = vectors.iter().map(|v| brute_force_task(v, k)).sum();
            let expected = sum / BigRational::from_integer(BigInt::from(vectors.len()));
            let got = pass_hat_k(&matrix, k).map_err(|e| format!("case {case}: {e}"))?;
            ensure(got == expected, || format!("case {case} k={k}: got {got}, brute force {expected}"))?;
            comparisons += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 10.0, || format!("took {elapsed:?}"))?;
    Ok(format!("1000 matrices, {comparisons} (matrix, k) pairs exact in {:.2}s", elapsed.as_secs_f64()))
}

// 2 -------------------------------------------------------------------

fn load_matrix(name: &str) -> RewardMatrix {
    let text = std::fs::read_to_string(fixtures().join("matrices").join(name)).expect("matrix fixture");
    serde_json::from_str(&text).expect("matrix parses")
}

fn paper_anchors() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let mut rows: Vec<(String, u32, u32)> = (0..50)
        .map(|i| (format!("task-{i:02}"), 5, if i < 9 { 5 } else { rng.gen_range(0..5) }))
        .collect();
    rows.shuffle(&mut rng);
    let m = RewardMatrix::from_rows(rows);
    let p5 = format_score(&pass_hat_k(&m, 5).map_err(|e| e.to_string())?);
    ensure(p5 == "0.1800", || format!("9 of 50 always-solved tasks: pass^5 = {p5}"))?;

    // 113 successes over 250 trials.
    let mut cs = [0u32; 50];
    let mut left = 113;
    while left > 0 {
        let i = rng.gen_range(0..50);
        if cs[i] < 5 {
            cs[i] += 1;
            left -= 1;
        }
    }
    let m = RewardMatrix::from_rows(cs.iter().enumerate().map(|(i, &c)| (format!("task-{i:02}"), 5, c)));
    let p1 = pass_hat_k(&m, 1).map_err(|e| e.to_string())?;
    ensure(p1 == ratio(452, 1000), || format!("mean c/n 0.452: pass^1 = {p1}"))?;

    let irma = load_matrix("airline_irma.json");
    let printed: Vec<String> = (1..=5).map(|k| format_score(&pass_hat_k(&irma, k).unwrap())).collect();
    ensure(printed == ["0.4520", "0.3680", "0.3280", "0.3080", "0.3000"], || {
        format!("airline IRMA profile gives {printed:?}")
    })?;
    let react = load_matrix("airline_react.json");
    for (k, want) in [(1, "0.3960"), (4, "0.2000"), (5, "0.1800")] {
        let got = format_score(&pass_hat_k(&react, k).unwrap());
        ensure(got == want, || format!("airline ReAct pass^{k} = {got}, want {want}"))?;
    }
    for (name, m) in [("airline_irma", &irma), ("airline_react", &react)] {
        let scores: Vec<BigRational> = (1..=5).map(|k| pass_hat_k(m, k).unwrap()).collect();
        ensure(scores.windows(2).all(|w| w[0] >= w[1]), || format!("{name} is not monotone"))?;
    }
    Ok("pass^5 0.1800, pass^1 0.4520, both fixtures monotone over k=1..5".into())
}

// 3 -------------------------------------------------------------------

fn overall_convention() -> Outcome {
    let scores = [parse_decimal("58.3").unwrap(), parse_decimal("47.2").unwrap()];
    let overall = overall_score(&scores).ok_or("no overall")?;
    ensure(overall == ratio(5275, 100), || format!("overall = {overall}"))?;

    // Same convention through the report: pass^1 of 0.583 and 0.472.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut matrices = Vec::new();
    for (domain, solved) in [("retail", 583), ("airline", 472)] {
        let mut m = RewardMatrix::from_rows((0..1000).map(|i| (format!("task-{i:04}"), 1, u32::from(i < solved))));
        m.domain = Some(domain.into());
        let path = dir.path().join(format!("{domain}.json"));
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        matrices.push(path);
    }
    let args = ReportArgs {
        matrices,
        k: 1,
        exclude: None,
        trajectories: Vec::new(),
        success_only: false,
        json: true,
    };
    let doc: Value = serde_json::from_str(&cmd_report(args).map_err(|e| e.to_string())?).unwrap();
    let row = &doc["overall"][0];
    ensure(row["exact"] == "211/400" && row["score"] == "0.5275", || format!("report overall {row}"))?;
    Ok("mean(58.3, 47.2) = 52.75 exactly, report overall 0.5275".into())
}

// 4 -------------------------------------------------------------------

fn candidate_calls() -> Vec<ToolCall> {
    let mut calls = Vec::new();
    for o in ["o1", "o2", "o3", "o4", "o9"] {
        calls.push(ToolCall::new("cancel_order", json!({"order_id": o})));
        calls.push(ToolCall::new("get_order", json!({"order_id": o})));
    }
    for (o, item, new) in [
        ("o2", "chair-blue", "chair-red"),
        ("o2", "chair-blue", "chair-green"),
        ("o3", "kettle-steel", "kettle-black"),
        ("o4", "mug-red", "mug-blue"),
        ("o1", "lamp-white", "mug-blue"),
    ] {
        calls.push(ToolCall::new("exchange_item", json!({"order_id": o, "item_id": item, "new_item_id": new})));
    }
    calls.push(ToolCall::new("find_user", json!({"name": "Ann Lee", "zip": "19122"})));
    calls
}

fn apply_calls(db: &DomainDb, calls: &[ToolCall]) -> DomainDb {
    let registry = mini_retail::registry(mini_retail::tool_specs()).unwrap();
    calls.iter().fold(db.clone(), |db, c| execute_tool(&db, &registry, c).0)
}

/// The reward predicate restated over structural equality.
fn reward_oracle(final_db: &DomainDb, gold: &DomainDb, transcript: &[TranscriptEntry], required: &[String]) -> u8 {
    let empty = BTreeMap::new();
    let same = gold.mutable_collections == final_db.mutable_collections
        && gold.mutable_collections.iter().all(|name| {
            final_db.collections.get(name).unwrap_or(&empty) == gold.collections.get(name).unwrap_or(&empty)
        });
    let agent: Vec<String> = transcript
        .iter()
        .filter(|e| e.speaker == Speaker::Agent)
        .map(|e| e.text.to_lowercase())
        .collect();
    let said = required
        .iter()
        .all(|f| agent.iter().any(|m| m.contains(&f.to_lowercase())));
    u8::from(same && said)
}

fn random_case(s: &str, rng: &mut StdRng) -> String {
    s.chars()
        .map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

fn reward_rule() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let calls = candidate_calls();
    let fragments = ["cancelled", "o1", "red chair", "not been delivered", "refund"];
    let base = mini_retail::sample_db();
    let (mut ones, mut zeros) = (0, 0);
    for case in 0..200 {
        let pick = |rng: &mut StdRng| -> Vec<ToolCall> {
            let len = rng.gen_range(0..5);
            (0..len).map(|_| calls.choose(rng).unwrap().clone()).collect()
        };
        let gold_calls = pick(&mut rng);
        let gold = apply_calls(&base, &gold_calls);
        let mut final_db = if rng.gen_bool(0.6) { gold.clone() } else { apply_calls(&base, &pick(&mut rng)) };
        match rng.gen_range(0..4) {
            // Read-only collections do not take part in the comparison.
            0 => final_db.get_mut("products", "mug-blue").unwrap()["available"] = json!(rng.gen_bool(0.5)),
            1 => final_db.get_mut("users", "u-bob").unwrap()["zip"] = json!("10002"),
            _ => {}
        }
        let required: Vec<String> = fragments
            .iter()
            .filter(|_| rng.gen_bool(0.25))
            .map(|f| f.to_string())
            .collect();
        let mut transcript = Vec::new();
        for _ in 0..rng.gen_range(0..6) {
            let speaker = *[Speaker::Agent, Speaker::Agent, Speaker::User, Speaker::Tool].choose(&mut rng).unwrap();
            let mut text = String::from("Sure thing.");
            if rng.gen_bool(0.7) {
                let f = fragments.choose(&mut rng).unwrap();
                text = format!("Your {} is done", random_case(f, &mut rng));
            }
            transcript.push(TranscriptEntry { speaker, text });
        }
        let task = Task {
            id: format!("case-{case}"),
            instruction: String::new(),
            initial_db: base.clone(),
            gold_db_digest: db_hash(&gold, true),
            required_outputs: required.clone(),
            annotations: TaskAnnotations::default(),
        };
        let got = compute_reward(&final_db, &transcript, &task);
        let want = reward_oracle(&final_db, &gold, &transcript, &required);
        ensure(got == want, || format!("case {case}: reward {got}, predicate {want}"))?;
        if got == 1 {
            ones += 1;
        } else {
            zeros += 1;
        }
    }
    ensure(ones >= 20 && zeros >= 20, || format!("unbalanced sample: {ones} ones, {zeros} zeros"))?;
    Ok(format!("200 cases agree ({ones} rewarded, {zeros} not)"))
}

// 5 -------------------------------------------------------------------

fn random_doc(rng: &mut StdRng, depth: u32) -> Value {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..6) {
            0 => Value::Null,
            1 => json!(rng.gen_bool(0.5)),
            2 => json!(rng.gen_range(-1000i64..1000)),
            3 => json!(rng.gen_range(-100.0f64..100.0)),
            _ => json!(format!("s{}-\u{e9}\"{}", rng.gen_range(0..100), rng.gen_range(0..10))),
        };
    }
    if rng.gen_bool(0.25) {
        Value::Array((0..rng.gen_range(0..4)).map(|_| random_doc(rng, depth - 1)).collect())
    } else {
        let mut m = Map::new();
        for i in 0..rng.gen_range(1..6) {
            m.insert(format!("k{i}_{}", rng.gen_range(0..50)), random_doc(rng, depth - 1));
        }
        Value::Object(m)
    }
}

/// JSON text with object keys written in a random order.
fn permuted_text(v: &Value, rng: &mut StdRng) -> String {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(&String, &Value)> = m.iter().collect();
            entries.shuffle(rng);
            let parts: Vec<String> = entries
                .into_iter()
                .map(|(k, v)| format!("{}: {}", Value::String(k.clone()), permuted_text(v, rng)))
                .collect();
            format!("{{ {} }}", parts.join(" , "))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(|x| permuted_text(x, rng)).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

/// Changes one leaf (or fills one empty list) in place.
fn mutate_leaf(v: &mut Value, rng: &mut StdRng) -> bool {
    match v {
        Value::Object(m) => {
            let keys: Vec<String> = m.keys().cloned().collect();
            let mut order: Vec<usize> = (0..keys.len()).collect();
            order.shuffle(rng);
            order.into_iter().any(|i| mutate_leaf(m.get_mut(&keys[i]).unwrap(), rng))
        }
        Value::Array(a) if a.is_empty() => {
            a.push(Value::Null);
            true
        }
        Value::Array(a) => {
            let mut order: Vec<usize> = (0..a.len()).collect();
            order.shuffle(rng);
            order.into_iter().any(|i| mutate_leaf(&mut a[i], rng))
        }
        Value::Null => {
            *v = json!(0);
            true
        }
        Value::Bool(b) => {
            *b = !*b;
            true
        }
        Value::Number(n) => {
            *v = match n.as_i64() {
                Some(i) => json!(i + 1),
                None => json!(n.as_f64().unwrap() + 0.5),
            };
            true
        }
        Value::String(s) => {
            s.push('x');
            true
        }
    }
}

fn db_of(docs: &[(String, Value)]) -> DomainDb {
    let mut db = DomainDb::new().with_mutable(["records"]);
    for (id, d) in docs {
        db.insert("records", id, d.clone());
    }
    db
}

fn hash_canonicality() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    for case in 0..500 {
        let mut doc = random_doc(&mut rng, 4);
        if !doc.is_object() {
            doc = json!({"value": doc});
        }
        let a: Value = serde_json::from_str(&permuted_text(&doc, &mut rng)).unwrap();
        let b: Value = serde_json::from_str(&permuted_text(&doc, &mut rng)).unwrap();
        ensure(canonical_json(&a) == canonical_json(&b), || format!("case {case}: canonical forms differ"))?;

        let mut docs = vec![("r1".to_string(), a), ("r2".to_string(), json!({"n": case}))];
        let h1 = db_hash(&db_of(&docs), true);
        docs.reverse();
        docs[1].1 = b;
        let h2 = db_hash(&db_of(&docs), true);
        ensure(h1 == h2, || format!("case {case}: permuted key order changed the digest"))?;

        let mut mutated = doc.clone();
        ensure(mutate_leaf(&mut mutated, &mut rng), || format!("case {case}: no leaf to mutate"))?;
        let h3 = db_hash(&db_of(&[("r1".into(), mutated), ("r2".into(), json!({"n": case}))]), true);
        ensure(h3 != h1, || format!("case {case}: single-field mutation kept the digest"))?;
    }
    Ok("500 permuted documents hash equal, 500 mutations hash differently".into())
}

// 6 -------------------------------------------------------------------

fn golden_line(strategy: StrategyKind, task: &str, trial: usize) -> String {
    let path = mini().join("golden").join(strategy.as_str()).join("trajectories.jsonl");
    std::fs::read_to_string(path)
        .expect("golden log")
        .lines()
        .find(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["task_id"] == task && v["trial"] == trial
        })
        .expect("golden episode present")
        .to_string()
}

fn golden_episodes() -> Outcome {
    let factory = ScriptedProviders::new(scripts());
    let episodes = [
        (StrategyKind::React, "t1"),
        (StrategyKind::Fact, "t1"),
        (StrategyKind::SelfReflection, "t3"),
    ];
    let mut replays = 0;
    for (strategy, task) in episodes {
        let golden = golden_line(strategy, task, 0);
        for parallelism in [1, 8] {
            for round in 0..10 {
                let config = RunConfig {
                    strategy,
                    parallelism,
                    ..experiment_config()
                };
                let (_, ts) = run(&config, &factory);
                let t = ts.iter().find(|t| t.task_id == task && t.trial == 0).unwrap();
                let line = serde_json::to_string(t).unwrap();
                ensure(line == golden, || {
                    format!("{strategy} {task}: replay {round} at parallelism {parallelism} differs from golden")
                })?;
                replays += 1;
            }
        }
    }
    let fact: Value = serde_json::from_str(&golden_line(StrategyKind::Fact, "t1", 0)).unwrap();
    let first_agent = fact["events"]
        .as_array()
        .unwrap()
        .iter()
        .skip(1)
        .find(|e| e["kind"] != "user")
        .unwrap();
    ensure(first_agent["kind"] == "assistant" && first_agent["payload"].get("follow_up").is_some(), || {
        "FACT episode does not open with a follow-up".into()
    })?;
    let sr: Value = serde_json::from_str(&golden_line(StrategyKind::SelfReflection, "t3", 0)).unwrap();
    let rejected = sr["events"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["kind"] == "reflection" && e["payload"]["verdict"]["approved"] == false);
    ensure(rejected && sr["reward"] == 1, || "SR episode lacks a rejection followed by success".into())?;
    Ok(format!("{replays} replays of 3 episodes byte-identical at parallelism 1 and 8"))
}

// 7 -------------------------------------------------------------------

fn block_is_none(rendered: &str, tag: &str) -> bool {
    rendered.contains(&format!("<{tag}>None</{tag}>"))
}

fn irma_structure() -> Outcome {
    let factory = ScriptedProviders::new(scripts());
    let mut checked = 0;
    for ablation in Ablation::configurations() {
        let mut config = experiment_config();
        config.strategy = StrategyKind::Irma;
        config.agent.ablation = ablation;
        let (_, ts) = run(&config, &factory);
        for t in &ts {
            let mut said: Vec<String> = Vec::new();
            let mut expected_reformulations = 0;
            let mut seen = 0;
            let events = &t.events;
            for (i, e) in events.iter().enumerate() {
                match e.kind {
                    EventKind::User => {
                        let text = e.payload["text"].as_str().unwrap().to_string();
                        if text.trim() != tcbench::usersim::DEFAULT_STOP_TOKEN {
                            expected_reformulations += 1;
                        }
                        said.push(text);
                    }
                    EventKind::Reformulation => {
                        seen += 1;
                        let at = format!("{} {} trial {} event {i}", ablation.label(), t.task_id, t.trial);
                        ensure(e.payload["ablation"] == ablation.label(), || format!("{at}: wrong label"))?;
                        let rendered = e.payload["rendered"].as_str().unwrap();
                        let parsed = parse_reformulated(rendered).map_err(|err| format!("{at}: {err}"))?;
                        ensure(parsed.render() == rendered, || format!("{at}: does not round-trip"))?;
                        ensure(parsed.query == *said.last().unwrap(), || format!("{at}: query is not the utterance"))?;
                        if ablation.memory {
                            ensure(parsed.memory.as_deref() == Some(said.as_slice()), || {
                                format!("{at}: memory {:?} != utterances {said:?}", parsed.memory)
                            })?;
                        } else {
                            ensure(block_is_none(rendered, "memory"), || format!("{at}: memory not None"))?;
                        }
                        if !ablation.constraints {
                            ensure(block_is_none(rendered, "constraints"), || format!("{at}: constraints not None"))?;
                        }
                        if !ablation.tools {
                            ensure(block_is_none(rendered, "tool_suggested"), || format!("{at}: tools not None"))?;
                        }
                        checked += 1;
                    }
                    _ => {}
                }
            }
            ensure(seen == expected_reformulations, || {
                format!("{} {}: {seen} reformulations for {expected_reformulations} utterances", ablation.label(), t.task_id)
            })?;
        }
    }
    ensure(checked > 0, || "no reformulations recorded".into())?;
    Ok(format!("{checked} reformulations over 7 configurations well-formed"))
}

// 8 -------------------------------------------------------------------

struct Counting {
    inner: Arc<dyn ChatProvider>,
    calls: Arc<AtomicUsize>,
}

impl ChatProvider for Counting {
    fn send(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.send(request)
    }
}

struct CountingFactory {
    inner: ScriptedProviders,
    counters: Mutex<BTreeMap<(String, usize), Arc<AtomicUsize>>>,
}

impl ProviderFactory for CountingFactory {
    fn providers(&self, task: &Task, strategy: StrategyKind, trial: usize, seed: u64) -> Result<TrialProviders, String> {
        let mut p = self.inner.providers(task, strategy, trial, seed)?;
        let calls = Arc::new(AtomicUsize::new(0));
        self.counters.lock().unwrap().insert((task.id.clone(), trial), calls.clone());
        p.agents.verifier = Arc::new(Counting {
            inner: p.agents.verifier,
            calls,
        });
        Ok(p)
    }
}

fn reflection_cap() -> Outcome {
    let factory = CountingFactory {
        inner: ScriptedProviders::new(scripts()),
        counters: Mutex::new(BTreeMap::new()),
    };
    let config = RunConfig {
        strategy: StrategyKind::SelfReflection,
        ..experiment_config()
    };
    let (_, ts) = run(&config, &factory);
    let counters = factory.counters.lock().unwrap();
    let (mut total_calls, mut rejections) = (0, 0);
    for t in &ts {
        let at = format!("{} trial {}", t.task_id, t.trial);
        let calls = counters[&(t.task_id.clone(), t.trial)].load(Ordering::SeqCst);
        let mut reflections = 0;
        let mut planned_ids = BTreeSet::new();
        let mut awaiting_action = false;
        for e in &t.events {
            match e.kind {
                EventKind::Reflection => {
                    ensure(!awaiting_action, || format!("{at}: two verifications for one decision"))?;
                    awaiting_action = true;
                    reflections += 1;
                    let id = e.payload["planned"]["id"].as_str().unwrap_or_default().to_string();
                    ensure(planned_ids.insert(id.clone()), || format!("{at}: call {id} verified twice"))?;
                    if e.payload["verdict"]["approved"] == false {
                        rejections += 1;
                    }
                }
                EventKind::ToolCall | EventKind::Assistant => awaiting_action = false,
                _ => {}
            }
        }
        let emitted = t.events.iter().filter(|e| e.kind == EventKind::ToolCall).count();
        ensure(calls == reflections, || format!("{at}: {calls} verifier calls, {reflections} reflections"))?;
        ensure(calls <= emitted + rejections, || format!("{at}: {calls} verifications for {emitted} calls"))?;
        total_calls += calls;
    }
    ensure(rejections > 0, || "suite never exercises a rejection".into())?;
    Ok(format!("{total_calls} verifier calls, one per proposed call, {rejections} rejections revised without re-check"))
}

// 9 -------------------------------------------------------------------

const DEVIATION: &str = "Actually, never mind that order. Cancel my order o4 instead.";

fn taxonomy_injection() -> Outcome {
    let mut config = experiment_config();
    config.strategy = StrategyKind::Fact;
    config.count_aborted = true;
    config.faults.insert("t1".into(), FaultProfile::at_turn(3, DEVIATION));
    let factory = ScriptedProviders::new(scripts());
    let (matrix, ts) = run(&config, &factory);

    let faulted: Vec<&Trajectory> = ts.iter().filter(|t| t.task_id == "t1").collect();
    let mut store = AnnotationStore::default();
    for t in &faulted {
        let at = format!("t1 trial {}", t.trial);
        let idx = t.user_event_index(3).ok_or_else(|| format!("{at}: fewer than 3 user events"))?;
        let e = &t.events[idx];
        ensure(e.payload["text"] == DEVIATION && e.payload["injected"] == true, || {
            format!("{at}: user event 3 is {}", e.payload)
        })?;
        let injected = t.user_events().filter(|(_, e)| e.payload.get("injected").is_some()).count();
        ensure(injected == 1, || format!("{at}: {injected} injected events"))?;
        let category: ErrorCategory = "user_instruction_hallucination".parse().map_err(|e| format!("{e}"))?;
        annotate_error(
            &mut store,
            ErrorAnnotation {
                task_id: "t1".into(),
                trial: t.trial,
                category,
                event: idx,
                note: "user switched orders mid-conversation".into(),
            },
            &ts,
        )
        .map_err(|e| format!("{at}: {e}"))?;
    }
    let attached = store.by_category(ErrorCategory::UserInstructionHallucination).count();
    ensure(attached == faulted.len(), || format!("{attached} annotations for {} trials", faulted.len()))?;
    for a in &store.annotations {
        let t = faulted.iter().find(|t| t.trial == a.trial).unwrap();
        ensure(t.events[a.event].payload["injected"] == true, || "annotation misses the deviation".into())?;
    }
    let others = ts.iter().filter(|t| t.task_id != "t1");
    ensure(others.flat_map(|t| t.user_events()).all(|(_, e)| e.payload.get("injected").is_none()), || {
        "deviation leaked into another task".into()
    })?;

    let filtered = filter_tasks(&matrix, &BTreeSet::from(["t1".to_string()]));
    ensure(filtered.rows.len() == matrix.rows.len() - 1, || "filter did not drop t1".into())?;
    let n = filtered.min_n().unwrap();
    let mut pairs = Vec::new();
    for k in 1..=n {
        let before = pass_hat_k(&matrix, k).unwrap();
        let after = pass_hat_k(&filtered, k).unwrap();
        ensure(after >= before, || format!("pass^{k} fell from {before} to {after}"))?;
        pairs.push(format!("{}->{}", format_score(&before), format_score(&after)));
    }
    Ok(format!("deviation at user event 3 in {} trials; pass^k {}", faulted.len(), pairs.join(" ")))
}

// 10 ------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let args = RunArgs {
        config: Some(mini().join("experiment.toml")),
        out: Some(out.path().to_path_buf()),
        ..RunArgs::default()
    };
    cmd_run(args).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 60.0, || format!("took {elapsed:?}"))?;
    let mut files = 0;
    for s in StrategyKind::ALL {
        for f in [tcbench::cli::TRAJECTORY_LOG, tcbench::cli::MATRIX_FILE] {
            let got = std::fs::read(out.path().join(s.as_str()).join(f)).map_err(|e| format!("{s}/{f}: {e}"))?;
            let want = std::fs::read(mini().join("golden").join(s.as_str()).join(f)).unwrap();
            ensure(got == want, || format!("{s}/{f} differs from golden"))?;
            files += 1;
        }
    }
    Ok(format!("{files} artifacts identical to goldens in {:.2}s", elapsed.as_secs_f64()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("pass^k equals brute-force subset enumeration", pass_k_oracle),
        ("published pass^k anchors and monotonicity", paper_anchors),
        ("overall score is the unweighted domain mean", overall_convention),
        ("reward predicate on randomized final states", reward_rule),
        ("digest canonicality under key order and mutation", hash_canonicality),
        ("golden episodes replay byte-identically", golden_episodes),
        ("IRMA reformulation structure for all ablations", irma_structure),
        ("at most one verification per proposed call", reflection_cap),
        ("user fault injection, annotation and filtering", taxonomy_injection),
        ("scripted experiment reproduces committed artifacts", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
