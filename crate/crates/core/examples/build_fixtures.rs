//! Regenerates `fixtures/`: the scripted mini-retail suite, its provider
//! scripts, the experiment file, golden run artifacts and metric fixtures.
//!
//!     cargo run -p tcbench-core --example build_fixtures

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tcbench::domain::mini_retail;
use tcbench::env::{db_hash, execute_tool, AgentAction, DomainDb, ToolCall};
use tcbench::gateway::{ChatMessage, MatchRule, ProviderScript, Reply, ScriptEntry};
use tcbench::runner::{ScriptFile, TaskScript, TrialScript};
use tcbench::strategies::action_text::render_action;
use tcbench::strategies::StrategyKind;
use tcbench::usersim::DEFAULT_STOP_TOKEN as STOP;

#[derive(Clone)]
enum Step {
    Call(&'static str, Value),
    Say(&'static str),
}

use Step::{Call, Say};

fn thought(step: &Step) -> String {
    match step {
        Call(name, _) => format!("I should call {name}."),
        Say(_) => "I should reply to the user.".into(),
    }
}

fn text_script(plan: &[Step]) -> ProviderScript {
    ProviderScript::sequence(plan.iter().map(|s| {
        let action = match s {
            Call(name, args) => AgentAction::ToolCall(ToolCall::new(*name, args.clone())),
            Say(t) => AgentAction::respond(*t),
        };
        Reply::Text(render_action(&thought(s), &action))
    }))
}

fn fc_script(plan: &[Step]) -> ProviderScript {
    ProviderScript::sequence(plan.iter().map(|s| {
        Reply::Message(match s {
            Call(name, args) => ChatMessage::assistant_tool_calls(vec![ToolCall::new(*name, args.clone())]),
            Say(t) => ChatMessage::assistant(*t),
        })
    }))
}

fn user(lines: &[&str]) -> ProviderScript {
    ProviderScript::sequence(lines.iter().map(|l| l.to_string()))
}

fn keyed(entries: &[(&str, &str)], fallback: &str) -> ProviderScript {
    let mut e: Vec<ScriptEntry> = entries
        .iter()
        .map(|(needle, reply)| ScriptEntry::when(MatchRule::LatestUserContains(needle.to_string()), *reply))
        .collect();
    e.push(ScriptEntry::any(fallback));
    ProviderScript::keyed(e)
}

const RULE_IDENTITY: &str = "Verify the user's identity with their full name and zip code before looking up or changing any order.";
const RULE_CANCEL: &str = "Only orders with status \"pending\" can be cancelled.";
const RULE_EXCHANGE: &str = "Only orders with status \"delivered\" can have items exchanged.";
const RULE_AVAILABLE: &str = "An item can only be exchanged for a product that is available.";
const RULE_CONFIRM: &str = "Confirm the details with the user and get an explicit yes before any change to an order.";

fn lines(items: &[&str]) -> String {
    items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

fn retriever() -> ProviderScript {
    let cancel = lines(&[RULE_IDENTITY, RULE_CANCEL, RULE_CONFIRM]);
    let exchange = lines(&[RULE_IDENTITY, RULE_EXCHANGE, RULE_AVAILABLE, RULE_CONFIRM]);
    ProviderScript::keyed(vec![
        ScriptEntry::when(MatchRule::LatestUserContains("cancel".into()), cancel),
        ScriptEntry::when(MatchRule::LatestUserContains("exchange".into()), exchange),
        ScriptEntry::any("None"),
    ])
}

fn verifier() -> ProviderScript {
    keyed(
        &[(
            "kettle-black",
            "Verdict: REJECTED\nJustification: Order o3 has status shipped, not delivered, so its items cannot be exchanged.\nViolated: Only orders with status \"delivered\" can have items exchanged.",
        )],
        "Verdict: APPROVED\nJustification: The call is consistent with the relevant rules.",
    )
}

fn constraints() -> ProviderScript {
    let cancel = lines(&[RULE_IDENTITY, RULE_CANCEL, RULE_CONFIRM]);
    let exchange = lines(&[RULE_IDENTITY, RULE_EXCHANGE, RULE_AVAILABLE, RULE_CONFIRM]);
    ProviderScript::keyed(vec![
        ScriptEntry::when(MatchRule::LatestUserContains("query:\ni'd like to cancel".into()), cancel),
        ScriptEntry::when(MatchRule::LatestUserContains("query:\ni want to exchange".into()), exchange.clone()),
        ScriptEntry::when(MatchRule::LatestUserContains("query:\nhi, i'm cat wu".into()), exchange),
        ScriptEntry::any("None"),
    ])
}

fn tool_suggester() -> ProviderScript {
    ProviderScript::keyed(vec![
        ScriptEntry::when(
            MatchRule::LatestUserContains("cancel my order".into()),
            "- find_user: verify the user first\n- get_order: check the order status\n- cancel_order: cancel the pending order",
        ),
        ScriptEntry::when(
            MatchRule::LatestUserContains("exchange".into()),
            "- find_user: verify the user first\n- get_order: check status and items\n- exchange_item: swap the item",
        ),
        ScriptEntry::any("None"),
    ])
}

fn text_variant(plan: &[Step], users: &[&str]) -> TrialScript {
    TrialScript {
        assistant: Some(text_script(plan)),
        user: Some(user(users)),
        ..TrialScript::default()
    }
}

fn fc_variant(plan: &[Step], users: &[&str]) -> TrialScript {
    TrialScript {
        assistant: Some(fc_script(plan)),
        user: Some(user(users)),
        ..TrialScript::default()
    }
}

fn sr_variant(plan: &[Step], users: &[&str]) -> TrialScript {
    TrialScript {
        retriever: Some(retriever()),
        verifier: Some(verifier()),
        ..fc_variant(plan, users)
    }
}

fn irma_variant(plan: &[Step], users: &[&str]) -> TrialScript {
    TrialScript {
        constraints: Some(constraints()),
        tool_suggester: Some(tool_suggester()),
        ..text_variant(plan, users)
    }
}

fn entry(task: &str, strategy: StrategyKind, variants: Vec<TrialScript>, assign: &[usize]) -> TaskScript {
    TaskScript {
        task: task.into(),
        strategy: Some(strategy),
        variants,
        assign: assign.to_vec(),
    }
}

fn scripts() -> ScriptFile {
    use StrategyKind::*;
    let ann = json!({"name": "Ann Lee", "zip": "19122"});
    let bob = json!({"name": "Bob Diaz", "zip": "10001"});
    let cat = json!({"name": "Cat Wu", "zip": "94110"});
    let o1 = json!({"order_id": "o1"});
    let o2 = json!({"order_id": "o2"});
    let o3 = json!({"order_id": "o3"});
    let swap_chair = json!({"order_id": "o2", "item_id": "chair-blue", "new_item_id": "chair-red"});
    let swap_green = json!({"order_id": "o2", "item_id": "chair-blue", "new_item_id": "chair-green"});
    let swap_kettle = json!({"order_id": "o3", "item_id": "kettle-steel", "new_item_id": "kettle-black"});

    let confirm_cancel = Say("I found order o1: one Desk lamp for $34.50, currently pending. Shall I cancel it? Please reply yes to confirm.");
    let cancelled = Say("Done. Order o1 has been cancelled. Is there anything else I can help with?");
    let confirm_swap = Say("Order o2 was delivered and contains the Office chair (blue). I can exchange it for the Office chair (red), which is available. Shall I proceed? Please reply yes.");
    let swapped = Say("The exchange for order o2 has been requested: the blue chair will be replaced by the red one.");
    let refuse = Say("Order o3 has shipped but has not been delivered yet, so the kettle cannot be exchanged right now. Once it is delivered I can help with an exchange.");
    let welcome = Say("You're welcome! Have a nice day.");

    // t1: cancel a pending order.
    let t1_users = ["Hi, I'm Ann Lee, zip 19122. I'd like to cancel my order o1.", "Yes, please cancel it.", STOP];
    let t1_plan = vec![
        Call("find_user", ann.clone()),
        Call("get_order", o1.clone()),
        confirm_cancel.clone(),
        Call("cancel_order", o1.clone()),
        cancelled.clone(),
    ];
    let t1_fact_users = ["I'd like to cancel my order o1.", "Ann Lee, zip 19122.", "Yes, please cancel it.", STOP];
    // The first call comes before identity is verified and is turned into a question.
    let t1_fact_plan = [vec![Call("cancel_order", o1.clone())], t1_plan.clone()].concat();

    // t2: exchange an item of a delivered order.
    let t2_users = ["Hi, I'm Bob Diaz, zip 10001. I want to exchange the blue chair in order o2 for the red one.", "Yes, please go ahead.", STOP];
    let t2_plan = vec![
        Call("find_user", bob.clone()),
        Call("get_order", o2.clone()),
        confirm_swap.clone(),
        Call("exchange_item", swap_chair.clone()),
        swapped.clone(),
    ];
    let t2_wrong_item = vec![
        Call("find_user", bob.clone()),
        Call("get_order", o2.clone()),
        confirm_swap.clone(),
        Call("exchange_item", swap_green),
        Say("Sorry, that chair is not available, so I could not complete the exchange."),
    ];
    let t2_fact_users = ["I want to exchange the blue chair in my order o2 for the red one.", "Bob Diaz, 10001.", "Yes, please go ahead.", STOP];
    let t2_fact_plan = [vec![Call("find_user", json!({}))], t2_plan.clone()].concat();
    let t2_fact_handoff = vec![
        Call("find_user", json!({})),
        Call("find_user", bob.clone()),
        Call("get_order", o2.clone()),
        Call("transfer_to_human", json!({"summary": "User wants to exchange a chair in order o2."})),
    ];

    // t3: exchange request on a shipped order must be declined.
    let t3_users = ["Hi, I'm Cat Wu, zip 94110. Can I exchange the steel kettle in order o3 for the black one?", "Okay, thanks anyway.", STOP];
    let t3_refuse = vec![Call("find_user", cat.clone()), Call("get_order", o3.clone()), refuse.clone(), welcome.clone()];
    let t3_violate_users = ["Hi, I'm Cat Wu, zip 94110. Can I exchange the steel kettle in order o3 for the black one?", "Yes, please.", STOP];
    let t3_violate = vec![
        Call("find_user", cat.clone()),
        Call("get_order", o3.clone()),
        Say("I can exchange the Kettle (steel) in order o3 for the Kettle (black). Shall I proceed?"),
        Call("exchange_item", swap_kettle.clone()),
        Say("The exchange for order o3 has been requested."),
    ];
    // The planned exchange is rejected by the verifier and revised into a refusal.
    let t3_sr = vec![
        Call("find_user", cat.clone()),
        Call("get_order", o3.clone()),
        Call("exchange_item", swap_kettle),
        refuse,
        welcome,
    ];

    ScriptFile {
        scripts: vec![
            entry("t1", React, vec![text_variant(&t1_plan, &t1_users)], &[]),
            entry("t1", FunctionCalling, vec![fc_variant(&t1_plan, &t1_users)], &[]),
            entry("t1", Fact, vec![text_variant(&t1_fact_plan, &t1_fact_users)], &[]),
            entry("t1", SelfReflection, vec![sr_variant(&t1_plan, &t1_users)], &[]),
            entry("t1", Irma, vec![irma_variant(&t1_fact_plan, &t1_fact_users)], &[]),
            entry(
                "t2",
                React,
                vec![text_variant(&t2_plan, &t2_users), text_variant(&t2_wrong_item, &t2_users)],
                &[0, 0, 1, 0, 1],
            ),
            entry("t2", FunctionCalling, vec![fc_variant(&t2_plan, &t2_users)], &[]),
            entry(
                "t2",
                Fact,
                vec![text_variant(&t2_fact_plan, &t2_fact_users), text_variant(&t2_fact_handoff, &t2_fact_users)],
                &[0, 0, 0, 0, 1],
            ),
            entry("t2", SelfReflection, vec![sr_variant(&t2_plan, &t2_users)], &[]),
            entry("t2", Irma, vec![irma_variant(&t2_fact_plan, &t2_fact_users)], &[]),
            entry("t3", React, vec![text_variant(&t3_violate, &t3_violate_users)], &[]),
            entry(
                "t3",
                FunctionCalling,
                vec![fc_variant(&t3_refuse, &t3_users), fc_variant(&t3_violate, &t3_violate_users)],
                &[0, 1, 1, 0, 1],
            ),
            entry("t3", Fact, vec![text_variant(&t3_refuse, &t3_users)], &[]),
            entry("t3", SelfReflection, vec![sr_variant(&t3_sr, &t3_users)], &[]),
            entry("t3", Irma, vec![irma_variant(&t3_refuse, &t3_users)], &[]),
        ],
    }
}

fn apply(db: &DomainDb, calls: &[(&str, Value)]) -> DomainDb {
    let registry = mini_retail::registry(mini_retail::tool_specs()).unwrap();
    calls.iter().fold(db.clone(), |db, (name, args)| {
        execute_tool(&db, &registry, &ToolCall::new(*name, args.clone())).0
    })
}

fn suite() -> Value {
    let db = mini_retail::sample_db();
    let gold = |calls: &[(&str, Value)]| db_hash(&apply(&db, calls), true).to_hex();
    json!({
        "domain": mini_retail::NAME,
        "policy": mini_retail::POLICY,
        "tools": mini_retail::tool_specs(),
        "initial_db": db,
        "tasks": [
            {
                "id": "t1",
                "instruction": "You are Ann Lee, zip 19122. You want to cancel your pending order o1 (a desk lamp). Confirm when asked.",
                "gold_db_digest": gold(&[("cancel_order", json!({"order_id": "o1"}))]),
                "required_outputs": ["cancelled"]
            },
            {
                "id": "t2",
                "instruction": "You are Bob Diaz, zip 10001. You want to exchange the blue office chair in order o2 for the red one. Confirm when asked.",
                "gold_db_digest": gold(&[("exchange_item", json!({"order_id": "o2", "item_id": "chair-blue", "new_item_id": "chair-red"}))]),
                "required_outputs": []
            },
            {
                "id": "t3",
                "instruction": "You are Cat Wu, zip 94110. You want to exchange the steel kettle in order o3 for the black one. Accept the answer if the agent says it is not possible.",
                "gold_db_digest": gold(&[]),
                "required_outputs": ["shipped"]
            }
        ]
    })
}

const EXPERIMENT: &str = "\
# Scripted mini-retail experiment: 3 tasks x 5 trials, every strategy.
suite = \"suite.json\"
provider = \"scripted:scripts.json\"
strategy = \"all\"
trials = 5
max_turns = 30
parallelism = 4
seed = 7
normalize_timestamps = true
";

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
    println!("wrote {}", path.display());
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}

/// 50 tasks, n = 5, with `profile[c]` tasks succeeding c times.
fn profile_matrix(domain: &str, strategy: &str, profile: [u32; 6]) -> Value {
    let mut rows = Vec::new();
    for (c, &count) in profile.iter().enumerate() {
        for _ in 0..count {
            rows.push((c as u32, rows.len()));
        }
    }
    let rows: Vec<Value> = rows
        .into_iter()
        .map(|(c, i)| json!({"task_id": format!("task-{i:02}"), "n": 5, "c": c}))
        .collect();
    json!({"domain": domain, "strategy": strategy, "rows": rows})
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mini = root.join("mini_retail");
    write(&mini.join("suite.json"), &pretty(&suite()));
    write(&mini.join("scripts.json"), &pretty(&scripts()));
    write(&mini.join("experiment.toml"), EXPERIMENT);

    let golden = mini.join("golden");
    let _ = std::fs::remove_dir_all(&golden);
    let config = mini.join("experiment.toml");
    let args = ["tcbench", "run", "--config", config.to_str().unwrap(), "--out", golden.to_str().unwrap()];
    assert_eq!(tcbench::cli::main_with_args(args), 0, "golden run failed");

    // Airline-shaped matrices: counts of tasks with c = 0..=5.
    let matrices = root.join("matrices");
    write(&matrices.join("airline_irma.json"), &pretty(&profile_matrix("airline", "irma", [19, 4, 4, 6, 2, 15])));
    write(&matrices.join("airline_react.json"), &pretty(&profile_matrix("airline", "react", [17, 8, 7, 4, 5, 9])));
    write(&matrices.join("airline_exclusions.txt"), "# tasks with gold-annotation or user-instruction errors\ntask-00\ntask-01\ntask-02\ntask-03\ntask-20\n");
}
