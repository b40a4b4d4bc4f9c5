use proptest::prelude::*;

use tcbench::strategies::{
    irma_memorize, irma_reformulate, parse_reformulated, Ablation, ConstraintChecklist, IrmaMemory, ToolSuggestion,
    ToolSuggestionList, Verdict,
};

#[test]
fn reformulation_layout_is_exact() {
    let memory = irma_memorize(&irma_memorize(&IrmaMemory::default(), "hi"), "cancel o1 & o2");
    let constraints = ConstraintChecklist {
        items: vec!["Verify identity\nfirst".into()],
        none_flag: false,
    };
    let tools = ToolSuggestionList {
        items: vec![ToolSuggestion {
            name: "cancel_order".into(),
            reason: "user wants <both> cancelled".into(),
        }],
    };
    let r = irma_reformulate("cancel o1 & o2", Some(&memory), Some(&constraints), Some(&tools));
    assert_eq!(
        r.render(),
        "cancel o1 &amp; o2\n\n<memory>\n- hi\n- cancel o1 &amp; o2\n</memory>\n\
         <constraints>\n- Verify identity&#10;first\n</constraints>\n\
         <tool_suggested>\n- cancel_order: user wants &lt;both&gt; cancelled\n</tool_suggested>"
    );
    assert_eq!(parse_reformulated(&r.render()).unwrap(), r);
}

#[test]
fn empty_and_disabled_blocks_render_none() {
    let none_flagged = ConstraintChecklist {
        items: vec!["ignored".into()],
        none_flag: true,
    };
    let r = irma_reformulate("q", Some(&IrmaMemory::default()), Some(&none_flagged), None);
    assert_eq!(r.render(), "q\n\n<memory>None</memory>\n<constraints>None</constraints>\n<tool_suggested>None</tool_suggested>");
}

#[test]
fn malformed_reformulations_are_rejected() {
    for bad in [
        "q\n<memory>None</memory>\n<constraints>None</constraints>\n<tool_suggested>None</tool_suggested>",
        "q\n\n<memory>None</memory>\n<tool_suggested>None</tool_suggested>",
        "q\n\n<memory>None</memory>\n<constraints>None</constraints>\n<tool_suggested>None</tool_suggested>trailing",
        "a<b\n\n<memory>None</memory>\n<constraints>None</constraints>\n<tool_suggested>None</tool_suggested>",
    ] {
        assert!(parse_reformulated(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn seven_ablations_with_labels() {
    let labels: Vec<String> = Ablation::configurations().iter().map(Ablation::label).collect();
    assert_eq!(labels.len(), 7);
    for want in ["M", "C", "T", "M+C", "M+T", "C+T", "M+C+T"] {
        assert!(labels.contains(&want.to_string()), "{want}");
    }
}

#[test]
fn verifier_replies() {
    let v = Verdict::parse("verdict: rejected\nJustification: order not delivered\nViolated: rule 3").unwrap();
    assert!(!v.approved);
    assert_eq!(v.justification, "order not delivered");
    assert!(Verdict::parse("Verdict: **APPROVED**").unwrap().approved);
    assert!(Verdict::parse("looks fine to me").is_none());
}

proptest! {
    #[test]
    fn reformulations_round_trip(
        query in "[ -~]{0,20}",
        memory in prop::option::of(prop::collection::vec("[ -~\n\r]{0,12}", 1..4)),
        constraints in prop::option::of(prop::collection::vec("[ -~\n]{0,12}", 1..4)),
        tools in prop::option::of(prop::collection::vec(("[a-z_]{1,8}", "[ -~]{0,12}"), 1..3)),
    ) {
        let memory = memory.map(|entries| IrmaMemory { entries });
        let constraints = constraints.map(|items| ConstraintChecklist { items, none_flag: false });
        let tools = tools.map(|t| ToolSuggestionList {
            items: t.into_iter().map(|(name, reason)| ToolSuggestion { name, reason }).collect(),
        });
        let r = irma_reformulate(&query, memory.as_ref(), constraints.as_ref(), tools.as_ref());
        let parsed = parse_reformulated(&r.render()).map_err(TestCaseError::fail)?;
        prop_assert_eq!(parsed, r);
    }
}
