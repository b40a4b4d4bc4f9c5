"""Smoke test for the tcbench_py extension module.

Build the module first (see README), then run:
    python3 python/smoke_test.py
"""

import json
import os
import sys
from fractions import Fraction

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

import tcbench_py as tb  # noqa: E402

MINI = os.path.join(HERE, "..", "crates", "core", "fixtures", "mini_retail")


def check_suite_and_run():
    suite = tb.TaskSuite.load(os.path.join(MINI, "suite.json"))
    assert suite.domain == "mini-retail"
    assert suite.task_ids == ["t1", "t2", "t3"]
    assert len(suite) == 3

    matrix, trajectories = tb.run_scripted(
        suite, os.path.join(MINI, "scripts.json"), strategy="fact", trials=5, seed=7, parallelism=2
    )
    assert matrix.rows == [("t1", 5, 5), ("t2", 5, 4), ("t3", 5, 5)], matrix.rows
    assert matrix.score(1) == "0.9333"
    assert matrix.pass_hat_k(1) == Fraction(14, 15)
    assert len(trajectories) == 15
    first = trajectories[0]
    assert first["task_id"] == "t1" and first["reward"] == 1
    assert first["events"][0]["payload"]["text"] == "Hi! How can I help you today?"

    with open(os.path.join(MINI, "golden", "fact", "trajectories.jsonl")) as f:
        golden = [json.loads(line) for line in f]
    assert trajectories == golden

    filtered = matrix.filter(["t2"])
    assert len(filtered) == 2 and filtered.score(5) == "1.0000"


def check_metrics():
    m = tb.RewardMatrix([("a", 5, 5), ("b", 5, 2), ("c", 5, 0)])
    assert m.pass_hat_k(2) == Fraction(1, 3) * (1 + Fraction(1, 10))
    report = m.report(3)
    assert [s["k"] for s in report["scores"]] == [1, 2, 3]
    assert tb.RewardMatrix.from_json(m.to_json()).rows == m.rows
    assert tb.overall_score(["58.3", "47.2"]) == Fraction(5275, 100)
    try:
        tb.RewardMatrix([("a", 2, 3)])
    except ValueError:
        pass
    else:
        raise AssertionError("c > n accepted")


def check_digests():
    assert tb.canonical_json('{"b": 1.0, "a": [true, null]}') == '{"a":[true,null],"b":1}'
    db1 = {"collections": {"orders": {"o1": {"status": "pending", "total": 3}}}, "mutable_collections": ["orders"]}
    db2 = {"mutable_collections": ["orders"], "collections": {"orders": {"o1": {"total": 3, "status": "pending"}}}}
    assert tb.db_hash(json.dumps(db1)) == tb.db_hash(json.dumps(db2))
    db2["collections"]["orders"]["o1"]["status"] = "cancelled"
    assert tb.db_hash(json.dumps(db1)) != tb.db_hash(json.dumps(db2))


def check_reformulation():
    text = tb.render_reformulation("cancel o1", memory=["hi", "cancel o1"], tools=[("cancel_order", "asked")])
    assert text == (
        "cancel o1\n\n<memory>\n- hi\n- cancel o1\n</memory>\n"
        "<constraints>None</constraints>\n<tool_suggested>\n- cancel_order: asked\n</tool_suggested>"
    )
    parsed = tb.parse_reformulated(text)
    assert parsed["memory"] == ["hi", "cancel o1"] and parsed["constraints"] is None
    assert len(tb.ablation_labels()) == 7


if __name__ == "__main__":
    for check in (check_suite_and_run, check_metrics, check_digests, check_reformulation):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
