#!/usr/bin/env python3
"""Smoke test for the secagent_eval_py extension module.

Builds are not driven from here; run `cargo build -p secagent-eval-py` first.
The script locates the cdylib under target/, imports it, and exercises the
exported functions against known values.
"""
import importlib.util
import json
import pathlib
import shutil
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = []
    for profile in ("debug", "release"):
        d = REPO / "target" / profile
        candidates += list(d.glob("libsecagent_eval_py.so"))
        candidates += list(d.glob("secagent_eval_py.dll"))
        candidates += list(d.glob("libsecagent_eval_py.dylib"))
    if not candidates:
        sys.exit("extension not built; run: cargo build -p secagent-eval-py")
    lib = max(candidates, key=lambda p: p.stat().st_mtime)
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "secagent_eval_py.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("secagent_eval_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    m = load_module()
    print(f"loaded secagent_eval_py (harness {m.HARNESS_VERSION})")

    # McNemar exact values reported in the paper.
    r = m.mcnemar_exact(1, 21)
    approx(r["p_value"], 46 / 2**22, 1e-7)
    r = m.mcnemar_exact(0, 16)
    approx(r["p_value"], 2 / 2**16, 1e-7)

    # 8-task one-sided diff vector enumerates to p = 0.25.
    r = m.sign_permutation([0.2, 0.2, 0.6, 0, 0, 0, 0, 0])
    approx(r["p_value"], 0.25)

    lo, hi = m.bootstrap_ci([0.1] * 20)
    approx(lo, 0.1, 1e-9)
    approx(hi, 0.1, 1e-9)

    assert m.cohen_kappa(["a", "b", "a"], ["a", "b", "a"]) == 1.0
    approx(m.spearman([1, 2, 3, 4], [10, 20, 30, 40]), 1.0)
    assert m.observed_agreement(["x", "y"], ["x", "z"]) == 0.5

    digest = m.hash_text("abc")
    assert digest == ("ba7816bf8f01cfea414140de5dae2223"
                      "b00361a396177a9cb410ff61f20015ad")
    assert m.assign_seed("vl_path_join", 0) == m.assign_seed("vl_path_join", 0)
    assert m.assign_seed("vl_path_join", 0) != m.assign_seed("vl_path_join", 1)

    action = m.parse_action('{"action":"read_file","args":{"path":"src/files.py"}}')
    assert action["kind"] == "tool_call" and action["tool"] == "read_file"
    final = m.parse_action(
        '{"action":"final","args":{"artifact_name":"report","content":"x"}}')
    assert final["kind"] == "final" and final["artifact_name"] == "report"
    try:
        m.parse_action("not an action")
        sys.exit("expected ValueError for malformed action")
    except ValueError as e:
        assert "NotObject" in str(e)

    tasks, catalog_hash = m.load_catalog(str(REPO / "tasks" / "catalog.json"))
    assert len(tasks) == 16 and len(catalog_hash) == 64
    assert m.validate_catalog(str(REPO / "tasks" / "catalog.json")) == []

    assert [m.grounding_bin(t) for t in range(6)] == [0, 0, 1, 2, 3, 3]
    assert m.is_refusal_text("I cannot help with that request.")
    assert not m.is_refusal_text("Here is the report.")

    # Analysis over a tiny synthetic corpus.
    run_dir = REPO / "tasks"
    traces = []
    base = {
        "schema_version": 1,
        "provenance": {
            "name": "mock", "endpoint_url": "mock://", "weights_path": "",
            "weights_sha256": "", "sampling": {
                "temperature": 0.0, "top_p": 1.0, "max_tokens": 64},
            "chat_template_id": "mock", "context_length": 100000,
            "quantization": "", "revision": "",
        },
        "condition_prefix_hash": "", "task_class": "vuln_localization",
        "sampling_seed": 0, "controller_mode": "strict", "messages": [],
        "tool_calls": [], "phase_events": [], "safety_events": [],
        "parse_failures": 0, "outcome": "final_artifact",
        "final_artifact": None, "checker_reason": "ok", "grounding": None,
        "failure_label": None,
        "costs": {"model_calls": 2, "prompt_tokens": 10, "completion_tokens": 5},
        "timing": {"started_at_unix_s": 0.0, "wall_clock_s": 0.1},
        "redaction_count": 0,
    }
    for cond, success in (("aligned", False), ("uncensored", True)):
        t = dict(base)
        t.update(task_id="t0", condition_name=cond, seed=0, success=success)
        if not success:
            t["failure_label"] = "validation_failure"
        traces.append(t)
    analysis = json.loads(m.analyze_traces_json(json.dumps(traces)))
    assert len(analysis["overall"]) == 2
    assert analysis["paired_tests"][0]["n_pairs"] == 1
    _ = run_dir  # catalog checks above already exercised the repo layout

    print("smoke test passed")


if __name__ == "__main__":
    main()
