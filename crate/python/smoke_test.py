"""Smoke test for the sast_triage_py extension.

Build and install first:  pip install --no-build-isolation -e crates/py
Run from the repository root:  python3 python/smoke_test.py
"""

import json
import pathlib
import sys

import sast_triage_py as st

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def main() -> int:
    findings = st.ingest_sarif((FIXTURES / "corpus.sarif").read_text())
    assert len(findings) == 20, len(findings)

    methods = st.locate_methods((FIXTURES / "slicing" / "01_Sibling.java").read_text(), "01_Sibling.java")
    assert [m["name"] for m in methods] == ["first", "second", "query"], methods

    rubrics = st.RubricStore()
    assert len(rubrics) >= 10
    assert rubrics.rubric_for("CWE-089")["cwe_id"] == "CWE-089"

    owasp = st.ingest_sarif((FIXTURES / "owasp205" / "owasp205.sarif").read_text())[0]
    ctx = st.extract_context(owasp, str(FIXTURES / "owasp205"))
    trace = st.render_trace(owasp, ctx)
    assert trace == (FIXTURES / "owasp205" / "trace.golden.txt").read_text()

    bundles = []
    for f in findings:
        ctx = st.extract_context(f, str(FIXTURES))
        bundles.append(st.compile_prompt(f, ctx, "OPTIMIZED", rubrics))
        base = st.extract_baseline_context(f, str(FIXTURES))
        bundles.append(st.compile_prompt(f, base, "BASELINE"))
    again = st.compile_prompt(findings[0], st.extract_context(findings[0], str(FIXTURES)))
    assert again == bundles[0], "prompt compilation is not deterministic"

    ok = st.validate_response('Sure: {"verdict":"FALSE_POSITIVE","confidence":"HIGH","reasoning":"x"}')
    assert ok["verdict"] == "FALSE_POSITIVE" and ok["salvaged"]
    try:
        st.validate_response('{"verdict":"maybe","confidence":"LOW","reasoning":"x"}')
    except ValueError as e:
        assert str(e).startswith("BAD_ENUM"), e
    else:
        raise AssertionError("bad enum accepted")

    script = json.loads((FIXTURES / "corpus.mock.json").read_text())
    records = st.adjudicate_mock(bundles, script, parallelism=4)
    assert len(records) == 40 and all(r["status"] == "EVALUATED" for r in records)

    labels = [json.loads(line) for line in (FIXTURES / "corpus.labels.jsonl").read_text().splitlines() if line]
    report = st.evaluate(findings, records, labels)
    for mode in report["reports"]:
        overall = mode["overall"]
        assert (overall["precision"], overall["recall"], overall["f1"]) == (1.0, 1.0, 1.0), overall

    assert abs(st.f1(0.976, 0.855) - 0.912) < 0.005
    assert st.format_delta(0.884 - 0.690) == "↑ +0.194"
    print("smoke test passed: %d findings, %d adjudications" % (len(findings), len(records)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
