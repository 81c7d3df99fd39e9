"""Shared pytest wiring.

Registers the `acceptance` marker and prints a one-line verdict per
acceptance criterion at the end of the run, aggregated over every test
that carries the marker.
"""

import pytest

# canonical order for the summary block
CRITERIA = [
    ("desk-scale-scope",
     "full-scale table numbers are out of scope; properties are certified at desk scale"),
    ("gradient-correctness",
     "finite differences confirm every gradient of the adapted 2-layer encoder"),
    ("parameter-accounting",
     "size formulas equal enumerated checkpoint arrays; match_pal_width(256, 768) == 192"),
    ("prog-zero-forgetting",
     "frozen backbone with per-domain adapters keeps old logits bit-identical"),
    ("base-forgetting-observable",
     "plain sequential fine-tuning drops at least 10 F1 on the first domain"),
    ("ewc-mechanics",
     "the quadratic anchor shrinks displacement and never hurts retention"),
    ("metric-fidelity",
     "scorer matches 25 hand-scored cases and the published row sums"),
    ("splitter-fidelity",
     "question-type splitter reproduces the 40-question fixture partition"),
    ("report-determinism",
     "the same run executed twice writes byte-identical report files"),
    ("adapter-neutrality",
     "zero-initialized adapters leave backbone outputs unchanged"),
]

_outcomes: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): ties a test to one acceptance criterion by name")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    name = mark.args[0]
    if report.when == "call":
        _outcomes.setdefault(name, []).append(report.passed)
    elif report.failed:
        # setup or teardown error counts against the criterion
        _outcomes.setdefault(name, []).append(False)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, blurb in CRITERIA:
        if name not in _outcomes:
            continue
        verdict = "PASS" if all(_outcomes[name]) else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {name}: {blurb}")
