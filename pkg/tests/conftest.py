import numpy as np
import pytest

from ewt.tensor import default_dtype

ACCEPTANCE_TITLES = {
    1: "perfect reconstruction, levels 1-3",
    2: "energy preservation",
    3: "gradient suite (ops, blocks, end-to-end)",
    4: "zero-body identity, L in {1,2,3}",
    5: "parameter anchor 11.2M-12.4M",
    6: "FLOPs scaling ratios",
    7: "efficiency direction + no-wavelet ablation",
    8: "toy learning gain >= 1 dB",
    9: "attention mask brute-force oracle",
    10: "serialization round trip + CRC",
    11: "DFEB branch ablation ordering",
}
_outcomes: dict[int, list[bool]] = {}


@pytest.fixture
def f64():
    with default_dtype("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(int(marker.args[0]), []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_TITLES):
        if number not in _outcomes:
            continue
        results = _outcomes[number]
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(
            f"[{status}] AC{number:<2} {ACCEPTANCE_TITLES[number]} ({sum(results)}/{len(results)} checks)"
        )
