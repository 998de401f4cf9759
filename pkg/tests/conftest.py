"""Collects acceptance-criterion outcomes and prints one line per criterion."""

CRITERIA = {
    "gradients": "Gradient suite: every op and the tiny CG3D model match central differences",
    "identities": "Analytical identities: GRU gates, dropout p=0, unit-kernel convolutions",
    "preprocessing": "Preprocessing oracles: spline, PCA, sliding-window counts",
    "metrics": "Metrics: hand-evaluated MAE/RMSE and RMSE >= MAE on every evaluation",
    "desk-e2e": "End-to-end desk scale: beats persistence and halves train MSE within budget",
    "compare": "Comparison report on synthetic data: four rows, finite, RMSE >= MAE, MC delta",
    "mc-dropout": "MC dropout: zero-rate identity, positive spread, concentration with T",
    "determinism": "Determinism: byte-identical CLI reruns (synth, preprocess, train, compare)",
}

_by_nodeid: dict[str, str] = {}
_outcomes: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): links a test to an acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _by_nodeid[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    name = _by_nodeid.get(report.nodeid)
    if name is None:
        return
    if report.failed or (report.when == "call" and report.passed):
        _outcomes.setdefault(name, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _by_nodeid:
        return
    terminalreporter.section("acceptance criteria")
    for name, title in CRITERIA.items():
        results = _outcomes.get(name)
        if name not in _by_nodeid.values():
            continue
        status = "NOT RUN" if not results else ("PASS" if all(results) else "FAIL")
        terminalreporter.write_line(f"{status:<8}{title}")
