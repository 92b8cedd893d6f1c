from __future__ import annotations

import pytest

from onestep_sr.config import load_config

# Small enough that a training step takes a few milliseconds.
TINY_OVERRIDES = (
    "generator.token_dim=16",
    "generator.n_blocks=1",
    "generator.n_heads=2",
    "generator.semantic_channels=8",
    "discriminator.channels=8,8,8",
    "data.hr_size=32",
    "data.n_train=8",
    "data.n_eval=4",
    "train.batch_size=2",
    "train.total_steps=20",
    "train.stage1_steps=10",
    "train.eval_every=10",
    "train.checkpoint_every=10",
    "train.n_proj=8",
    "mismatch.n_samples=64",
    "mismatch.train_steps=100",
    "mismatch.batch_size=64",
)


def tiny_config(*extra: str):
    return load_config(None, TINY_OVERRIDES + tuple(extra))


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion

_criteria: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    info = getattr(report, "acceptance_info", None)
    if info is None:
        return
    cid, title = info
    entry = _criteria.setdefault(cid, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["seen"] = True
        if report.outcome != "passed":
            entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance_info = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=int):
        entry = _criteria[cid]
        if not entry["seen"]:
            continue
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"AC{cid:>2} {status}  {entry['title']}")
