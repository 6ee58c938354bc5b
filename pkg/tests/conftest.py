import numpy as np
import pytest

from labsched.cohort import CohortConfig, build_dataset, synth_cohort
from labsched.trajectory import TrajHParams, train_traj


@pytest.fixture(scope="session")
def small_cohort():
    cfg = CohortConfig(n_stays=600, seed=3)
    stays, truth, labels = synth_cohort(cfg)
    return cfg, stays, truth, labels


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    cfg, stays, _, labels = small_cohort
    return build_dataset(stays, labels, cfg.T, cfg.m, cfg.interval_hours, cfg.seed)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    hp = TrajHParams(hidden=16, epochs=3, batch_size=32, seed=0)
    model, _ = train_traj(small_dataset["train"], small_dataset["val"], hp)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary ------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed or rep.when == "call":
        prev = _CRITERIA.get(n, (True, ""))
        ok = prev[0] and not rep.failed
        parts = [d for d in (prev[1], detail) if d]
        _CRITERIA[n] = (ok, " | ".join(parts))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)
