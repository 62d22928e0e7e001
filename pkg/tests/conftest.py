import numpy as np
import pytest

from hetfuse.fusion import overlap_components
from hetfuse.labels import ClassSubset, ClassUniverse, HCPrediction, build_profile, restrict


def universe_of(L: int) -> ClassUniverse:
    return ClassUniverse([chr(ord("a") + k) for k in range(L)])


def consistent_profile(truth, subsets, T: float = 1.0):
    """Profile whose classifiers report ``truth`` restricted to their subsets."""
    uni = universe_of(len(truth))
    preds = []
    for idx in subsets:
        sub = ClassSubset(uni, idx)
        p = restrict(truth, sub)
        preds.append(HCPrediction(sub, p, np.log(p)))
    return build_profile(preds, uni, T)


def random_subsets(rng, L: int, N: int, lo: int = 2, hi: int | None = None, connected=False):
    hi = L if hi is None else hi
    while True:
        subs = [sorted(rng.choice(L, size=int(rng.integers(lo, hi + 1)), replace=False).tolist())
                for _ in range(N)]
        M = np.zeros((L, N))
        for i, s in enumerate(subs):
            M[s, i] = 1
        if M.sum(axis=1).min() == 0:
            continue
        if connected and overlap_components(M) != 1:
            continue
        return subs


def random_profile(rng, L: int, N: int, lo: int = 1, T: float = 1.0, connected=False):
    uni = universe_of(L)
    preds = []
    for idx in random_subsets(rng, L, N, lo=lo, connected=connected):
        sub = ClassSubset(uni, idx)
        preds.append(HCPrediction.from_logits(sub, rng.normal(scale=2.0, size=len(idx))))
    return build_profile(preds, uni, T)


def random_truth(rng, L: int, floor: float = 0.02):
    p = rng.dirichlet(np.ones(L)) + floor
    return p / p.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance verdicts: one PASS/FAIL line per criterion ------------------

_VERDICTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    entry = _VERDICTS.setdefault(n, [title, "PASS"])
    if rep.failed:
        entry[1] = "FAIL"
    elif rep.skipped and entry[1] == "PASS":
        entry[1] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, verdict = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title}")
