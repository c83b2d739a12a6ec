import numpy as np
import pytest

from srkd import _pykernels


def _backends():
    mods = [_pykernels]
    try:
        from srkd import _ckernels
        mods.append(_ckernels)
    except ImportError:
        pass
    return mods


@pytest.fixture(params=_backends(), ids=lambda m: m.NAME)
def kernel_module(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def central_diff(f, x, eps=1e-6):
    """Independent numeric gradient of scalar f at x (test oracle)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        up = f(x)
        x[i] = orig - eps
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * eps)
    return g


def max_rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max())
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)


@pytest.fixture(scope="session")
def default_corpus():
    from srkd.corpus import SyntheticCorpusSpec, generate_corpus
    return generate_corpus(SyntheticCorpusSpec())


@pytest.fixture(scope="session")
def default_teacher(default_corpus):
    from srkd.experiment import cached_teacher
    from srkd.train import TeacherConfig
    return cached_teacher(default_corpus, default_corpus.spec, TeacherConfig())


# acceptance criteria report: one line per criterion at the end of the session
_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    if rep.when == "call" or rep.failed:
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
