import numpy as np
import pytest

from attnbench import tensor as T
from attnbench.models import ModelConfig


def fd_grad(f, x, eps=1e-5):
    """Central differences of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        hi = f()
        x[i] = orig - eps
        lo = f()
        x[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_op(build, *arrays, tol=1e-4):
    """Compare tape gradients of sum-reduced ``build(*tensors)`` with finite differences."""
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape():
        out = build(*tensors)
        T.backward(T.tsum(out) if out.ndim else out)

    def value():
        with T.no_grad():
            return float(np.sum(build(*tensors).data))

    for t in tensors:
        num = fd_grad(value, t.data)
        assert rel_err(t.grad, num) < tol, (rel_err(t.grad, num), t.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(family, vocab=13, **kw):
    base = dict(family=family, vocab_size=vocab, embed_dim=6, hidden_dim=8, dropout_p=0.0,
                max_decode_len=8, max_positions=24)
    if family == "conv_s2s":
        base.update(n_layers=2, kernel_size=3)
    if family == "transformer":
        base.update(embed_dim=8, n_layers=2, n_heads=2, ffn_dim=12)
    base.update(kw)
    return ModelConfig(**base)


# one summary line per acceptance criterion, printed after the run
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    title, ok = _CRITERIA.get(number, (report.criterion_title, True))
    failed = report.failed or (report.when == "call" and report.skipped)
    _CRITERIA[number] = [title, ok and not failed]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report = outcome.get_result()
        report.criterion, report.criterion_title = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
