import numpy as np
import pytest

from hesskit.autodiff import ScalarFunction, ops
from hesskit.model import ModelConfig, init_params, synthetic_corpus

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    _ACCEPTANCE.append((number, name, passed, detail))


@pytest.fixture(scope="session")
def config():
    return ModelConfig()


@pytest.fixture(scope="session")
def params(config):
    return init_params(config)


@pytest.fixture(scope="session")
def batch(config):
    return synthetic_corpus(config, 4, seed=0)


def quadratic(A):
    """``0.5 u^T A u`` built from engine ops."""
    A = np.asarray(A, dtype=np.float64)
    m = A.shape[0]
    return ScalarFunction(
        lambda u: ops.mul(ops.sum(ops.mul(ops.matmul(ops.reshape(u, (1, m)), A), u)), 0.5),
        m, "quadratic")


def half_sq_norm(m):
    return ScalarFunction(lambda w: ops.mul(ops.sum(ops.mul(w, w)), 0.5), m, "half_sq_norm")


def w1_sq_w2():
    return ScalarFunction(
        lambda w: ops.sum(ops.mul(ops.mul(ops.take(w, [0]), ops.take(w, [0])), ops.take(w, [1]))),
        2, "w1^2 w2")


def random_symmetric(rng, m):
    G = rng.standard_normal((m, m))
    return (G + G.T) / 2.0


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}: {detail}")
