import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pcelab.distributions import random_tabular_mdp
from pcelab.mdp import NoiseModel, Policy, TabularMdp
from pcelab.rng import child_stream

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def chain_mdp(noise=None) -> TabularMdp:
    """Two states, two steps: a0 stays at s0 (0.1), a1 moves to s1 (0.2); step 2 pays 0.3 at s0, 0.5 at s1."""
    P = np.zeros((2, 2, 2, 2))
    P[0, 0, 0, 0] = 1.0
    P[0, 0, 1, 1] = 1.0
    P[0, 1, :, 1] = 1.0
    P[1, :, :, 0] = 1.0
    r = np.zeros((2, 2, 2))
    r[0, 0] = [0.1, 0.2]
    r[1, 0] = [0.3, 0.3]
    r[1, 1] = [0.5, 0.5]
    return TabularMdp(P, r, noise or NoiseModel.deterministic(), 0)


@pytest.fixture
def chain():
    return chain_mdp()


@st.composite
def small_mdps(draw, max_s=3, max_a=3, max_h=3, noise=None):
    S = draw(st.integers(1, max_s))
    A = draw(st.integers(1, max_a))
    H = draw(st.integers(1, max_h))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tabular_mdp(S, A, H, child_stream(seed, 0), noise)


@st.composite
def policies_for(draw, H, S, A):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = child_stream(seed, 1)
    if draw(st.booleans()):
        return Policy.deterministic(rng.integers(0, A, (H, S)), A)
    return Policy(rng.dirichlet(np.ones(A), size=(H, S)))


ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(code: str, ok: bool, detail: str, elapsed: float | None = None) -> None:
    """Store one verdict line for the end-of-session acceptance summary."""
    t = "" if elapsed is None else f" ({elapsed:.1f} s)"
    ACCEPTANCE_RESULTS[code] = f"{code} {'PASS' if ok else 'FAIL'}: {detail}{t}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(ACCEPTANCE_RESULTS, key=lambda c: int(c[1:])):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[code])
