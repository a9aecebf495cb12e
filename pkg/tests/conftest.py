import itertools
import math

import numpy as np
import pytest

from edgeoffload.radio import RadioParams
from edgeoffload.scenario import Instance, ScenarioConfig, generate_instance


def make_instance(
    gains,
    alpha=None,
    c_local=100e9,
    c_es=10e12,
    c_max=1.513e12,
    query_bits=8192.0,
    w_slm=2e9,
    w_llm=16e9,
    slm_correct=None,
    llm_correct=None,
    radio=None,
    **radio_kw,
):
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    n, m = gains.shape
    bc = lambda v, k: np.broadcast_to(np.asarray(v, dtype=float), (k,)).copy()
    return Instance(
        user_positions=np.zeros((n, 2)),
        es_positions=np.zeros((m, 2)),
        channel_gain=gains,
        c_local=bc(c_local, n),
        c_es=bc(c_es, m),
        query_bits=bc(query_bits, n),
        alpha=bc(0.5 if alpha is None else alpha, n),
        slm_correct=np.zeros(n, bool) if slm_correct is None else slm_correct,
        llm_correct=np.ones(n, bool) if llm_correct is None else llm_correct,
        radio=radio or RadioParams(**radio_kw),
        c_max=c_max,
        w_slm=w_slm,
        w_llm=w_llm,
    )


def brute_force_delays(instance, server_of):
    """Per-user realized delay computed from the textbook formulas, one scalar at a time."""
    p = instance.radio
    g = instance.channel_gain
    n, m = g.shape
    psd_w = 10 ** ((p.noise_psd_dbm_per_hz - 30) / 10)
    out = []
    for i in range(n):
        j = server_of[i]
        if j is None:
            out.append(instance.w_slm / instance.c_local[i])
            continue
        n_j = sum(1 for s in server_of if s == j)
        band = p.bandwidth_hz / max(1, n_j)
        interf = sum(
            p.tx_power_w * g[k, j] for k in range(n) if k != i and server_of[k] is not None and server_of[k] != j
        )
        s = p.tx_power_w * g[i, j] / (interf + psd_w * band)
        r = band * math.log2(1 + s)
        comm = instance.query_bits[i] / r if r > 0 else math.inf
        share = min(instance.c_max, instance.c_es[j] / max(1, n_j))
        out.append(comm + instance.w_llm / share)
    return out


def brute_force_objective(instance, server_of):
    d = brute_force_delays(instance, server_of)
    return sum(a * t for a, t in zip(instance.alpha, d) if a > 0)


def all_assignments(n, m):
    return itertools.product([None] + list(range(m)), repeat=n)


@pytest.fixture
def default_config():
    return ScenarioConfig(n_users=4, n_servers=4)


@pytest.fixture
def small_instance():
    return generate_instance(ScenarioConfig(n_users=5, n_servers=2, master_seed=11), None, 3)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (bool(ok), detail)
        assert ok, f"criterion {criterion}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
