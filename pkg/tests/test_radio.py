import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeoffload import radio
from edgeoffload.assignment import Assignment
from edgeoffload.radio import RadioParams

P = RadioParams()


def test_path_gain_reference_point():
    assert radio.path_gain(1.0, RadioParams(reference_loss_db=40)) == pytest.approx(1e-4, rel=1e-12)


def test_path_gain_formula():
    g = radio.path_gain(10.0, RadioParams(path_loss_exponent=3.5, reference_loss_db=40))
    assert g == pytest.approx(10 ** -7.5, rel=1e-12)


@pytest.mark.parametrize("d", [0.0, -3.0, 0.5])
def test_path_gain_clamps_below_one_metre(d):
    assert radio.path_gain(d, P) == radio.path_gain(1.0, P)


@given(
    st.floats(1.01, 1e4),
    st.floats(1.01, 1e4),
    st.floats(2.0, 6.0),
    st.floats(0.0, 80.0),
)
def test_path_gain_decreasing(d1, d2, exponent, ref):
    p = RadioParams(path_loss_exponent=exponent, reference_loss_db=ref)
    lo, hi = sorted((d1, d2))
    if hi > lo * (1 + 1e-9):
        assert radio.path_gain(hi, p) < radio.path_gain(lo, p)


def test_rayleigh_power_is_unit_mean():
    draws = 100_000
    base = np.array([[10.0, 0.0], [100.0, 50.0]])
    users = np.tile(base, (draws, 1))
    es = np.array([[0.0, 0.0], [300.0, 300.0]])
    g = radio.draw_channel_matrix(users, es, P, 5)
    ratio = (g / radio.path_gain(radio.distances(users, es), P)).reshape(draws, 2, 2).mean(axis=0)
    assert np.all(np.abs(ratio - 1.0) < 0.02)


def test_channel_draw_deterministic_and_zero_fading():
    users = np.array([[10.0, 20.0], [300.0, 40.0], [250.0, 250.0]])
    es = np.array([[125.0, 125.0], [375.0, 375.0]])
    a = radio.draw_channel_matrix(users, es, P, 42)
    b = radio.draw_channel_matrix(users, es, P, 42)
    assert np.array_equal(a, b)
    assert a.shape == (3, 2)
    flat = radio.draw_channel_matrix(users, es, P, 42, fading=False)
    assert np.array_equal(flat, radio.path_gain(radio.distances(users, es), P))


@pytest.mark.parametrize("n, expected", [(4, 25e6), (0, 100e6), (1, 100e6)])
def test_allocate_bandwidth(n, expected):
    assert radio.allocate_bandwidth(100e6, n) == expected


@given(st.integers(1, 10_000), st.floats(1.0, 1e10))
def test_bandwidth_shares_never_exceed_total(n, b):
    assert radio.allocate_bandwidth(b, n) * n <= b * (1 + 1e-15)


def test_noise_power():
    assert radio.noise_power(-174.0, 1.0) == pytest.approx(10 ** (-20.4), rel=1e-12)
    assert radio.noise_power(-30.0, 1e6) == pytest.approx(1e6 * 1e-6, rel=1e-12)


GAINS = np.array([[1e-10, 2e-11], [1e-10, 3e-11], [5e-11, 5e-11]])


def test_sinr_is_snr_without_other_offloaders():
    a = Assignment((0, None, None))
    assert radio.sinr(0, 0, a, GAINS, P, 1e-13) == pytest.approx(P.tx_power_w * 1e-10 / 1e-13)


def test_symmetric_interferer():
    # user 1 sits on server 1 but reaches server 0 with the same gain as user 0
    signal = P.tx_power_w * 1e-10
    alone = radio.sinr(0, 0, Assignment((0, None, None)), GAINS, P, signal)
    with_interferer = radio.sinr(0, 0, Assignment((0, 1, None)), GAINS, P, signal)
    assert with_interferer == pytest.approx(alone / 2, rel=1e-12)
    # noise negligible: SINR tends to signal / interference = 1
    tiny = radio.sinr(0, 0, Assignment((0, 1, None)), GAINS, P, 1e-30)
    assert tiny == pytest.approx(1.0, rel=1e-12)


def test_same_server_user_does_not_interfere():
    base = radio.sinr(0, 0, Assignment((0, None, None)), GAINS, P, 1e-13)
    same = radio.sinr(0, 0, Assignment((0, 0, None)), GAINS, P, 1e-13)
    assert same == base


def test_rate_and_delay_arithmetic():
    # SINR 3 over 1 MHz gives 2 Mbit/s
    params = RadioParams(bandwidth_hz=1e6, tx_power_w=1.0)
    g = np.array([[3.0]])
    r = radio.rate(0, 0, Assignment((0,)), g, params, 1.0)
    assert r == pytest.approx(2e6)
    assert radio.comm_delay(1e6, r) == pytest.approx(0.5)


def test_rate_joined_flag_counts_candidate():
    params = RadioParams(bandwidth_hz=1e6, tx_power_w=1.0)
    g = np.array([[3.0], [3.0]])
    one = radio.rate(0, 0, Assignment((None, None)), g, params, 1.0, joined=True)
    two = radio.rate(0, 0, Assignment((None, 0)), g, params, 1.0, joined=True)
    assert one == pytest.approx(2e6)
    assert radio.comm_delay(1e6, two) == pytest.approx(2 * radio.comm_delay(1e6, one))


def test_zero_gain_gives_infinite_delay():
    r = radio.rate(0, 0, Assignment((0,)), np.array([[0.0]]), P, 1e-13)
    assert r == 0.0
    assert radio.comm_delay(8192, r) == math.inf


@settings(max_examples=60)
@given(
    st.lists(st.floats(1e-14, 1e-8), min_size=12, max_size=12),
    st.lists(st.sampled_from([None, 0, 1, 2]), min_size=2, max_size=2),
    st.integers(0, 2),
    st.integers(1, 2),
)
def test_sinr_nonincreasing_when_users_join_other_servers(flat, others, j, shift):
    g = np.array(flat).reshape(4, 3)
    before = Assignment((j, others[0], others[1], None))
    after = before.with_user(3, (j + shift) % 3)
    noise = 1e-13
    assert radio.sinr(0, j, after, g, P, noise) <= radio.sinr(0, j, before, g, P, noise)


@settings(max_examples=40)
@given(st.lists(st.sampled_from([None, 0]), min_size=4, max_size=4), st.floats(1e-13, 1e-9))
def test_single_server_sinr_equals_snr(server_of, gain):
    g = np.full((4, 1), gain)
    a = Assignment(tuple(server_of)).with_user(0, 0)
    assert radio.sinr(0, 0, a, g, P, 1e-13) == P.tx_power_w * gain / 1e-13


def test_interference_matrix_matches_scalar_sinr():
    rng = np.random.default_rng(0)
    g = rng.exponential(1e-11, size=(6, 3))
    a = Assignment((0, 1, None, 2, 1, 0))
    interf = radio.interference_matrix(g, a.to_array()[None], P.tx_power_w)[0]
    noise = 1e-13
    for i, j in enumerate(a.server_of):
        if j is None:
            continue
        expected = radio.sinr(i, j, a, g, P, noise)
        assert P.tx_power_w * g[i, j] / (interf[j] + noise) == pytest.approx(expected, rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        RadioParams(bandwidth_hz=0)
    with pytest.raises(ValueError):
        RadioParams(path_loss_exponent=1.5)
