"""Uplink channel model: path loss, Rayleigh fading, shared bandwidth, SINR and rate.

Scalar entry points (``sinr``, ``rate``, ``comm_delay``) follow the per-user
formulas literally. The ``*_matrix`` helpers evaluate the same quantities for
every user/server pair at once and are what the solvers call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INF = float("inf")


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float = 100e6
    tx_power_w: float = 0.2
    noise_psd_dbm_per_hz: float = -174.0
    path_loss_exponent: float = 3.5
    reference_loss_db: float = 40.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be > 0")
        if not self.tx_power_w > 0:
            raise ValueError("tx_power_w must be > 0")
        if not self.path_loss_exponent >= 2:
            raise ValueError("path_loss_exponent must be >= 2")


def path_gain(distance_m, params: RadioParams):
    """Linear mean power gain of the log-distance model.

    Distances below 1 m (including zero and negative values) are clamped to
    the 1 m reference point. Works elementwise on arrays.
    """
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    loss_db = params.reference_loss_db + 10.0 * params.path_loss_exponent * np.log10(d)
    g = 10.0 ** (-loss_db / 10.0)
    return float(g) if g.ndim == 0 else g


def distances(user_pos, es_pos) -> np.ndarray:
    u = np.asarray(user_pos, dtype=float).reshape(-1, 2)
    e = np.asarray(es_pos, dtype=float).reshape(-1, 2)
    return np.hypot(u[:, None, 0] - e[None, :, 0], u[:, None, 1] - e[None, :, 1])


def draw_channel_matrix(user_pos, es_pos, params: RadioParams, seed, fading: bool = True) -> np.ndarray:
    """Return the N x M matrix of |h|^2 power gains.

    ``seed`` may be an int, a SeedSequence or a Generator. Rayleigh amplitude
    fading makes the power gain a unit-mean exponential multiplier on the
    path gain; ``fading=False`` returns the path gain alone.
    """
    mean = path_gain(distances(user_pos, es_pos), params)
    mean = np.atleast_2d(mean)
    if not fading:
        return mean
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return mean * rng.exponential(1.0, size=mean.shape)


def allocate_bandwidth(bandwidth_hz, n_connected):
    return bandwidth_hz / np.maximum(1, n_connected)


def noise_power(noise_psd_dbm_per_hz: float, band_hz):
    """Thermal noise in watts over ``band_hz``."""
    return 10.0 ** ((noise_psd_dbm_per_hz - 30.0) / 10.0) * band_hz


def _server_of(assignment) -> list:
    return list(getattr(assignment, "server_of", assignment))


def sinr(i: int, j: int, assignment, channels, params: RadioParams, noise_w: float) -> float:
    g = np.asarray(getattr(channels, "gains", channels), dtype=float)
    server_of = _server_of(assignment)
    interference = 0.0
    for k, s in enumerate(server_of):
        # users on j itself and local users do not interfere at j
        if k == i or s is None or s == j:
            continue
        interference += params.tx_power_w * g[k, j]
    return params.tx_power_w * g[i, j] / (interference + noise_w)


def connected_count(assignment, j: int, i: int | None = None, joined: bool = False) -> int:
    server_of = _server_of(assignment)
    n = sum(1 for s in server_of if s == j)
    if joined and i is not None and server_of[i] != j:
        n += 1
    return n


def rate(i: int, j: int, assignment, channels, params: RadioParams, noise_w: float, joined: bool = False) -> float:
    n = connected_count(assignment, j, i, joined)
    return float(allocate_bandwidth(params.bandwidth_hz, n) * np.log2(1.0 + sinr(i, j, assignment, channels, params, noise_w)))


def comm_delay(query_bits, rate_bps):
    """Transmission time D / R; a zero rate yields +inf."""
    with np.errstate(divide="ignore"):
        return np.where(np.asarray(rate_bps) > 0, np.asarray(query_bits, dtype=float) / np.asarray(rate_bps, dtype=float), INF)


# Vectorized kernels -------------------------------------------------------


def interference_matrix(gains: np.ndarray, server_idx: np.ndarray, tx_power_w: float) -> np.ndarray:
    """Interference power at each server from a batch of assignments.

    ``server_idx`` has shape (K, N) with -1 for local users. Returns (K, M):
    the received power at server j from every offloaded user whose own
    server differs from j.
    """
    n_servers = gains.shape[1]
    onehot = server_idx[..., None] == np.arange(n_servers)
    offloaded = server_idx >= 0
    total = np.where(offloaded[..., None], gains[None], 0.0).sum(axis=1)
    own = np.where(onehot, gains[None], 0.0).sum(axis=1)
    return tx_power_w * (total - own)


def candidate_comm_delay(gains, query_bits, counts, interference, params: RadioParams) -> np.ndarray:
    """Comm delay of every (user, server) pair if that user joined the server.

    ``counts`` and ``interference`` describe the committed assignment (length M).
    """
    n_after = np.asarray(counts) + 1
    band = allocate_bandwidth(params.bandwidth_hz, n_after)
    noise = noise_power(params.noise_psd_dbm_per_hz, band)
    snr = params.tx_power_w * gains / (interference + noise)[None, :]
    r = band[None, :] * np.log2(1.0 + snr)
    return comm_delay(np.asarray(query_bits, dtype=float)[:, None], r)
