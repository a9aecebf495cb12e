"""Processor-sharing compute model and per-user end-to-end delay."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import radio
from .assignment import Assignment


def edge_capacity_share(c_es_j, c_max, n_connected):
    """Per-user edge capacity: equal split of the server, capped at ``c_max``."""
    return np.minimum(c_max, c_es_j / np.maximum(1, n_connected))


def local_delay(w_slm, c_local):
    return w_slm / c_local


def edge_compute_delay(w_llm, share):
    return w_llm / share


@dataclass(frozen=True)
class DelayBreakdown:
    comm_s: float
    comp_s: float
    total_s: float
    server: Optional[int]

    @property
    def mode(self) -> str:
        return "local" if self.server is None else f"offloaded({self.server})"


def realized_delays(instance, server_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Comm and compute delay for a batch of assignments under their final state.

    ``server_idx`` is (K, N) with -1 for local users; returns two (K, N)
    arrays. Comm delay is 0 for local users. Every reported metric and the
    exhaustive oracle go through this kernel.
    """
    server_idx = np.atleast_2d(np.asarray(server_idx, dtype=np.int64))
    gains = instance.channel_gain
    n_servers = gains.shape[1]
    p = instance.radio

    offloaded = server_idx >= 0
    safe = np.where(offloaded, server_idx, 0)
    counts = (server_idx[..., None] == np.arange(n_servers)).sum(axis=1)  # (K, M)
    interference = radio.interference_matrix(gains, server_idx, p.tx_power_w)

    n_at = np.take_along_axis(counts, safe, axis=1)
    interf_at = np.take_along_axis(interference, safe, axis=1)
    own_gain = gains[np.arange(gains.shape[0])[None, :], safe]

    band = radio.allocate_bandwidth(p.bandwidth_hz, n_at)
    noise = radio.noise_power(p.noise_psd_dbm_per_hz, band)
    snr = p.tx_power_w * own_gain / (interf_at + noise)
    r = band * np.log2(1.0 + snr)
    comm = np.where(offloaded, radio.comm_delay(instance.query_bits[None, :], r), 0.0)

    share = edge_capacity_share(instance.c_es[safe], instance.c_max, n_at)
    edge = edge_compute_delay(instance.w_llm, share)
    local = local_delay(instance.w_slm, instance.c_local)[None, :]
    comp = np.where(offloaded, edge, local)
    return comm, comp


def total_delays(instance, assignment: Assignment) -> list[DelayBreakdown]:
    assignment.check(instance.n_users, instance.n_servers)
    comm, comp = realized_delays(instance, assignment.to_array()[None, :])
    return [
        DelayBreakdown(float(c), float(t), float(c + t), s)
        for c, t, s in zip(comm[0], comp[0], assignment.server_of)
    ]


def total_delay_vector(instance, assignment: Assignment) -> np.ndarray:
    comm, comp = realized_delays(instance, assignment.to_array()[None, :])
    return comm[0] + comp[0]
