"""Scenario configuration, random instance generation and instance (de)serialization."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import radio
from .radio import RadioParams
from .uncertainty import (
    SynthParams,
    UncertaintyTrace,
    get_metric,
    synth_arrays,
    synthetic_distribution,
)

DEFAULT_ES_POSITIONS = ((125.0, 125.0), (125.0, 375.0), (375.0, 125.0), (375.0, 375.0))


class ConfigError(ValueError):
    pass


class InstanceFormatError(ValueError):
    pass


def grid_positions(n_servers: int, side: float) -> tuple[tuple[float, float], ...]:
    """Cell centres of the smallest square grid holding ``n_servers`` points."""
    if n_servers == 4 and side == 500.0:
        return DEFAULT_ES_POSITIONS
    k = math.ceil(math.sqrt(n_servers))
    step = side / k
    pts = [((c + 0.5) * step, (r + 0.5) * step) for c in range(k) for r in range(k)]
    return tuple(pts[:n_servers])


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 60
    n_servers: int = 4
    area_side: float = 500.0
    es_positions: Optional[tuple[tuple[float, float], ...]] = None
    bandwidth_hz: float = 100e6
    tx_power_w: float = 0.2
    noise_psd_dbm_per_hz: float = -174.0
    path_loss_exponent: float = 3.5
    reference_loss_db: float = 40.0
    c_local_range_gflops: tuple[float, float] = (45.53, 136.6)
    c_es_range_tflops: tuple[float, float] = (9.078, 21.18)
    c_max_tflops: float = 1.513
    w_slm_flops: float = 2e9
    w_llm_flops: float = 16e9
    tau: float = 0.6
    master_seed: int = 0
    # not fixed by the model; see README
    query_bits_default: int = 8192
    bits_per_token: int = 16
    trace_with_replacement: bool = False
    fading: bool = True
    synthetic: SynthParams = field(default_factory=SynthParams)

    def __post_init__(self):
        if self.es_positions is None:
            object.__setattr__(self, "es_positions", grid_positions(self.n_servers, self.area_side))
        else:
            object.__setattr__(
                self, "es_positions", tuple((float(x), float(y)) for x, y in self.es_positions)
            )
        object.__setattr__(self, "c_local_range_gflops", tuple(map(float, self.c_local_range_gflops)))
        object.__setattr__(self, "c_es_range_tflops", tuple(map(float, self.c_es_range_tflops)))
        self.validate()

    def validate(self) -> None:
        if self.n_users < 1 or self.n_servers < 1:
            raise ConfigError("n_users and n_servers must be >= 1")
        if not self.area_side > 0:
            raise ConfigError("area_side must be > 0")
        if len(self.es_positions) != self.n_servers:
            raise ConfigError(
                f"es_positions has {len(self.es_positions)} entries, n_servers is {self.n_servers}"
            )
        for x, y in self.es_positions:
            if not (0 <= x <= self.area_side and 0 <= y <= self.area_side):
                raise ConfigError(f"ES position ({x}, {y}) outside [0, {self.area_side}]^2")
        for name in ("bandwidth_hz", "tx_power_w", "c_max_tflops", "w_slm_flops", "w_llm_flops"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("c_local_range_gflops", "c_es_range_tflops"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < low <= high")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if not self.path_loss_exponent >= 2:
            raise ConfigError("path_loss_exponent must be >= 2")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.query_bits_default < 1 or self.bits_per_token < 1:
            raise ConfigError("query_bits_default and bits_per_token must be >= 1")

    @property
    def radio(self) -> RadioParams:
        return RadioParams(
            self.bandwidth_hz,
            self.tx_power_w,
            self.noise_psd_dbm_per_hz,
            self.path_loss_exponent,
            self.reference_loss_db,
        )

    def to_json(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, SynthParams):
                v = v.to_json()
            elif isinstance(v, tuple):
                v = [list(p) if isinstance(p, tuple) else p for p in v]
            d[f.name] = v
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        kw = dict(d)
        if "synthetic" in kw and isinstance(kw["synthetic"], dict):
            kw["synthetic"] = SynthParams.from_json(kw["synthetic"])
        if kw.get("es_positions") is not None:
            kw["es_positions"] = tuple(tuple(p) for p in kw["es_positions"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None


def stream(master_seed: int, iteration_index: int, tag: str) -> np.random.Generator:
    """Independent RNG stream keyed by (seed, iteration, tag)."""
    ss = np.random.SeedSequence([int(master_seed), int(iteration_index), zlib.crc32(tag.encode())])
    return np.random.default_rng(ss)


@dataclass(frozen=True, eq=False)
class Instance:
    user_positions: np.ndarray
    es_positions: np.ndarray
    channel_gain: np.ndarray
    c_local: np.ndarray
    c_es: np.ndarray
    query_bits: np.ndarray
    alpha: np.ndarray
    slm_correct: np.ndarray
    llm_correct: np.ndarray
    radio: RadioParams
    c_max: float
    w_slm: float
    w_llm: float

    def __post_init__(self):
        conv = {
            "user_positions": float,
            "es_positions": float,
            "channel_gain": float,
            "c_local": float,
            "c_es": float,
            "query_bits": float,
            "alpha": float,
            "slm_correct": bool,
            "llm_correct": bool,
        }
        for name, dt in conv.items():
            arr = np.array(getattr(self, name), dtype=dt)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_users(self) -> int:
        return self.channel_gain.shape[0]

    @property
    def n_servers(self) -> int:
        return self.channel_gain.shape[1]

    def validate(self) -> None:
        n, m = len(self.user_positions), len(self.es_positions)
        if self.user_positions.shape != (n, 2) or self.es_positions.shape != (m, 2):
            raise InstanceFormatError("positions must be lists of 2-D points")
        if self.channel_gain.shape != (n, m):
            raise InstanceFormatError(
                f"channel_gain has shape {self.channel_gain.shape}, expected ({n}, {m})"
            )
        for name in ("c_local", "query_bits", "alpha", "slm_correct", "llm_correct"):
            if getattr(self, name).shape != (n,):
                raise InstanceFormatError(
                    f"{name} has {getattr(self, name).size} entries, expected {n} (one per user)"
                )
        if self.c_es.shape != (m,):
            raise InstanceFormatError(f"c_es has {self.c_es.size} entries, expected {m} (one per server)")
        if not (np.isfinite(self.channel_gain).all() and (self.channel_gain >= 0).all()):
            raise InstanceFormatError("channel_gain entries must be finite and >= 0")
        if not ((self.alpha >= 0) & (self.alpha <= 1)).all():
            raise InstanceFormatError("alpha out of [0,1]")
        if not (self.query_bits > 0).all():
            raise InstanceFormatError("query_bits must be > 0")
        for name in ("c_local", "c_es"):
            if not (getattr(self, name) > 0).all():
                raise InstanceFormatError(f"{name} must be > 0")
        for name in ("c_max", "w_slm", "w_llm"):
            if not getattr(self, name) > 0:
                raise InstanceFormatError(f"{name} must be > 0")

    def replace(self, **changes) -> "Instance":
        return replace(self, **changes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or a.dtype != b.dtype or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


def _alpha_from_probs(probs_list, metric: str) -> np.ndarray:
    f = get_metric(metric)
    return np.array([f(p) for p in probs_list], dtype=float)


def generate_instance(
    config: ScenarioConfig,
    trace: Optional[UncertaintyTrace] = None,
    iteration_index: int = 0,
    metric: str = "margin",
) -> Instance:
    """Sample one world; a pure function of its arguments."""
    n, m = config.n_users, config.n_servers
    seed = config.master_seed
    get_metric(metric)

    pos_rng = stream(seed, iteration_index, "positions")
    users = pos_rng.uniform(0.0, config.area_side, size=(n, 2))
    es = np.array(config.es_positions, dtype=float)

    cap_rng = stream(seed, iteration_index, "capacity")
    lo, hi = config.c_local_range_gflops
    c_local = cap_rng.uniform(lo, hi, size=n) * 1e9
    lo, hi = config.c_es_range_tflops
    c_es = cap_rng.uniform(lo, hi, size=m) * 1e12

    gains = radio.draw_channel_matrix(
        users, es, config.radio, stream(seed, iteration_index, "channel"), fading=config.fading
    )

    q_rng = stream(seed, iteration_index, "queries")
    if trace is not None:
        if not config.trace_with_replacement and len(trace) < n:
            raise ConfigError(f"trace has {len(trace)} records, need at least n_users={n}")
        idx = q_rng.choice(len(trace), size=n, replace=config.trace_with_replacement)
        recs = [trace.records[k] for k in idx]
        alpha = _alpha_from_probs([r.topk_probs for r in recs], metric)
        slm = np.array([r.slm_correct for r in recs], dtype=bool)
        llm = np.array([r.llm_correct for r in recs], dtype=bool)
        bits = np.array([r.query_tokens * config.bits_per_token for r in recs], dtype=float)
    else:
        margin, slm, llm = synth_arrays(config.synthetic, q_rng, n)
        if metric == "margin":
            alpha = margin
        else:
            alpha = _alpha_from_probs([synthetic_distribution(a) for a in margin], metric)
        bits = np.full(n, float(config.query_bits_default))

    return Instance(
        user_positions=users,
        es_positions=es,
        channel_gain=gains,
        c_local=c_local,
        c_es=c_es,
        query_bits=bits,
        alpha=np.clip(alpha, 0.0, 1.0),
        slm_correct=slm,
        llm_correct=llm,
        radio=config.radio,
        c_max=config.c_max_tflops * 1e12,
        w_slm=float(config.w_slm_flops),
        w_llm=float(config.w_llm_flops),
    )


# Serialization ------------------------------------------------------------

_ARRAY_FIELDS = (
    "user_positions",
    "es_positions",
    "channel_gain",
    "c_local",
    "c_es",
    "query_bits",
    "alpha",
    "slm_correct",
    "llm_correct",
)
_RADIO_FIELDS = ("bandwidth_hz", "tx_power_w", "noise_psd_dbm_per_hz", "path_loss_exponent", "reference_loss_db")
_SCALAR_FIELDS = ("c_max", "w_slm", "w_llm")


def instance_to_json(instance: Instance) -> dict:
    d = {"format": "edgeoffload.instance/1"}
    for name in _ARRAY_FIELDS:
        d[name] = getattr(instance, name).tolist()
    for name in _RADIO_FIELDS:
        d[name] = float(getattr(instance.radio, name))
    for name in _SCALAR_FIELDS:
        d[name] = float(getattr(instance, name))
    return d


def save_instance(instance: Instance) -> str:
    # json writes floats via repr, which round-trips bit-exactly
    return json.dumps(instance_to_json(instance), indent=1)


def load_instance(document) -> Instance:
    if isinstance(document, (str, bytes)):
        try:
            d = json.loads(document)
        except json.JSONDecodeError as e:
            raise InstanceFormatError(f"invalid JSON: {e.msg}") from None
    else:
        d = document
    if not isinstance(d, dict):
        raise InstanceFormatError("instance document must be a JSON object")
    for name in _ARRAY_FIELDS + _RADIO_FIELDS + _SCALAR_FIELDS:
        if name not in d:
            raise InstanceFormatError(f"missing field {name!r}")
    kw = {}
    for name in _ARRAY_FIELDS:
        try:
            kw[name] = np.array(d[name], dtype=bool if name.endswith("_correct") else float)
        except (TypeError, ValueError):
            raise InstanceFormatError(f"field {name!r} is not a numeric array") from None
        if kw[name].dtype == object:
            raise InstanceFormatError(f"field {name!r} is ragged")
    for name in ("slm_correct", "llm_correct"):
        if any(not isinstance(v, bool) for v in np.ravel(np.array(d[name], dtype=object))):
            raise InstanceFormatError(f"field {name!r} must hold booleans")
    try:
        kw["radio"] = RadioParams(**{name: float(d[name]) for name in _RADIO_FIELDS})
    except ValueError as e:
        raise InstanceFormatError(str(e)) from None
    for name in _SCALAR_FIELDS:
        kw[name] = float(d[name])
    return Instance(**kw)
