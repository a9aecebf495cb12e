"""Token-level uncertainty metrics, uncertainty traces and accuracy scoring.

A trace is a list of first-token top-k distributions with SLM/LLM
correctness labels, loaded from a JSONL file or drawn from a synthetic
accuracy model.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

BITS_PER_TOKEN = 16
_SUM_TOL = 1e-9


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TokenDistribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probs)
        object.__setattr__(self, "probs", p)
        if len(p) < 2:
            raise ValueError(f"need at least 2 probabilities, got {len(p)}")
        if any(not 0.0 <= x <= 1.0 for x in p):
            raise ValueError("probabilities must lie in [0, 1]")
        if any(a < b for a, b in zip(p, p[1:])):
            raise ValueError("probabilities must be sorted in descending order")
        if abs(sum(p) - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {sum(p)!r}, expected 1")

    @classmethod
    def normalized(cls, probs: Sequence[float]) -> "TokenDistribution":
        """Sort descending and renormalize over the given top-k entries.

        Sums already within the validation tolerance are kept as given so
        that stored traces round-trip exactly.
        """
        p = sorted((float(x) for x in probs), reverse=True)
        s = sum(p)
        if abs(s - 1.0) <= _SUM_TOL:
            return cls(tuple(p))
        return cls(tuple(x / s for x in p))

    @property
    def k(self) -> int:
        return len(self.probs)


def _as_probs(d) -> np.ndarray:
    p = np.asarray(getattr(d, "probs", d), dtype=float)
    if p.size < 2:
        raise ValueError(f"need at least 2 probabilities, got {p.size}")
    return p


def margin_uncertainty(d) -> float:
    """1 - (p1 - p2) over the two largest probabilities."""
    p = np.sort(_as_probs(d))[::-1]
    return float(1.0 - (p[0] - p[1]))


def _entropy_and_support(p: np.ndarray) -> tuple[float, int]:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()), int(nz.size)


def entropy_uncertainty(d) -> float:
    """Shannon entropy divided by log of the support size (zero entries excluded)."""
    h, k = _entropy_and_support(_as_probs(d))
    if k < 2:
        return 0.0
    return float(min(1.0, max(0.0, h / math.log(k))))


def perplexity_uncertainty(d) -> float:
    """Perplexity mapped from [1, k] onto [0, 1]; k is the support size."""
    h, k = _entropy_and_support(_as_probs(d))
    if k < 2:
        return 0.0
    return float(min(1.0, max(0.0, (math.exp(h) - 1.0) / (k - 1))))


METRICS: dict[str, Callable] = {
    "margin": margin_uncertainty,
    "entropy": entropy_uncertainty,
    "perplexity": perplexity_uncertainty,
}


def get_metric(name: str) -> Callable:
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown uncertainty metric {name!r}; choose from {sorted(METRICS)}") from None


@dataclass(frozen=True)
class UncertaintyRecord:
    topk_probs: TokenDistribution
    slm_correct: bool
    llm_correct: bool
    query_tokens: int

    def __post_init__(self):
        if not isinstance(self.topk_probs, TokenDistribution):
            object.__setattr__(self, "topk_probs", TokenDistribution(self.topk_probs))
        if int(self.query_tokens) < 1:
            raise ValueError("query_tokens must be >= 1")

    @property
    def query_bits(self) -> int:
        return int(self.query_tokens) * BITS_PER_TOKEN

    def to_json(self) -> dict:
        return {
            "topk_probs": list(self.topk_probs.probs),
            "slm_correct": bool(self.slm_correct),
            "llm_correct": bool(self.llm_correct),
            "query_tokens": int(self.query_tokens),
        }


@dataclass(frozen=True)
class UncertaintyTrace:
    records: tuple[UncertaintyRecord, ...]
    source: str = "file"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise TraceError("trace is empty")

    def __len__(self) -> int:
        return len(self.records)

    def alphas(self, metric: str = "margin") -> np.ndarray:
        f = get_metric(metric)
        return np.array([f(r.topk_probs) for r in self.records])

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)


_REQUIRED = ("topk_probs", "slm_correct", "llm_correct", "query_tokens")


def parse_record(obj: dict, lineno: int) -> UncertaintyRecord:
    for key in _REQUIRED:
        if key not in obj:
            raise TraceError(f"line {lineno}: missing field {key!r}")
    probs = obj["topk_probs"]
    if not isinstance(probs, list) or len(probs) < 2:
        raise TraceError(f"line {lineno}: topk_probs needs at least 2 entries")
    try:
        p = [float(x) for x in probs]
    except (TypeError, ValueError):
        raise TraceError(f"line {lineno}: topk_probs must be numbers") from None
    if any(not math.isfinite(x) or x < 0 for x in p):
        raise TraceError(f"line {lineno}: topk_probs must be finite and nonnegative")
    s = sum(p)
    if s <= 0:
        raise TraceError(f"line {lineno}: topk_probs sum to zero")
    if any(a < b for a, b in zip(p, p[1:])):
        warnings.warn(f"line {lineno}: topk_probs not sorted, sorting", stacklevel=3)
    if abs(s - 1.0) > 1e-6:
        warnings.warn(f"line {lineno}: topk_probs sum to {s:.6g}, renormalizing", stacklevel=3)
    for key in ("slm_correct", "llm_correct"):
        if not isinstance(obj[key], bool):
            raise TraceError(f"line {lineno}: {key} must be a boolean")
    qt = obj["query_tokens"]
    if isinstance(qt, bool) or not isinstance(qt, int) or qt < 1:
        raise TraceError(f"line {lineno}: query_tokens must be a positive integer")
    return UncertaintyRecord(TokenDistribution.normalized(p), obj["slm_correct"], obj["llm_correct"], qt)


def parse_trace(text: str) -> UncertaintyTrace:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"line {lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise TraceError(f"line {lineno}: expected a JSON object")
        records.append(parse_record(obj, lineno))
    if not records:
        raise TraceError("trace contains no records")
    return UncertaintyTrace(tuple(records), source="file")


def load_trace(path) -> UncertaintyTrace:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise TraceError(f"{path}: {e.strerror}") from None
    return parse_trace(text)


# Synthetic accuracy model -------------------------------------------------


def _piecewise(points: Sequence[tuple[float, float]]) -> Callable[[np.ndarray], np.ndarray]:
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    return lambda a: np.interp(a, xs, ys)


# Alpha histogram over ten equal-width bins on [0, 1]; 40% of mass at alpha >= 0.8.
DEFAULT_ALPHA_WEIGHTS = (0.10, 0.06, 0.05, 0.05, 0.05, 0.06, 0.09, 0.14, 0.18, 0.22)


@dataclass(frozen=True)
class SynthParams:
    n: int = 1000
    alpha_edges: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
    alpha_weights: tuple[float, ...] = DEFAULT_ALPHA_WEIGHTS
    slm_acc_curve: tuple[tuple[float, float], ...] = ((0.0, 0.95), (1.0, 0.35))
    llm_acc_curve: tuple[tuple[float, float], ...] = ((0.0, 0.98), (1.0, 0.75))
    query_tokens: int = 512

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        edges = np.asarray(self.alpha_edges, dtype=float)
        w = np.asarray(self.alpha_weights, dtype=float)
        if edges.size != w.size + 1:
            raise ValueError("alpha_edges must have one more entry than alpha_weights")
        if (np.diff(edges) <= 0).any() or edges[0] < 0 or edges[-1] > 1:
            raise ValueError("alpha_edges must increase within [0, 1]")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("alpha_weights must be nonnegative and sum to 1")
        for name in ("slm_acc_curve", "llm_acc_curve"):
            pts = getattr(self, name)
            xs = [p[0] for p in pts]
            if len(pts) < 1 or any(not 0 <= y <= 1 for _, y in pts):
                raise ValueError(f"{name} values must lie in [0, 1]")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError(f"{name} breakpoints must be increasing")
        if self.query_tokens < 1:
            raise ValueError("query_tokens must be >= 1")

    def slm_acc(self, a):
        return _piecewise(self.slm_acc_curve)(a)

    def llm_acc(self, a):
        return _piecewise(self.llm_acc_curve)(a)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "alpha_edges": list(self.alpha_edges),
            "alpha_weights": list(self.alpha_weights),
            "slm_acc_curve": [list(p) for p in self.slm_acc_curve],
            "llm_acc_curve": [list(p) for p in self.llm_acc_curve],
            "query_tokens": self.query_tokens,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthParams":
        kw = dict(d)
        for key in ("alpha_edges", "alpha_weights"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        for key in ("slm_acc_curve", "llm_acc_curve"):
            if key in kw:
                kw[key] = tuple((float(a), float(b)) for a, b in kw[key])
        return cls(**kw)


def synth_arrays(params: SynthParams, rng: np.random.Generator, n: Optional[int] = None):
    """Draw (alpha, slm_correct, llm_correct) arrays from the synthetic model."""
    n = params.n if n is None else n
    edges = np.asarray(params.alpha_edges, dtype=float)
    w = np.asarray(params.alpha_weights, dtype=float)
    b = rng.choice(w.size, size=n, p=w / w.sum())
    alpha = edges[b] + rng.random(n) * (edges[b + 1] - edges[b])
    u_slm = rng.random(n)
    u_llm = rng.random(n)
    slm = u_slm < params.slm_acc(alpha)
    llm = u_llm < params.llm_acc(alpha)
    return alpha, slm, llm


def synthetic_distribution(alpha: float) -> TokenDistribution:
    """Two-point top-k distribution whose margin uncertainty equals ``alpha``."""
    p1 = 1.0 - alpha / 2.0
    return TokenDistribution((p1, p1 - (1.0 - alpha)))


def synth_trace(params: SynthParams = SynthParams(), seed=0) -> UncertaintyTrace:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alpha, slm, llm = synth_arrays(params, rng)
    records = tuple(
        UncertaintyRecord(synthetic_distribution(float(a)), bool(s), bool(l), params.query_tokens)
        for a, s, l in zip(alpha, slm, llm)
    )
    return UncertaintyTrace(records, source="synthetic")


def accuracy_of(instance, assignment) -> float:
    off = assignment.to_array() >= 0
    correct = np.where(off, instance.llm_correct, instance.slm_correct)
    return float(correct.mean())
