import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeoffload.assignment import Assignment
from edgeoffload.uncertainty import (
    SynthParams,
    TokenDistribution,
    TraceError,
    accuracy_of,
    entropy_uncertainty,
    load_trace,
    margin_uncertainty,
    parse_trace,
    perplexity_uncertainty,
    synth_trace,
)

from conftest import make_instance

METRIC_FNS = [margin_uncertainty, entropy_uncertainty, perplexity_uncertainty]


def test_margin_examples():
    assert margin_uncertainty(TokenDistribution((0.5, 0.3, 0.2))) == pytest.approx(0.8)
    assert margin_uncertainty(TokenDistribution((1.0, 0.0))) == 0.0
    assert margin_uncertainty(TokenDistribution((0.5, 0.5))) == 1.0


def test_entropy_examples():
    assert entropy_uncertainty(TokenDistribution((0.25,) * 4)) == pytest.approx(1.0)
    assert entropy_uncertainty(TokenDistribution((1.0, 0.0, 0.0, 0.0))) == 0.0
    assert entropy_uncertainty(TokenDistribution((0.5, 0.5))) == pytest.approx(1.0)


@pytest.mark.parametrize("k", [2, 3, 5, 10])
def test_perplexity_uniform_and_point_mass(k):
    assert perplexity_uncertainty(TokenDistribution((1.0 / k,) * k)) == pytest.approx(1.0)
    assert perplexity_uncertainty(TokenDistribution((1.0,) + (0.0,) * (k - 1))) == 0.0


@pytest.mark.parametrize("fn", METRIC_FNS)
def test_short_distribution_rejected(fn):
    with pytest.raises(ValueError):
        fn([1.0])


def test_token_distribution_invariants():
    with pytest.raises(ValueError):
        TokenDistribution((0.3, 0.7))
    with pytest.raises(ValueError):
        TokenDistribution((0.6, 0.6))
    with pytest.raises(ValueError):
        TokenDistribution((1.0,))
    d = TokenDistribution.normalized([1.0, 3.0, 4.0])
    assert d.probs == (0.5, 0.375, 0.125)


topk = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda p: sum(p) > 1e-3)


@given(topk, st.integers(1, 4))
def test_metrics_invariant_under_zero_padding(raw, pad):
    d = TokenDistribution.normalized(raw)
    padded = TokenDistribution(d.probs + (0.0,) * pad)
    for fn in METRIC_FNS:
        assert fn(padded) == pytest.approx(fn(d), abs=1e-12)


@given(topk, st.randoms())
def test_margin_permutation_invariant(raw, rnd):
    p = np.array(raw) / sum(raw)
    shuffled = list(p)
    rnd.shuffle(shuffled)
    assert margin_uncertainty(shuffled) == pytest.approx(margin_uncertainty(p), abs=1e-15)


@given(topk)
def test_metrics_in_unit_interval(raw):
    d = TokenDistribution.normalized(raw)
    for fn in METRIC_FNS:
        assert 0.0 <= fn(d) <= 1.0


def _line(probs, slm=True, llm=True, tokens=20):
    return json.dumps({"topk_probs": probs, "slm_correct": slm, "llm_correct": llm, "query_tokens": tokens})


def test_load_well_formed_trace(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    for _ in range(1000):
        p = np.sort(rng.dirichlet([1, 1, 1]))[::-1]
        lines.append(_line([float(x) for x in p]))
    path = tmp_path / "t.jsonl"
    path.write_text("\n".join(lines) + "\n")
    trace = load_trace(path)
    assert len(trace) == 1000
    assert trace.records[0].query_bits == 20 * 16


@pytest.mark.filterwarnings("ignore:.*renormalizing")
def test_unsorted_probs_sorted_with_warning():
    with pytest.warns(UserWarning, match="not sorted"):
        trace = parse_trace(_line([0.3, 0.5]) + "\n")
    # renormalized over the top-k as well
    assert trace.records[0].topk_probs.probs == pytest.approx((0.625, 0.375))


def test_renormalization_warning():
    with pytest.warns(UserWarning, match="renormalizing"):
        parse_trace(_line([0.6, 0.2]))


def test_single_prob_rejected_with_line_number():
    text = _line([0.5, 0.5]) + "\n" + _line([0.9]) + "\n"
    with pytest.raises(TraceError, match="line 2"):
        parse_trace(text)


@pytest.mark.parametrize(
    "obj, msg",
    [
        ({"topk_probs": [0.5, 0.5], "slm_correct": True, "llm_correct": True}, "query_tokens"),
        ({"topk_probs": [0.5, 0.5], "slm_correct": 1, "llm_correct": True, "query_tokens": 3}, "slm_correct"),
        ({"topk_probs": [0.5, 0.5], "slm_correct": True, "llm_correct": True, "query_tokens": 0}, "query_tokens"),
    ],
)
def test_bad_records(obj, msg):
    with pytest.raises(TraceError, match=msg):
        parse_trace(json.dumps(obj))


def test_trace_roundtrip():
    t = synth_trace(SynthParams(n=50), seed=1)
    again = parse_trace(t.dumps())
    assert again.records == t.records


def test_synthetic_records_reproduce_alpha():
    params = SynthParams(n=2000)
    t = synth_trace(params, seed=3)
    rng = np.random.default_rng(3)
    from edgeoffload.uncertainty import synth_arrays

    alpha, _, _ = synth_arrays(params, rng)
    got = np.array([margin_uncertainty(r.topk_probs) for r in t.records])
    assert np.max(np.abs(got - alpha)) < 1e-12


def test_synthetic_trace_deterministic():
    assert synth_trace(SynthParams(n=100), seed=9).records == synth_trace(SynthParams(n=100), seed=9).records


def test_default_alpha_law_is_skewed_high():
    p = SynthParams()
    edges = np.array(p.alpha_edges)
    w = np.array(p.alpha_weights)
    assert w[edges[:-1] >= 0.8 - 1e-12].sum() == pytest.approx(0.4)


def test_synthetic_slm_accuracy_trend_and_calibration():
    params = SynthParams(n=100_000)
    t = synth_trace(params, seed=12)
    alpha = np.array([margin_uncertainty(r.topk_probs) for r in t.records])
    slm = np.array([r.slm_correct for r in t.records])
    bins = np.minimum((alpha * 10).astype(int), 9)
    rates = []
    for b in range(10):
        sel = bins == b
        n = sel.sum()
        emp = slm[sel].mean()
        # the bin mean of a linear curve is its value at the midpoint
        target = float(params.slm_acc((b + 0.5) / 10))
        sigma = math.sqrt(target * (1 - target) / n)
        assert abs(emp - target) <= 3 * sigma
        rates.append(emp)
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_synth_params_validation():
    with pytest.raises(ValueError):
        SynthParams(slm_acc_curve=((0.0, 1.2), (1.0, 0.3)))
    with pytest.raises(ValueError):
        SynthParams(alpha_weights=(0.5,) * 10)


def test_accuracy_scoring():
    inst = make_instance(
        np.full((4, 2), 1e-11),
        slm_correct=np.array([True, True, True, True]),
        llm_correct=np.array([True, False, True, False]),
    )
    assert accuracy_of(inst, Assignment.local(4)) == 1.0
    assert accuracy_of(inst, Assignment((0, 1, 0, 1))) == 0.5


@settings(max_examples=50)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=5, max_size=5), st.lists(st.booleans(), min_size=5, max_size=5))
def test_accuracy_monotone_in_offload_set(labels, extra):
    slm = np.array([a and b for a, b in labels])
    llm = np.array([b for _, b in labels])
    inst = make_instance(np.full((5, 1), 1e-11), slm_correct=slm, llm_correct=llm)
    small = Assignment(tuple(0 if i < 2 else None for i in range(5)))
    big = Assignment(tuple(0 if (i < 2 or extra[i]) else None for i in range(5)))
    assert accuracy_of(inst, big) >= accuracy_of(inst, small)
