import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfca.attention import (
    CA_KIND,
    NONE,
    PA_KIND,
    PFCA,
    PFCA_KIND,
    AttentionKind,
    ChannelAttention,
    PixelAttention,
    attention_params,
    ca_forward,
    channel_stats,
    make_attention,
    pa_forward,
    pfca_energy,
    pfca_forward,
    pfca_weights,
)
from pfca.gradsuite import run_suite
from pfca.tensor import NonFiniteError, Tensor, tsum

LAM = 1e-4


def energy_by_hand(u, lam=LAM):
    """V computed one channel at a time, straight from the defining formula."""
    c = len(u)
    mu = sum(u) / c
    var = sum((x - mu) ** 2 for x in u) / c
    return [((x - mu) ** 2 + 2 * (var + lam)) / (4 * (var + lam)) for x in u]


def as_map(u, hw=3):
    """An N x C x hw x hw map whose spatial means equal ``u``, with spatial texture."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, c = u.shape
    texture = np.random.default_rng(0).standard_normal((n, c, hw, hw))
    texture -= texture.mean(axis=(2, 3), keepdims=True)
    return u[:, :, None, None] + texture


def sig(v):
    return 1 / (1 + math.exp(-v))


# -- worked examples ----------------------------------------------------------

def test_two_channel_example():
    v = pfca_energy(np.array([[1.0, -1.0]]))[0]
    expected = (1 + 2 * 1.0001) / (4 * 1.0001)
    np.testing.assert_allclose(v, [expected, expected], atol=1e-12)
    # the commonly quoted decimal 0.75002 misrounds this expression (0.749975)
    assert v[0] == pytest.approx(0.75002, abs=5e-5)
    w = pfca_weights(as_map([1.0, -1.0]))[0, :, 0, 0]
    np.testing.assert_allclose(w, [sig(expected)] * 2, atol=1e-12)
    assert w[0] == pytest.approx(0.67918, abs=1e-5)


def test_equal_channels_give_half():
    x = np.full((1, 5, 2, 2), 3.0)
    np.testing.assert_allclose(pfca_energy(x.mean(axis=(2, 3))), 0.5, atol=1e-12)
    out = pfca_forward(Tensor(x)).data
    np.testing.assert_allclose(out, sig(0.5) * x, atol=1e-12)
    assert sig(0.5) == pytest.approx(0.62246, abs=1e-5)


def test_one_hot_channel_example():
    u = np.array([[0.0, 0.0, 0.0, 4.0]])
    st_ = channel_stats(u)
    assert st_.mu[0] == 1.0 and st_.sigma2[0] == 3.0
    v = pfca_energy(u)[0]
    np.testing.assert_allclose(v, [7.0002 / 12.0004] * 3 + [15.0002 / 12.0004], atol=1e-12)
    np.testing.assert_allclose(v, [0.58333, 0.58333, 0.58333, 1.24999], atol=2e-5)
    np.testing.assert_allclose(v, energy_by_hand([0.0, 0.0, 0.0, 4.0]), atol=1e-12)


def test_forward_matches_hand_formula_on_random_maps():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 7, 4, 5))
    out = pfca_forward(Tensor(x)).data
    for n in range(3):
        u = x[n].mean(axis=(1, 2))
        gates = [sig(v) for v in energy_by_hand(list(u))]
        np.testing.assert_allclose(out[n], x[n] * np.array(gates)[:, None, None], atol=1e-12)


def test_population_variance():
    u = np.array([[1.0, 2.0, 4.0]])
    assert channel_stats(u).sigma2[0] == pytest.approx(np.var([1.0, 2.0, 4.0], ddof=0))


# -- invariants ---------------------------------------------------------------

channel_vectors = arrays(
    np.float64, st.tuples(st.integers(1, 4), st.integers(1, 24)), elements=st.floats(-50, 50, width=64)
)


@settings(max_examples=200, deadline=None)
@given(channel_vectors)
def test_energy_lower_bound_and_weight_range(u):
    v = pfca_energy(u)
    assert np.all(v >= 0.5 - 1e-12)
    w = 1 / (1 + np.exp(-v))
    assert np.all(w >= sig(0.5) - 1e-12) and np.all(w < 1)


@settings(max_examples=200, deadline=None)
@given(channel_vectors)
def test_mean_law(u):
    st_ = channel_stats(u)
    law = (3 * st_.sigma2 + 2 * LAM) / (4 * (st_.sigma2 + LAM))
    np.testing.assert_allclose(pfca_energy(u).mean(axis=1), law, atol=1e-6)


def test_mean_law_limit():
    u = np.array([[0.0, 1e4]])
    assert pfca_energy(u).mean() == pytest.approx(0.75, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, (2, 6, 3, 3), elements=st.floats(-10, 10, width=64)),
    st.floats(-100, 100, width=64),
)
def test_shift_invariance(x, c):
    np.testing.assert_allclose(pfca_weights(x + c), pfca_weights(x), atol=1e-6)


def test_monotonicity_on_random_vectors():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        c = int(rng.integers(2, 65))
        u = rng.standard_normal((1, c)) * rng.uniform(0.01, 10)
        dev = np.abs(u[0] - u[0].mean())
        v = pfca_energy(u)[0]
        order = np.argsort(dev)
        for a, b in zip(order[1:], order[:-1]):
            # strict where deviations differ beyond roundoff, non-decreasing always
            assert v[a] >= v[b]
            if dev[a] - dev[b] > 1e-9 * dev.max():
                assert v[a] > v[b]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_batch_independence(n, c, seed):
    x = np.random.default_rng(seed).standard_normal((n, c, 3, 3))
    whole = pfca_forward(Tensor(x)).data
    parts = np.concatenate([pfca_forward(Tensor(x[i : i + 1])).data for i in range(n)])
    np.testing.assert_array_equal(whole, parts)


def test_pfca_has_no_parameters_and_rejects_bad_input():
    m = PFCA()
    assert m.parameters() == [] and len(m.param_store()) == 0
    assert attention_params(PFCA_KIND, 64) == 0
    with pytest.raises(NonFiniteError):
        pfca_forward(Tensor(np.array([[[[np.nan]]]])))
    with pytest.raises(ValueError):
        pfca_forward(Tensor(np.ones((1, 2, 1, 1))), lam=0.0)


def test_lambda_is_configurable():
    x = as_map([[0.0, 0.0, 1.0]])
    a = pfca_weights(x, lam=1e-4)
    b = pfca_weights(x, lam=10.0)
    assert not np.allclose(a, b)
    np.testing.assert_allclose(pfca_forward(Tensor(x), lam=10.0).data, x * b, atol=1e-12)


# -- CA and PA -------------------------------------------------------------------

def test_ca_parameter_counts():
    assert attention_params(CA_KIND, 64) == 580
    assert ChannelAttention(64, 16).param_store().count() == 580
    assert 16 * attention_params(CA_KIND, 64) == 9280
    assert attention_params(AttentionKind("ca", 16), 256) == 2 * 256 * 16 + 16 + 256
    with pytest.raises(ValueError):
        ChannelAttention(8, 16)


def test_pa_parameter_counts():
    assert attention_params(PA_KIND, 64) == 4160
    assert PixelAttention(64).param_store().count() == 4160
    assert 16 * attention_params(PA_KIND, 64) == 66560


def test_zero_weights_halve_the_input():
    x = np.random.default_rng(0).standard_normal((2, 8, 3, 3))
    z = lambda *s: Tensor(np.zeros(s))  # noqa: E731
    np.testing.assert_allclose(ca_forward(Tensor(x), z(2, 8), z(2), z(8, 2), z(8)).data, 0.5 * x)
    np.testing.assert_allclose(pa_forward(Tensor(x), z(8, 8, 1, 1), z(8)).data, 0.5 * x)


def test_ca_matches_manual_evaluation():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 8, 3, 3))
    w1, b1, w2, b2 = rng.standard_normal((2, 8)), rng.standard_normal(2), rng.standard_normal((8, 2)), rng.standard_normal(8)
    u = x.mean(axis=(2, 3))
    s = 1 / (1 + np.exp(-(np.maximum(u @ w1.T + b1, 0) @ w2.T + b2)))
    out = ca_forward(Tensor(x), Tensor(w1), Tensor(b1), Tensor(w2), Tensor(b2)).data
    np.testing.assert_allclose(out, x * s[:, :, None, None], atol=1e-12)


def test_pa_matches_manual_evaluation():
    rng = np.random.default_rng(6)
    x, w, b = rng.standard_normal((1, 3, 2, 2)), rng.standard_normal((3, 3, 1, 1)), rng.standard_normal(3)
    logits = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x) + b[None, :, None, None]
    np.testing.assert_allclose(pa_forward(Tensor(x), Tensor(w), Tensor(b)).data, x / (1 + np.exp(-logits)), atol=1e-12)


def test_make_attention_and_kind_parsing():
    assert make_attention(NONE, 16) is None
    assert isinstance(make_attention(PFCA_KIND, 16), PFCA)
    assert isinstance(make_attention(CA_KIND, 16), ChannelAttention)
    assert isinstance(make_attention(PA_KIND, 16), PixelAttention)
    assert str(AttentionKind.parse(" CA ", 8)) == "ca(r=8)"
    for bad in (dict(kind="se"), dict(kind="ca", reduction=0), dict(kind="pfca", lam=-1.0)):
        with pytest.raises(ValueError):
            AttentionKind(**bad)


# -- gradients -------------------------------------------------------------------

def test_attention_gradchecks():
    reports = run_suite("attention")
    assert [r.name for r in reports] == ["pfca", "ca", "pa"]
    for r in reports:
        assert r.passed, str(r)


def test_pfca_gradient_through_statistics():
    # the gate depends on x through mu and sigma^2; a detached-gate gradient differs
    x = Tensor(as_map([[0.3, -1.2, 2.0, 0.1]]), requires_grad=True)
    tsum(pfca_forward(x)).backward()
    detached = np.broadcast_to(pfca_weights(x.data), x.shape)
    assert not np.allclose(x.grad, detached)


def test_corrupted_backward_is_caught(monkeypatch):
    import pfca.attention as attention

    real = attention._pfca_backward
    monkeypatch.setattr(attention, "_pfca_backward", lambda *a: 1.01 * real(*a))
    failed = [r.name for r in run_suite("attention") if not r.passed]
    assert failed == ["pfca"]
