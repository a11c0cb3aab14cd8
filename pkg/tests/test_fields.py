import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import mc_velocity
from rfsampling import _backend, _pykernels
from rfsampling.fields import GaussianMixtureField, LinearEmbeddingField, cond_jvp
from rfsampling.numerics import DimensionError, Rng, central_diff_grad

TWO = dict(means=[[1.0, 0.0], [-1.0, 0.0]], variances=[0.25, 1.0])


def single(mu=(0.0,), var=1.0):
    # a one-class "mixture": the second class has negligible prior
    return GaussianMixtureField([list(mu), [0.0] * len(mu)], [var, 1.0], priors=[1 - 1e-300, 1e-300])


def test_single_class_examples():
    f = single()
    c = f.null_embedding()
    for x in ([-1.3], [0.0], [2.5]):
        assert np.allclose(f.velocity(x, 0.5, c), [0.0], atol=1e-15)
    assert np.allclose(f.velocity([2.0], 0.0, c), [-2.0])


@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), st.floats(0, 0.999))
def test_prior_equals_data_closed_form(x, tau):
    f = GaussianMixtureField([[0.0] * 3, [0.0] * 3], [1.0, 1.0])
    expect = (2 * tau - 1) * x / ((1 - tau) ** 2 + tau**2)
    assert np.allclose(f.velocity(x, tau, f.null_embedding()), expect, rtol=0, atol=1e-10)


def test_class_embedding_selects_class_field(rng):
    f = GaussianMixtureField(**TWO)
    for _ in range(20):
        x, tau = rng.normal(size=2), rng.uniform()
        for k in range(2):
            assert np.allclose(f.velocity(x, tau, f.class_embedding(k)), f.class_velocity(x, tau, k), atol=1e-13)
        # the null token and the zero vector both select the unconditional field
        assert np.allclose(f.velocity(x, tau, f.null_embedding()), f.velocity(x, tau, np.zeros(3)), atol=1e-15)


def test_linear_map_is_affine_in_the_embedding(rng):
    f = GaussianMixtureField(**TWO)
    x, tau = rng.normal(size=2), 0.4
    c1, c2 = rng.normal(size=3), rng.normal(size=3)
    v0 = f.velocity(x, tau, np.zeros(3))
    lhs = f.velocity(x, tau, c1) + f.velocity(x, tau, c2) - v0
    assert np.allclose(lhs, f.velocity(x, tau, c1 + c2), atol=1e-12)


@pytest.mark.parametrize("embed_map", ["onehot", "softmax"])
def test_cond_jvp_matches_finite_difference(embed_map, rng):
    f = GaussianMixtureField(**TWO, embed_map=embed_map, kappa=0.5)
    for _ in range(30):
        x, tau, c, u = rng.normal(size=2), rng.uniform(0.05, 0.95), rng.normal(size=3), rng.normal(size=3)
        h = 1e-5
        fd = (f.velocity(x, tau, c + h * u) - f.velocity(x, tau, c - h * u)) / (2 * h)
        assert np.allclose(f.cond_jvp(x, tau, c, u), fd, atol=1e-7)


def test_generic_cond_jvp_falls_back_to_differences():
    class Bare:
        state_dim, cond_dim = 2, 2

        def velocity(self, x, tau, c):
            return np.array([c[0] ** 2, c[0] * c[1]])

    out = cond_jvp(Bare(), np.zeros(2), 0.5, np.array([1.0, 2.0]), np.array([1.0, 0.0]))
    assert np.allclose(out, [2.0, 2.0], atol=1e-7)


def test_mc_oracle_brackets_velocity():
    """Closed form inside the 3-sigma band of the regression oracle at 24 probes."""
    f = GaussianMixtureField(**TWO)
    g = Rng(11)
    probes = []
    for i in range(24):
        k = i % 3  # classes 0, 1 and the unconditional mixture
        tau = 0.1 + 0.8 * g.uniform()
        x = tau * (f.means[k] if k < 2 else 0.0) + 0.6 * g.normal(2)
        probes.append((k, tau, x))
    outside = []
    for i, (k, tau, x) in enumerate(probes):
        w = [1.0, 0.0] if k == 0 else [0.0, 1.0] if k == 1 else [0.5, 0.5]
        c = f.class_embedding(k) if k < 2 else f.null_embedding()
        est, se, n = mc_velocity(TWO["means"], TWO["variances"], w, x, tau, radius=0.15, seed=i)
        assert n > 300
        v = f.velocity(x, tau, c)
        if np.any(np.abs(v - est) > 3 * se):
            outside.append((k, tau, x, v, est, se))
    assert not outside, outside


def test_log_posterior_examples():
    f = GaussianMixtureField([[2.0], [-2.0]], [1.0, 1.0])
    assert f.log_posterior([0.0], 0.6, 0) == pytest.approx(math.log(0.5), abs=1e-15)
    s = single()
    for x in ([-3.0], [0.2]):
        assert s.log_posterior(x, 0.7, 0) == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(s.posterior_score(x, 0.7, 0), 0.0, atol=1e-12)


def test_log_posterior_matches_high_precision_reference():
    mpmath.mp.dps = 50
    f = GaussianMixtureField([[1.0], [-1.0]], [1.0, 1.0])
    tau, x = mpmath.mpf("0.5"), mpmath.mpf("0.3")
    a, b = 1 - tau, tau
    V = a**2 + b**2

    def dens(m):
        return mpmath.exp(-(x - b * m) ** 2 / (2 * V)) / mpmath.sqrt(2 * mpmath.pi * V)

    ref = mpmath.log(dens(1) / (dens(1) + dens(-1)))
    assert f.log_posterior([0.3], 0.5, 0) == pytest.approx(float(ref), abs=1e-14)


def test_score_at_symmetric_point():
    m, var, tau = 1.5, 0.7, 0.35
    f = GaussianMixtureField([[m], [-m]], [var, var])
    a, b = 1 - tau, tau
    assert f.posterior_score([0.0], tau, 0)[0] == pytest.approx(b * m / (a * a + b * b * var), rel=1e-12)
    fd = central_diff_grad(lambda y: f.log_posterior(y, tau, 0), np.array([0.0]))
    assert abs(fd[0] - b * m / (a * a + b * b * var)) < 1e-6


def test_score_matches_finite_differences_at_500_points():
    f = GaussianMixtureField([[1.0, 0.0, 0.5], [-1.0, 0.3, 0.0], [0.0, -1.0, 1.0]], [0.25, 1.0, 0.5],
                             priors=[0.5, 0.3, 0.2])
    g = Rng(3)
    worst = 0.0
    for _ in range(500):
        x = 1.5 * g.normal(3)
        tau = 0.98 * g.uniform()
        k = int(g.integers(3, 1)[0])
        fd = central_diff_grad(lambda y: f.log_posterior(y, tau, k), x)
        worst = max(worst, np.abs(fd - f.posterior_score(x, tau, k)).max())
    assert worst < 1e-6


def test_backends_agree(rng):
    avail = _backend.available()
    ref = _pykernels
    for mod in avail.values():
        for _ in range(50):
            K, d = 3, 4
            m, v = rng.normal(size=(K, d)), rng.uniform(0.1, 2, K)
            lp = np.log(rng.dirichlet(np.ones(K)))
            x, t, z = 3 * rng.normal(size=d), rng.uniform(), rng.normal(size=K)
            for soft in (False, True):
                assert np.allclose(mod.gm_velocity(x, t, 1 - t, m, v, lp, z, soft),
                                   ref.gm_velocity(x, t, 1 - t, m, v, lp, z, soft), rtol=1e-12, atol=1e-12)
            J1, g1 = mod.gm_posterior(x, t, 1 - t, m, v, lp, 2)
            J2, g2 = ref.gm_posterior(x, t, 1 - t, m, v, lp, 2)
            assert J1 == pytest.approx(J2, abs=1e-12) and np.allclose(g1, g2, atol=1e-12)
            for a, b in zip(mod.gm_class_terms(x, t, 1 - t, m, v), ref.gm_class_terms(x, t, 1 - t, m, v)):
                assert np.allclose(a, b, atol=1e-12)


def test_field_methods_under_each_backend(backend, rng):
    f = GaussianMixtureField(**TWO, embed_map="softmax", kappa=0.5)
    x, tau, c = rng.normal(size=2), 0.3, rng.normal(size=3)
    # reference from the numpy class terms, independent of the dispatch
    logn, vel, grad = _pykernels.gm_class_terms(x, tau, 1 - tau, f.means, f.variances)
    r = np.exp(f.log_priors + 0.5 * (f.keys @ c) + logn)
    assert np.allclose(f.velocity(x, tau, c), (r / r.sum()) @ vel, atol=1e-13)
    p = np.exp(f.log_priors + logn)
    p /= p.sum()
    assert f.log_posterior(x, tau, 1) == pytest.approx(math.log(p[1]), abs=1e-13)
    assert np.allclose(f.posterior_score(x, tau, 1), grad[1] - p @ grad, atol=1e-13)


def test_mixture_weights():
    f = GaussianMixtureField(**TWO)
    assert np.allclose(f.mixture_weights(f.null_embedding()), [0.5, 0.5])
    assert np.allclose(f.mixture_weights(f.class_embedding(1)), [0, 1])
    with pytest.raises(ValueError):
        f.mixture_weights([3.0, -2.0, 0.0])
    s = GaussianMixtureField(**TWO, embed_map="softmax", kappa=2.0)
    w = s.mixture_weights(s.class_embedding(0))
    assert w[0] == pytest.approx(math.exp(2) / (math.exp(2) + 1))


def test_sample_data_moments():
    f = GaussianMixtureField(**TWO, priors=[0.3, 0.7])
    y, cls = f.sample_data(Rng(0), 100_000)
    assert abs((cls == 0).mean() - 0.3) < 0.01
    assert np.allclose(y[cls == 0].mean(0), [1, 0], atol=0.02)
    assert np.allclose(y[cls == 1].std(0), [1, 1], atol=0.02)


def test_field_validation():
    with pytest.raises(ValueError):
        GaussianMixtureField(**TWO, priors=[0.6, 0.6])
    with pytest.raises(ValueError):
        GaussianMixtureField(TWO["means"], [0.25, 0.0])
    with pytest.raises(ValueError):
        GaussianMixtureField(**TWO, embed_map="nearest")
    f = GaussianMixtureField(**TWO)
    with pytest.raises(ValueError, match="tau"):
        f.velocity([0, 0], 1.2, f.null_embedding())
    with pytest.raises(DimensionError):
        f.velocity([0, 0, 0], 0.5, f.null_embedding())
    with pytest.raises(DimensionError):
        f.velocity([0, 0], 0.5, [1.0, 0.0])
    with pytest.raises(ValueError, match="class id"):
        f.log_posterior([0, 0], 0.5, 2)


def test_linear_field_examples(rng):
    f = LinearEmbeddingField(rng.normal(size=(2, 2)), rng.normal(size=2), np.zeros((2, 3)))
    x = rng.normal(size=2)
    assert np.array_equal(f.velocity(x, 0.3, rng.normal(size=3)), f.velocity(x, 0.3, rng.normal(size=3)))
    g = LinearEmbeddingField(np.zeros((2, 2)), np.zeros(2), np.eye(2))
    assert np.allclose(g.velocity(x, 0.1, [1.0, 2.0]), [1, 2])


@given(arrays(np.float64, 3, elements=st.floats(-100, 100)), arrays(np.float64, 3, elements=st.floats(-100, 100)))
def test_linear_field_superposition(c1, c2):
    g = np.random.default_rng(0)
    f = LinearEmbeddingField(g.normal(size=(2, 2)), g.normal(size=2), g.normal(size=(2, 3)),
                             time_gain=lambda t: 1 + t)
    x = np.array([0.3, -0.7])
    r = f.velocity(x, 0.4, c1) + f.velocity(x, 0.4, c2) - f.velocity(x, 0.4, np.zeros(3)) - f.velocity(x, 0.4, c1 + c2)
    assert np.abs(r).max() <= 1e-12 * (1 + np.abs(c1).max() + np.abs(c2).max()) * 10


def test_linear_field_jacobians(rng):
    A = rng.normal(size=(3, 3))
    f = LinearEmbeddingField(A, np.zeros(3), rng.normal(size=(3, 2)), time_gain=lambda t: 2.0)
    assert np.array_equal(f.x_jacobian(0.5), 2 * A)
    assert f.lipschitz == pytest.approx(np.linalg.norm(A, 2))
    u = rng.normal(size=2)
    assert np.allclose(f.cond_jvp(np.zeros(3), 0.5, np.zeros(2), u), 2 * f.cond_matrix @ u)
