"""Pure numpy kernels; the fallback when the compiled module is absent."""

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


def gm_class_terms(x, b, a, means, variances):
    """Per-class log density, conditional velocity and log-density gradient.

    Class ``k`` at noise weight ``a`` and data weight ``b`` is distributed
    as ``Normal(b*mu_k, (a^2 + b^2 var_k) I)``.
    """
    d = means.shape[1]
    V = a * a + b * b * variances
    r = x - b * means
    logn = -0.5 * (d * (_LOG_2PI + np.log(V)) + (r * r).sum(axis=1) / V)
    vel = means + ((b * variances - a) / V)[:, None] * r
    grad = -r / V[:, None]
    return logn, vel, grad


def _normalise(logits):
    m = logits.max()
    e = np.exp(logits - m)
    tot = e.sum()
    return e / tot, m + np.log(tot)


def gm_velocity(x, b, a, means, variances, log_priors, z, softmax):
    """Mixture velocity; ``z`` is the per-class embedding read-out.

    ``softmax`` tilts the priors by ``z``; otherwise class fields combine
    linearly, ``v_null + sum_k z_k (v_k - v_null)``.
    """
    logn, vel, _ = gm_class_terms(x, b, a, means, variances)
    logits = log_priors + logn
    if softmax:
        logits += z
    e = np.exp(logits - logits.max())
    w = e / e.sum()
    if not softmax:
        w = z + (1.0 - z.sum()) * w
    return w @ vel


def gm_posterior(x, b, a, means, variances, log_priors, cls):
    """``log p(cls | x)`` and its gradient in ``x``."""
    logn, _, grad = gm_class_terms(x, b, a, means, variances)
    p, _ = _normalise(log_priors + logn)
    return float(np.log(p[cls])), grad[cls] - p @ grad


def mlp_forward(inp, weights, biases):
    h = inp
    last = len(weights) - 1
    for j, (W, bias) in enumerate(zip(weights, biases)):
        h = W @ h + bias
        if j < last:
            h = np.tanh(h)
    return h


def mlp_velocity(x, tau, c, weights, biases):
    return mlp_forward(np.concatenate([x, [tau], c]), weights, biases)
