"""Compiled inner loops for the Robbins-Monro recursions.

The Python-level functions in :mod:`otprop.semidual` and
:mod:`otprop.proportions` define the math; these kernels repeat it in a
serial loop so that long single-sample runs are affordable. Cost columns come
either from a precomputed ``(J, I)`` table or are evaluated from the points;
the accumulation order matches :func:`otprop.core.squared_distances`.

Return value convention: ``-1`` on success, otherwise the 0-based step
offset at which a non-finite value appeared.
"""
import numpy as np
from numba import njit

RECENTER_EVERY = 10_000


@njit(cache=True)
def _fill_column(table, xs, ys, j, out):
    if table.shape[0] > 0:
        for i in range(out.shape[0]):
            out[i] = table[j, i]
    else:
        d = xs.shape[1]
        for i in range(out.shape[0]):
            out[i] = 0.0
        for m in range(d):
            ym = ys[j, m]
            for i in range(out.shape[0]):
                diff = xs[i, m] - ym
                out[i] += diff * diff


@njit(cache=True)
def _softmax_scores(u, col, eps, out):
    """Write ``softmax((u - col) / eps)`` into ``out``; return its log-normalizer."""
    n = u.shape[0]
    top = -np.inf
    for i in range(n):
        out[i] = (u[i] - col[i]) / eps
        if out[i] > top:
            top = out[i]
    total = 0.0
    for i in range(n):
        out[i] = np.exp(out[i] - top)
        total += out[i]
    for i in range(n):
        out[i] /= total
    return top + np.log(total)


@njit(cache=True)
def semidual_steps(table, xs, ys, weights, log_b, samples, step_scale, step_exponent,
                   eps, u, start, acc):
    """Run ``len(samples)`` ascent steps on ``g_eps`` in place.

    ``start`` is the number of steps already taken; ``acc`` holds the
    Neumaier sum and compensation of the ``g_eps`` values.
    """
    I = u.shape[0]
    col = np.empty(I)
    prob = np.empty(I)
    total = acc[0]
    comp = acc[1]
    for t in range(samples.shape[0]):
        j = samples[t]
        _fill_column(table, xs, ys, j, col)
        lse = _softmax_scores(u, col, eps, prob)
        ua = 0.0
        for i in range(I):
            ua += u[i] * weights[i]
        g = ua + eps * (log_b[j] - lse) - eps
        if not np.isfinite(g):
            acc[0] = total
            acc[1] = comp
            return t
        s = total + g
        if abs(total) >= abs(g):
            comp += (total - s) + g
        else:
            comp += (g - s) + total
        total = s
        n = start + t + 1
        step = step_scale / n ** step_exponent
        for i in range(I):
            u[i] += step * (weights[i] - prob[i])
        if n % RECENTER_EVERY == 0:
            mean = 0.0
            for i in range(I):
                mean += u[i]
            mean /= I
            for i in range(I):
                u[i] -= mean
    acc[0] = total
    acc[1] = comp
    return -1


@njit(cache=True)
def _class_softmax(u, labels, sizes, lam, means, h):
    """``h(u)``: softmax of minus the class means of ``u`` over ``lam``."""
    for k in range(sizes.shape[0]):
        means[k] = 0.0
    for i in range(u.shape[0]):
        means[labels[i]] += u[i]
    top = -np.inf
    for k in range(sizes.shape[0]):
        h[k] = -means[k] / sizes[k] / lam
        if h[k] > top:
            top = h[k]
    total = 0.0
    for k in range(sizes.shape[0]):
        h[k] = np.exp(h[k] - top)
        total += h[k]
    for k in range(sizes.shape[0]):
        h[k] /= total
    return top


@njit(cache=True)
def minmax_steps(table, xs, ys, labels, sizes, log_b, samples, step_scale, step_exponent,
                 eps, lam, u, start, trace_every, trace):
    """Run ascent steps on ``f_{eps,lambda}`` in place.

    Every ``trace_every`` steps the current ``h(u)`` is written to the next
    row of ``trace``.
    """
    I = u.shape[0]
    K = sizes.shape[0]
    col = np.empty(I)
    prob = np.empty(I)
    means = np.empty(K)
    h = np.empty(K)
    row = 0
    for t in range(samples.shape[0]):
        j = samples[t]
        top = _class_softmax(u, labels, sizes, lam, means, h)
        _fill_column(table, xs, ys, j, col)
        lse = _softmax_scores(u, col, eps, prob)
        if not np.isfinite(lse) or not np.isfinite(top):
            return t
        n = start + t + 1
        step = step_scale / n ** step_exponent
        for i in range(I):
            u[i] += step * (h[labels[i]] / sizes[labels[i]] - prob[i])
        if n % RECENTER_EVERY == 0:
            mean = 0.0
            for i in range(I):
                mean += u[i]
            mean /= I
            for i in range(I):
                u[i] -= mean
        if trace_every > 0 and n % trace_every == 0 and row < trace.shape[0]:
            _class_softmax(u, labels, sizes, lam, means, h)
            for k in range(K):
                trace[row, k] = h[k]
            row += 1
    return -1
