"""Slow, independent re-implementation of the model loss in extended precision.

This is the objective the finite-difference checker differentiates. It shares
no code with :mod:`gcae.model`'s forward pass and evaluates in
``np.longdouble`` (64-bit mantissa on x86), which pushes the central-difference
round-off floor roughly three orders of magnitude below float64's, so even
parameters whose true gradient is ~1e-8 can be resolved at eps=1e-5.
"""
from __future__ import annotations

import numpy as np

from .model import Baseline, GateKind, ModelParams, Task

LD = np.longdouble


def _conv(X, W, b, k):
    D, L = X.shape
    out = np.empty((W.shape[0], L - k + 1), dtype=LD)
    for i in range(L - k + 1):
        window = X[:, i : i + k].T.reshape(-1)  # t-major, d-minor
        out[:, i] = W @ window + b
    return out


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def _relu(x):
    return np.where(x > 0, x, LD(0))


def reference_loss(params: ModelParams, token_ids, aspect, target: int) -> np.longdouble:
    a = {k: np.asarray(v, dtype=LD) for k, v in params.arrays.items()}
    variant, dims = params.variant, params.dims
    X = a["word_embeddings"][np.asarray(token_ids)].T
    v_a = None
    if variant.baseline is Baseline.NONE:
        if variant.task is Task.ACSA:
            v_a = a["aspect_embeddings"][int(aspect)]
        else:
            T = a["word_embeddings"][np.asarray(aspect)].T
            v_a = _relu(_conv(T, a["term_filters"], a["term_bias"], dims.term_width)).max(axis=1)
    pooled = []
    for w in dims.widths:
        s = _conv(X, a[f"sent_filters[{w}]"], a[f"sent_bias[{w}]"], w)
        if variant.baseline is Baseline.CNN:
            pooled.append(np.tanh(s).max(axis=1))
            continue
        g = _conv(X, a[f"asp_filters[{w}]"], a[f"asp_bias[{w}]"], w)
        if v_a is not None:
            g = g + (a[f"asp_proj[{w}]"] @ v_a)[:, None]
        if variant.gate is GateKind.GTRU:
            feats = np.tanh(s) * _relu(g)
        elif variant.gate is GateKind.GTU:
            feats = np.tanh(s) * _sigmoid(g)
        else:
            feats = s * _sigmoid(g)
        pooled.append(feats.max(axis=1))
    e = np.concatenate(pooled)
    z = a["out_weight"] @ e + a["out_bias"]
    m = z.max()
    return np.log(np.exp(z - m).sum()) - (z[target] - m)
