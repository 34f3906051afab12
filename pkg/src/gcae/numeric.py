"""Dense numeric primitives with hand-written forward and backward passes.

Matrices are 2-D ``float64`` numpy arrays, vectors are 1-D. A convolution input
``X`` is laid out ``D x L`` (one embedding column per token). A filter row for
width ``k`` has length ``D * k`` and is indexed ``t * D + d``, i.e. the window
``X[:, i:i+k]`` flattened column by column.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numba
import numpy as np
from scipy.special import expit

ACTIVATIONS = ("tanh", "relu", "sigmoid")


class ShapeError(ValueError):
    """Raised when operand dimensions disagree; ``dims`` names the offenders."""

    def __init__(self, message: str, **dims):
        self.dims = dims
        detail = ", ".join(f"{k}={v}" for k, v in dims.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ConvOutput:
    features: np.ndarray  # n_k x L_k
    width: int

    @property
    def positions(self) -> int:
        return self.features.shape[1]


@numba.njit(cache=True, nogil=True)
def _conv_kernel(X, W, b, k, out):
    D, L = X.shape
    n = W.shape[0]
    Lk = L - k + 1
    for j in range(n):
        for i in range(Lk):
            out[j, i] = 0.0
        # per-output summation order: t outer, d inner; bias added last
        for t in range(k):
            for d in range(D):
                w = W[j, t * D + d]
                for i in range(Lk):
                    out[j, i] += w * X[d, i + t]
        for i in range(Lk):
            out[j, i] += b[j]


def _check_conv(X: np.ndarray, filters: np.ndarray, k: int) -> None:
    if X.ndim != 2 or filters.ndim != 2:
        raise ShapeError("conv operands must be matrices", X=X.shape, filters=filters.shape)
    D, L = X.shape
    if k < 1:
        raise ShapeError("filter width must be positive", k=k)
    if L < k:
        raise ShapeError("input shorter than filter width", L=L, k=k)
    if filters.shape[1] != D * k:
        raise ShapeError(
            "filter row length must equal D*k", filter_cols=filters.shape[1], D=D, k=k
        )


def conv1d_forward(X: np.ndarray, filters: np.ndarray, bias: np.ndarray, k: int) -> ConvOutput:
    """Valid 1-D convolution, no activation.

    ``features[j, i] = dot(filters[j], X[:, i:i+k] flattened) + bias[j]``.
    """
    _check_conv(X, filters, k)
    if bias.shape != (filters.shape[0],):
        raise ShapeError("bias length must equal filter count", bias=bias.shape, n_k=filters.shape[0])
    out = np.empty((filters.shape[0], X.shape[1] - k + 1))
    _conv_kernel(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(filters, dtype=np.float64),
        np.ascontiguousarray(bias, dtype=np.float64),
        k,
        out,
    )
    return ConvOutput(out, k)


@numba.njit(cache=True, nogil=True)
def _conv_backward_kernel(X, W, G, k, gX, gW, gb):
    D, L = X.shape
    n = W.shape[0]
    Lk = L - k + 1
    for j in range(n):
        acc = 0.0
        for i in range(Lk):
            acc += G[j, i]
        gb[j] = acc
        for t in range(k):
            for d in range(D):
                w = W[j, t * D + d]
                acc = 0.0
                for i in range(Lk):
                    g = G[j, i]
                    acc += g * X[d, i + t]
                    gX[d, i + t] += w * g
                gW[j, t * D + d] = acc


def conv1d_backward(X: np.ndarray, filters: np.ndarray, k: int, upstream: np.ndarray):
    """Gradients of ``sum(upstream * features)`` w.r.t. ``X``, ``filters`` and ``bias``."""
    _check_conv(X, filters, k)
    Lk = X.shape[1] - k + 1
    if upstream.shape != (filters.shape[0], Lk):
        raise ShapeError(
            "upstream gradient shape mismatch", upstream=upstream.shape, expected=(filters.shape[0], Lk)
        )
    grad_X = np.zeros(X.shape)
    grad_filters = np.empty(filters.shape)
    grad_bias = np.empty(filters.shape[0])
    _conv_backward_kernel(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(filters, dtype=np.float64),
        np.ascontiguousarray(upstream, dtype=np.float64),
        k,
        grad_X,
        grad_filters,
        grad_bias,
    )
    return grad_X, grad_filters, grad_bias


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(x: np.ndarray, kind: str, upstream: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        y = np.tanh(x)
        return upstream * (1.0 - y * y)
    if kind == "relu":
        # derivative at exactly zero is zero
        return upstream * (x > 0.0)
    if kind == "sigmoid":
        y = expit(x)
        return upstream * y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def max_over_time(C: ConvOutput | np.ndarray):
    """Per-row maximum; ties go to the lowest position."""
    feats = C.features if isinstance(C, ConvOutput) else C
    if feats.shape[1] < 1:
        raise ShapeError("max-over-time needs at least one position", positions=feats.shape[1])
    argmax = np.argmax(feats, axis=1)
    return feats[np.arange(feats.shape[0]), argmax], argmax


def max_over_time_backward(argmax: np.ndarray, upstream: np.ndarray, positions: int) -> np.ndarray:
    grad = np.zeros((argmax.shape[0], positions))
    grad[np.arange(argmax.shape[0]), argmax] = upstream
    return grad


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def softmax_cross_entropy(logits: np.ndarray, target: int):
    """Return ``(loss, grad_logits)`` for one example."""
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ShapeError("need at least two classes", logits=logits.shape)
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[target])
    grad = np.exp(shifted - log_norm)
    grad[target] -= 1.0
    return loss, grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: tuple[str, tuple[int, ...]] | None
    per_param: dict[str, float]
    flagged: list[tuple[str, tuple[int, ...], float]]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def relative_error(a, n) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    skip: Mapping[str, Callable[[tuple[int, ...]], bool]] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    ``params`` arrays are perturbed in place and restored. ``skip[name](index)``
    returning true excludes a coordinate (e.g. frozen rows).
    """
    skip = skip or {}
    per_param: dict[str, float] = {}
    flagged = []
    worst, worst_err = None, 0.0
    for name, arr in params.items():
        grad = np.asarray(analytic[name])
        if grad.shape != arr.shape:
            raise ShapeError(f"analytic gradient for {name} has wrong shape", grad=grad.shape, param=arr.shape)
        group_max = 0.0
        skipper = skip.get(name)
        for idx in np.ndindex(arr.shape):
            if skipper is not None and skipper(idx):
                continue
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = f(params)
            arr[idx] = orig - eps
            fm = f(params)
            arr[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"objective not finite at {name}{list(idx)}")
            # difference taken in the objective's own precision
            err = float(relative_error(float(grad[idx]), float((fp - fm) / (2.0 * eps))))
            group_max = max(group_max, err)
            if err > tol:
                flagged.append((name, idx, err))
            if err > worst_err or worst is None:
                worst, worst_err = (name, idx), max(err, worst_err)
        per_param[name] = group_max
    return GradCheckReport(worst_err, worst, per_param, flagged, tol)
