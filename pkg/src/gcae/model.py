"""GCAE (ACSA and ATSA), gate variants, and the aspect-blind CNN / GCN baselines.

Each sentence position gets a sentiment feature and an aspect feature from two
parallel convolutions of the same width. The gate combines them; max-over-time
pooling and a softmax layer produce the class distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numeric import (
    ShapeError,
    activation_backward,
    activation_forward,
    conv1d_backward,
    conv1d_forward,
    max_over_time,
    max_over_time_backward,
    softmax,
    softmax_cross_entropy,
)

PAD_ID = 0


class GateKind(str, Enum):
    GTRU = "gtru"
    GTU = "gtu"
    GLU = "glu"


class Task(str, Enum):
    ACSA = "acsa"
    ATSA = "atsa"


class Baseline(str, Enum):
    NONE = "none"
    CNN = "cnn"
    GCN = "gcn"


class UnsupportedVariantError(ValueError):
    pass


@dataclass(frozen=True)
class ModelVariant:
    task: Task
    gate: GateKind = GateKind.GTRU
    baseline: Baseline = Baseline.NONE

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "gate", GateKind(self.gate))
        object.__setattr__(self, "baseline", Baseline(self.baseline))

    @property
    def aspect_aware(self) -> bool:
        return self.baseline is Baseline.NONE

    @property
    def name(self) -> str:
        if self.baseline is Baseline.NONE:
            return f"gcae-{self.task.value}"
        return self.baseline.value

    @classmethod
    def from_name(cls, name: str, gate: str | GateKind = GateKind.GTRU, task: str | Task = Task.ACSA):
        name = name.lower()
        if name == "gcae-acsa":
            return cls(Task.ACSA, gate)
        if name == "gcae-atsa":
            return cls(Task.ATSA, gate)
        if name in ("cnn", "gcn"):
            return cls(Task(task), gate, Baseline(name))
        raise ValueError(f"unknown variant {name!r}; expected gcae-acsa, gcae-atsa, cnn or gcn")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int
    n_classes: int
    widths: tuple[int, ...] = (3, 4, 5)
    filters: int = 100
    n_aspects: int = 0
    term_width: int = 3
    term_filters: int = 100

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a nonempty list of positive ints")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def min_len(self) -> int:
        return max(self.widths)


def _glorot(rng: np.random.Generator, shape: tuple[int, int], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Named trainable arrays of one model variant.

    Names: ``word_embeddings``, ``aspect_embeddings`` (GCAE-ACSA),
    ``term_filters``/``term_bias`` (GCAE-ATSA), per width ``w``:
    ``sent_filters[w]``, ``sent_bias[w]``, ``asp_filters[w]``, ``asp_bias[w]``
    (not CNN), ``asp_proj[w]`` (GCAE only); and ``out_weight``/``out_bias``.
    """

    # name -> row index that never moves (the pad embedding)
    FROZEN_ROWS = {"word_embeddings": PAD_ID}

    def __init__(self, variant: ModelVariant, dims: ModelDims, arrays: dict[str, np.ndarray]):
        self.variant = variant
        self.dims = dims
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant, self.dims, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def aspect_dim(self) -> int:
        return self.dims.term_filters if self.variant.task is Task.ATSA else self.dims.embed_dim

    @classmethod
    def init(
        cls,
        variant: ModelVariant,
        dims: ModelDims,
        seed: int | np.random.Generator = 0,
        embeddings: np.ndarray | None = None,
    ) -> "ModelParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        D, n_k = dims.embed_dim, dims.filters
        arrays: dict[str, np.ndarray] = {}
        if embeddings is not None:
            if embeddings.shape != (dims.vocab_size, D):
                raise ShapeError("embedding table shape mismatch", got=embeddings.shape, expected=(dims.vocab_size, D))
            arrays["word_embeddings"] = np.array(embeddings, dtype=np.float64)
        else:
            arrays["word_embeddings"] = rng.uniform(-0.25, 0.25, size=(dims.vocab_size, D))
        arrays["word_embeddings"][PAD_ID] = 0.0

        gcae = variant.aspect_aware
        if gcae and variant.task is Task.ACSA:
            if dims.n_aspects < 1:
                raise ValueError("GCAE-ACSA needs n_aspects >= 1")
            arrays["aspect_embeddings"] = rng.uniform(-0.25, 0.25, size=(dims.n_aspects, D))
        if gcae and variant.task is Task.ATSA:
            kt, nt = dims.term_width, dims.term_filters
            arrays["term_filters"] = _glorot(rng, (nt, D * kt), D * kt, nt)
            arrays["term_bias"] = np.zeros(nt)
        D_a = dims.term_filters if variant.task is Task.ATSA else D
        for w in dims.widths:
            arrays[f"sent_filters[{w}]"] = _glorot(rng, (n_k, D * w), D * w, n_k)
            arrays[f"sent_bias[{w}]"] = np.zeros(n_k)
            if variant.baseline is not Baseline.CNN:
                arrays[f"asp_filters[{w}]"] = _glorot(rng, (n_k, D * w), D * w, n_k)
                arrays[f"asp_bias[{w}]"] = np.zeros(n_k)
            if gcae:
                arrays[f"asp_proj[{w}]"] = _glorot(rng, (n_k, D_a), D_a, n_k)
        total = n_k * len(dims.widths)
        arrays["out_weight"] = _glorot(rng, (dims.n_classes, total), total, dims.n_classes)
        arrays["out_bias"] = np.zeros(dims.n_classes)
        return cls(variant, dims, arrays)


@dataclass
class SparseRows:
    """Row-sparse gradient of an embedding table."""

    rows: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows] = self.values
        return out


def _scatter_rows(ids: np.ndarray, grad_cols: np.ndarray, shape: tuple[int, int], frozen: int | None) -> SparseRows:
    # grad_cols is D x len(ids)
    uniq, inverse = np.unique(ids, return_inverse=True)
    values = np.zeros((len(uniq), shape[1]))
    np.add.at(values, inverse, grad_cols.T)
    if frozen is not None:
        keep = uniq != frozen
        uniq, values = uniq[keep], values[keep]
    return SparseRows(uniq, values, shape)


def embed(params: ModelParams, token_ids) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    return params["word_embeddings"][ids].T  # D x L


def aspect_vector_acsa(params: ModelParams, aspect_id: int) -> np.ndarray:
    table = params["aspect_embeddings"]
    if not 0 <= aspect_id < table.shape[0]:
        raise IndexError(f"aspect id {aspect_id} out of range for {table.shape[0]} aspects")
    return table[aspect_id]


@dataclass
class _TermCache:
    ids: np.ndarray
    T: np.ndarray
    pre: np.ndarray
    argmax: np.ndarray


def _term_forward(params: ModelParams, term_ids):
    ids = np.asarray(term_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("aspect term is empty")
    T = embed(params, ids)
    pre = conv1d_forward(T, params["term_filters"], params["term_bias"], params.dims.term_width).features
    pooled, argmax = max_over_time(activation_forward(pre, "relu"))
    return pooled, _TermCache(ids, T, pre, argmax)


def aspect_vector_atsa(params: ModelParams, term_ids) -> np.ndarray:
    """Max-pooled relu features of a small CNN over the aspect-term tokens."""
    return _term_forward(params, term_ids)[0]


def gate_forward(gate: GateKind, sent_pre: np.ndarray, asp_pre: np.ndarray) -> np.ndarray:
    if sent_pre.shape != asp_pre.shape:
        raise ShapeError("gate branches differ in shape", sent=sent_pre.shape, asp=asp_pre.shape)
    gate = GateKind(gate)
    if gate is GateKind.GTRU:
        return np.tanh(sent_pre) * np.maximum(asp_pre, 0.0)
    if gate is GateKind.GTU:
        return np.tanh(sent_pre) * activation_forward(asp_pre, "sigmoid")
    return sent_pre * activation_forward(asp_pre, "sigmoid")


_GATE_ACTS = {
    GateKind.GTRU: ("tanh", "relu"),
    GateKind.GTU: ("tanh", "sigmoid"),
    GateKind.GLU: (None, "sigmoid"),
}


def gate_backward(gate: GateKind, sent_pre: np.ndarray, asp_pre: np.ndarray, upstream: np.ndarray):
    sent_act, asp_act = _GATE_ACTS[GateKind(gate)]
    s = sent_pre if sent_act is None else activation_forward(sent_pre, sent_act)
    a = activation_forward(asp_pre, asp_act)
    d_s = upstream * a
    d_s = d_s if sent_act is None else activation_backward(sent_pre, sent_act, d_s)
    d_a = activation_backward(asp_pre, asp_act, upstream * s)
    return d_s, d_a


@dataclass
class ForwardCache:
    token_ids: np.ndarray
    X: np.ndarray
    aspect: object
    v_a: np.ndarray | None
    term: _TermCache | None
    sent_pre: dict[int, np.ndarray] = field(default_factory=dict)
    asp_pre: dict[int, np.ndarray] = field(default_factory=dict)
    argmax: dict[int, np.ndarray] = field(default_factory=dict)
    pooled: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None


def _aspect_input(params: ModelParams, aspect):
    if not params.variant.aspect_aware:
        return None, None
    if aspect is None:
        raise ValueError(f"variant {params.variant.name} requires an aspect")
    if params.variant.task is Task.ACSA:
        return aspect_vector_acsa(params, int(aspect)), None
    return _term_forward(params, aspect)


def _branch_pre(params: ModelParams, X: np.ndarray, w: int, v_a):
    zero = np.zeros(params.dims.filters)
    sent_pre = conv1d_forward(X, params[f"sent_filters[{w}]"], params[f"sent_bias[{w}]"], w).features
    if params.variant.baseline is Baseline.CNN:
        return sent_pre, None
    asp_pre = conv1d_forward(X, params[f"asp_filters[{w}]"], zero, w).features
    if v_a is not None:
        asp_pre = asp_pre + (params[f"asp_proj[{w}]"] @ v_a)[:, None]
    asp_pre = asp_pre + params[f"asp_bias[{w}]"][:, None]
    return sent_pre, asp_pre


def forward(params: ModelParams, token_ids, aspect=None):
    """Class probabilities for one instance plus the cache ``backward`` needs.

    ``aspect`` is a category id (ACSA) or a sequence of term token ids (ATSA);
    baselines ignore it.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    X = embed(params, ids)
    v_a, term = _aspect_input(params, aspect)
    cache = ForwardCache(ids, X, aspect, v_a, term)
    pooled = []
    for w in params.dims.widths:
        sent_pre, asp_pre = _branch_pre(params, X, w, v_a)
        if asp_pre is None:
            feats = np.tanh(sent_pre)
        else:
            feats = gate_forward(params.variant.gate, sent_pre, asp_pre)
        p, arg = max_over_time(feats)
        cache.sent_pre[w], cache.asp_pre[w], cache.argmax[w] = sent_pre, asp_pre, arg
        pooled.append(p)
    cache.pooled = np.concatenate(pooled)
    cache.logits = params["out_weight"] @ cache.pooled + params["out_bias"]
    cache.probs = softmax(cache.logits)
    return cache.probs, cache


def predict(params: ModelParams, token_ids, aspect=None) -> int:
    return int(np.argmax(forward(params, token_ids, aspect)[0]))


def backward(params: ModelParams, cache: ForwardCache, target: int) -> tuple[float, dict]:
    """Cross-entropy loss and its gradient for the instance that produced ``cache``.

    Embedding gradients come back as :class:`SparseRows`; everything else dense.
    """
    loss, d_logits = softmax_cross_entropy(cache.logits, target)
    grads: dict = {
        "out_weight": np.outer(d_logits, cache.pooled),
        "out_bias": d_logits,
    }
    d_pooled = params["out_weight"].T @ d_logits
    d_X = np.zeros_like(cache.X)
    d_va = None if cache.v_a is None else np.zeros_like(cache.v_a)
    n_k = params.dims.filters
    variant = params.variant
    for slot, w in enumerate(params.dims.widths):
        sent_pre, asp_pre = cache.sent_pre[w], cache.asp_pre[w]
        d_feats = max_over_time_backward(cache.argmax[w], d_pooled[slot * n_k : (slot + 1) * n_k], sent_pre.shape[1])
        if asp_pre is None:
            d_sent = activation_backward(sent_pre, "tanh", d_feats)
        else:
            d_sent, d_asp = gate_backward(variant.gate, sent_pre, asp_pre, d_feats)
            gX, gW, _ = conv1d_backward(cache.X, params[f"asp_filters[{w}]"], w, d_asp)
            d_X += gX
            row = d_asp.sum(axis=1)
            grads[f"asp_filters[{w}]"] = gW
            grads[f"asp_bias[{w}]"] = row
            if cache.v_a is not None:
                grads[f"asp_proj[{w}]"] = np.outer(row, cache.v_a)
                d_va += params[f"asp_proj[{w}]"].T @ row
        gX, gW, gb = conv1d_backward(cache.X, params[f"sent_filters[{w}]"], w, d_sent)
        d_X += gX
        grads[f"sent_filters[{w}]"] = gW
        grads[f"sent_bias[{w}]"] = gb

    emb_shape = params["word_embeddings"].shape
    ids, cols = cache.token_ids, d_X
    if d_va is not None and variant.task is Task.ACSA:
        a = int(cache.aspect)
        grads["aspect_embeddings"] = SparseRows(np.array([a]), d_va[None, :], params["aspect_embeddings"].shape)
    elif d_va is not None:
        term = cache.term
        d_pre = activation_backward(term.pre, "relu", max_over_time_backward(term.argmax, d_va, term.pre.shape[1]))
        gT, gW, gb = conv1d_backward(term.T, params["term_filters"], params.dims.term_width, d_pre)
        grads["term_filters"], grads["term_bias"] = gW, gb
        ids = np.concatenate([ids, term.ids])
        cols = np.concatenate([d_X, gT], axis=1)
    grads["word_embeddings"] = _scatter_rows(ids, cols, emb_shape, PAD_ID)
    return loss, {name: grads[name] for name in params.names()}


def loss_and_grad(params: ModelParams, token_ids, aspect, target: int):
    _, cache = forward(params, token_ids, aspect)
    return backward(params, cache, target)


def loss_only(params: ModelParams, token_ids, aspect, target: int) -> float:
    _, cache = forward(params, token_ids, aspect)
    return softmax_cross_entropy(cache.logits, target)[0]


def gate_trace(params: ModelParams, token_ids, aspect=None, n_words: int | None = None) -> np.ndarray:
    """Normalized per-word sum of relu-gate outputs at the smallest width.

    Window ``i`` is credited to word ``i``; words with no window of their own
    score zero. Only the first ``n_words`` positions are reported (default all).
    """
    variant = params.variant
    if variant.gate is not GateKind.GTRU or variant.baseline is Baseline.CNN:
        raise UnsupportedVariantError(f"gate trace needs a GTRU model, got {variant.name}/{variant.gate.value}")
    ids = np.asarray(token_ids, dtype=np.int64)
    n_words = len(ids) if n_words is None else n_words
    w = min(params.dims.widths)
    v_a, _ = _aspect_input(params, aspect)
    _, asp_pre = _branch_pre(params, embed(params, ids), w, v_a)
    scores = np.zeros(n_words)
    per_pos = np.maximum(asp_pre, 0.0).sum(axis=0)
    m = min(n_words, per_pos.shape[0])
    scores[:m] = per_pos[:m]
    total = scores.sum()
    return scores / total if total > 0 else scores


def kink_margin(params: ModelParams, token_ids, aspect=None) -> float:
    """Distance of this instance from the nearest non-differentiable point.

    Covers relu inputs of the gate and the aspect-term CNN, and the gap between
    the winner and runner-up of every max-over-time pool (exact ties between
    blocked, all-zero entries are harmless and ignored).
    """
    _, cache = forward(params, token_ids, aspect)
    margins = [np.inf]

    def pool_gap(feats):
        for row in feats:
            top = row.max()
            rest = row[row < top]
            if rest.size:
                margins.append(top - rest.max())
            elif row.size > 1 and top != 0.0:
                margins.append(0.0)

    relu_gate = params.variant.gate is GateKind.GTRU
    for w in params.dims.widths:
        s, a = cache.sent_pre[w], cache.asp_pre[w]
        if a is None:
            pool_gap(np.tanh(s))
            continue
        if relu_gate:
            margins.append(np.abs(a).min())
        pool_gap(gate_forward(params.variant.gate, s, a))
    if cache.term is not None:
        margins.append(np.abs(cache.term.pre).min())
        pool_gap(np.maximum(cache.term.pre, 0.0))
    return float(min(margins))
