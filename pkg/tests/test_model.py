import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gcae.checkpoint import load_checkpoint, save_checkpoint
from gcae.data import Vocabulary
from gcae.model import (
    Baseline,
    GateKind,
    ModelDims,
    ModelParams,
    ModelVariant,
    SparseRows,
    Task,
    UnsupportedVariantError,
    aspect_vector_acsa,
    aspect_vector_atsa,
    backward,
    forward,
    gate_forward,
    gate_trace,
    kink_margin,
    loss_and_grad,
    loss_only,
    predict,
)
from gcae.numeric import ShapeError, grad_check
from gcae.reference import reference_loss

from conftest import ALL_VARIANTS, TINY, tiny_instance, tiny_model


def dense(grads):
    return {k: g.to_dense() if isinstance(g, SparseRows) else g for k, g in grads.items()}


def test_variant_names_and_flags():
    assert ModelVariant.from_name("gcn").aspect_aware is False
    assert ModelVariant.from_name("cnn").baseline is Baseline.CNN
    v = ModelVariant.from_name("gcae-atsa", "glu")
    assert v.task is Task.ATSA and v.gate is GateKind.GLU and v.name == "gcae-atsa"
    assert {g.value for g in GateKind} == {"gtru", "gtu", "glu"}
    with pytest.raises(ValueError):
        ModelVariant.from_name("lstm")


def test_aspect_dim_follows_task():
    acsa, atsa = tiny_model("gcae-acsa"), tiny_model("gcae-atsa")
    assert acsa["asp_proj[2]"].shape == (4, TINY["embed_dim"])
    assert atsa["asp_proj[2]"].shape == (4, TINY["term_filters"])
    assert "aspect_embeddings" not in atsa and "term_filters" not in acsa


def test_init_pad_row_zero_and_param_sets():
    for name, gate in ALL_VARIANTS:
        p = tiny_model(name, gate)
        assert not p["word_embeddings"][0].any()
    assert not any(n.startswith("asp_") for n in tiny_model("cnn").names())
    gcn = tiny_model("gcn").names()
    assert "asp_filters[2]" in gcn and "asp_proj[2]" not in gcn


def test_aspect_vector_acsa_row_lookup():
    p = tiny_model()
    assert np.array_equal(aspect_vector_acsa(p, 0), p["aspect_embeddings"][0])
    onehot = np.eye(TINY["n_aspects"])[3]
    assert np.array_equal(aspect_vector_acsa(p, 3), onehot @ p["aspect_embeddings"])
    with pytest.raises(IndexError):
        aspect_vector_acsa(p, TINY["n_aspects"])


def test_aspect_vector_acsa_gradient_hits_one_row():
    p = tiny_model()
    ids, _, target = tiny_instance(p)
    _, grads = loss_and_grad(p, ids, 2, target)
    g = grads["aspect_embeddings"].to_dense()
    assert g[2].any()
    assert not np.delete(g, 2, axis=0).any()


def test_aspect_vector_atsa_shapes():
    p = tiny_model("gcae-atsa")
    assert aspect_vector_atsa(p, [5, 0, 0]).shape == (TINY["term_filters"],)
    assert aspect_vector_atsa(p, [5, 6, 7, 8]).shape == (TINY["term_filters"],)
    with pytest.raises(ValueError):
        aspect_vector_atsa(p, [])


def test_single_token_term_pools_one_position():
    p = tiny_model("gcae-atsa")
    T = p["word_embeddings"][[5, 0, 0]].T
    window = T.T.reshape(-1)
    expected = np.maximum(p["term_filters"] @ window + p["term_bias"], 0.0)
    np.testing.assert_allclose(aspect_vector_atsa(p, [5, 0, 0]), expected, rtol=1e-14)


def test_gate_forward_examples():
    out = gate_forward(GateKind.GTRU, np.array([[0.5, 3.0]]), np.array([[2.0, -5.0]]))
    assert out[0, 0] == pytest.approx(2 * np.tanh(0.5)) and round(out[0, 0], 4) == 0.9242
    assert out[0, 1] == 0.0
    rng = np.random.default_rng(0)
    s, a = rng.normal(scale=10, size=(2, 4, 9))
    assert np.all(np.abs(gate_forward(GateKind.GTU, s, a)) <= 1.0)
    np.testing.assert_allclose(gate_forward(GateKind.GLU, s, a), s / (1 + np.exp(-a)), rtol=1e-14)
    with pytest.raises(ShapeError):
        gate_forward(GateKind.GTRU, s, a[:, :3])


@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 100))
def test_blocking_negative_aspect_zeroes_features(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 6))
    col = int(rng.integers(6))
    a[:, col] = -np.abs(a[:, col]) - 1e-9
    base = gate_forward(GateKind.GTRU, rng.normal(size=(4, 6)), a)
    perturbed = gate_forward(GateKind.GTRU, rng.normal(scale=scale, size=(4, 6)), a)
    assert np.all(base[:, col] == 0.0) and np.all(perturbed[:, col] == 0.0)


@pytest.mark.parametrize("name,gate", ALL_VARIANTS)
def test_forward_probs_simplex(name, gate):
    p = tiny_model(name, gate, seed=3)
    ids, aspect, _ = tiny_instance(p, seed=3)
    probs, _ = forward(p, ids, aspect)
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all((probs > 0) & (probs < 1))


def test_aspect_aware_vs_cnn():
    p = tiny_model(seed=1)
    ids, _, _ = tiny_instance(p, seed=1)
    assert not np.array_equal(forward(p, ids, 0)[0], forward(p, ids, 1)[0])
    cnn = tiny_model("cnn", seed=1)
    assert np.array_equal(forward(cnn, ids, 0)[0], forward(cnn, ids, 4)[0])
    assert np.array_equal(forward(cnn, ids, None)[0], forward(cnn, ids, 1)[0])


def test_missing_aspect_rejected():
    p = tiny_model()
    with pytest.raises(ValueError, match="requires an aspect"):
        forward(p, [1, 2, 3, 4, 5], None)


def gcn_from(gcae: ModelParams) -> ModelParams:
    arrays = {k: v.copy() for k, v in gcae.arrays.items() if not k.startswith("asp_proj") and k != "aspect_embeddings"}
    return ModelParams(ModelVariant(Task.ACSA, gcae.variant.gate, Baseline.GCN), gcae.dims, arrays)


@given(seed=st.integers(0, 2**31), gate=st.sampled_from(list(GateKind)))
def test_gcn_equivalence_with_zero_projection(seed, gate):
    p = tiny_model("gcae-acsa", gate, seed=seed % 1000)
    for w in p.dims.widths:
        p.arrays[f"asp_proj[{w}]"][:] = 0.0
    gcn = gcn_from(p)
    ids, aspect, _ = tiny_instance(p, seed=seed)
    assert np.array_equal(forward(p, ids, aspect)[0], forward(gcn, ids)[0])


def test_batch_single_equivalence():
    p = tiny_model(seed=2)
    batch = [tiny_instance(p, seed=s) for s in range(6)]
    alone = [forward(p, ids, a)[0] for ids, a, _ in batch]
    together = [forward(p, ids, a)[0] for ids, a, _ in reversed(batch)][::-1]
    for x, y in zip(alone, together):
        assert np.array_equal(x, y)


def test_output_bias_gradient_is_probs_minus_onehot():
    p = tiny_model(seed=4)
    ids, aspect, target = tiny_instance(p, seed=4)
    probs, cache = forward(p, ids, aspect)
    loss, grads = backward(p, cache, target)
    expect = probs.copy()
    expect[target] -= 1
    np.testing.assert_allclose(grads["out_bias"], expect, atol=1e-15)
    np.testing.assert_allclose(grads["out_weight"].sum(axis=1), expect * cache.pooled.sum(), atol=1e-14)
    assert loss == pytest.approx(-np.log(probs[target]))


def test_embedding_gradient_sparse():
    p = tiny_model(seed=5)
    ids = np.array([3, 4, 3, 0, 0, 7, 0])
    _, grads = loss_and_grad(p, ids, 1, 0)
    g = grads["word_embeddings"]
    assert isinstance(g, SparseRows)
    assert set(g.rows.tolist()) == {3, 4, 7}
    full = g.to_dense()
    absent = [r for r in range(TINY["vocab_size"]) if r not in (3, 4, 7)]
    assert not full[absent].any()


def test_atsa_gradient_includes_term_rows():
    p = tiny_model("gcae-atsa", seed=6)
    _, grads = loss_and_grad(p, [2, 3, 4, 5, 6, 0, 0], [9, 10, 0], 1)
    assert {9, 10} <= set(grads["word_embeddings"].rows.tolist())
    assert 0 not in grads["word_embeddings"].rows


@pytest.mark.parametrize("name,gate", ALL_VARIANTS)
def test_gradient_completeness(name, gate):
    p = tiny_model(name, gate, seed=7)
    seen = {n: False for n in p.names()}
    for s in range(20):
        ids, aspect, target = tiny_instance(p, seed=s)
        _, grads = loss_and_grad(p, ids, aspect, target)
        for n, g in dense(grads).items():
            seen[n] |= bool(np.any(g))
            if n == "word_embeddings":
                assert not g[0].any()
    assert all(seen.values()), [n for n, v in seen.items() if not v]


def test_gates_share_shapes():
    shapes = [{n: a.shape for n, a in tiny_model("gcae-acsa", g).arrays.items()} for g in GateKind]
    assert shapes[0] == shapes[1] == shapes[2]


def test_loss_only_matches_reference():
    for name, gate in ALL_VARIANTS:
        p = tiny_model(name, gate, seed=8)
        ids, aspect, target = tiny_instance(p, seed=8)
        assert loss_only(p, ids, aspect, target) == pytest.approx(float(reference_loss(p, ids, aspect, target)), rel=1e-12)


def check_gradients(p, ids, aspect, target):
    _, grads = loss_and_grad(p, ids, aspect, target)
    return grad_check(
        lambda _q: reference_loss(p, ids, aspect, target),
        p.arrays,
        dense(grads),
        skip={"word_embeddings": lambda i: i[0] == 0},
    )


@pytest.mark.parametrize("name,gate", ALL_VARIANTS + [("gcae-atsa", "gtu"), ("gcae-atsa", "glu")])
@settings(max_examples=8)
@given(seed=st.integers(0, 2**31))
def test_full_model_gradient_check(name, gate, seed):
    p = tiny_model(name, gate, seed=seed)
    ids, aspect, target = tiny_instance(p, seed=seed)
    # finite differences across a relu kink or a pool switch are meaningless
    assume(kink_margin(p, ids, aspect) > 1e-3)
    rep = check_gradients(p, ids, aspect, target)
    assert rep.passed, (rep.worst_param, rep.max_rel_err)


def test_gate_trace_normalized_and_attributed():
    p = tiny_model(seed=9)
    ids, aspect, _ = tiny_instance(p, seed=9)
    trace = gate_trace(p, ids, aspect)
    assert trace.shape == (len(ids),)
    assert np.all((trace >= 0) & (trace <= 1))
    assert trace.sum() == pytest.approx(1.0)
    # width 2 -> last word starts no window
    assert trace[-1] == 0.0


def test_gate_trace_all_zero_when_blocked():
    p = tiny_model(seed=10)
    p.arrays["asp_bias[2]"][:] = -1e6
    trace = gate_trace(p, [1, 2, 3, 4, 5], 0)
    assert not trace.any()


def test_gate_trace_one_filter_width_three():
    p = tiny_model(seed=11, widths=(3,), filters=1)
    trace = gate_trace(p, [1, 2, 3, 4, 5, 6], 2)
    assert trace.shape == (6,)
    assert trace.sum() == 0.0 or trace.sum() == pytest.approx(1.0)


def test_gate_trace_rejects_non_gtru():
    with pytest.raises(UnsupportedVariantError):
        gate_trace(tiny_model(gate="gtu"), [1, 2, 3], 0)
    with pytest.raises(UnsupportedVariantError):
        gate_trace(tiny_model("cnn"), [1, 2, 3], 0)


def test_predict_is_argmax():
    p = tiny_model(seed=12)
    ids, aspect, _ = tiny_instance(p, seed=12)
    assert predict(p, ids, aspect) == int(np.argmax(forward(p, ids, aspect)[0]))


@pytest.mark.parametrize("name,gate", ALL_VARIANTS)
def test_checkpoint_round_trip_bit_exact(tmp_path, name, gate):
    p = tiny_model(name, gate, seed=13)
    vocab = Vocabulary(["<pad>", "<unk>"] + [f"w{i}" for i in range(TINY["vocab_size"] - 2)])
    path = save_checkpoint(tmp_path / "m.npz", p, vocab=vocab, aspects=list("abcde"), extra={"k": 1})
    q, meta = load_checkpoint(path)
    assert q.variant == p.variant and q.dims == p.dims and q.names() == p.names()
    assert meta["vocab"] == vocab.itos and meta["aspects"] == list("abcde") and meta["extra"] == {"k": 1}
    ids, aspect, _ = tiny_instance(p, seed=13)
    assert np.array_equal(forward(p, ids, aspect)[0], forward(q, ids, aspect)[0])


def test_checkpoint_detects_tampering(tmp_path):
    import json

    p = tiny_model()
    path = save_checkpoint(tmp_path / "m.npz", p, vocab=Vocabulary(["<pad>", "<unk>", "a", "b"]))
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(str(arrays["__meta__"]))
    meta["vocab"] = ["<pad>", "<unk>", "a", "c"]
    arrays["__meta__"] = np.array(json.dumps(meta))
    np.savez(tmp_path / "bad.npz", **arrays)
    with pytest.raises(ValueError, match="digest"):
        load_checkpoint(tmp_path / "bad.npz")


def test_dims_validation():
    with pytest.raises(ValueError):
        ModelDims(10, 4, 1)
    with pytest.raises(ValueError):
        ModelDims(10, 4, 3, widths=())
    with pytest.raises(ValueError):
        ModelParams.init(ModelVariant.from_name("gcae-acsa"), ModelDims(10, 4, 3), 0)
