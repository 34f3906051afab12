"""One test per acceptance criterion, each printing a single pass/fail line.

The lines are also collected into an "acceptance criteria" section at the end
of the pytest terminal summary.
"""
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from gcae import data as D
from gcae import experiments as X
from gcae.model import GateKind, SparseRows, _branch_pre, embed, forward, gate_forward, kink_margin, loss_and_grad
from gcae.numeric import conv1d_forward, grad_check
from gcae.reference import reference_loss
from gcae.synthetic import make_corpus

from conftest import ALL_VARIANTS, TINY, TINY_LEN, tiny_instance, tiny_model
from oracles import conv_triple_loop
from test_model import gcn_from

GRAD_TOL = 1e-4
SEMEVAL_ENV, EMBEDDINGS_ENV = "GCAE_SEMEVAL_DIR", "GCAE_EMBEDDINGS"


def test_c1_gradient_correctness(acceptance):
    assert TINY["embed_dim"] == 8 and TINY_LEN == 7 and TINY["widths"] == (2, 3)
    assert TINY["filters"] == 4 and TINY["n_classes"] == 3
    worst = {}

    @settings(max_examples=15, suppress_health_check=[HealthCheck.filter_too_much])
    @given(seed=st.integers(0, 2**31))
    def check(name, gate, seed):
        p = tiny_model(name, gate, seed=seed)
        ids, aspect, target = tiny_instance(p, seed=seed)
        assume(kink_margin(p, ids, aspect) > 1e-3)
        _, grads = loss_and_grad(p, ids, aspect, target)
        dense = {k: g.to_dense() if isinstance(g, SparseRows) else g for k, g in grads.items()}
        rep = grad_check(lambda _q: reference_loss(p, ids, aspect, target), p.arrays, dense, eps=1e-5,
                         tol=GRAD_TOL, skip={"word_embeddings": lambda i: i[0] == 0})
        key = f"{name}/{gate}"
        worst[key] = max(worst.get(key, 0.0), rep.max_rel_err)
        assert rep.passed, (key, rep.worst_param, rep.max_rel_err)

    failed = None
    for name, gate in ALL_VARIANTS:
        try:
            check(name, gate)
        except AssertionError as exc:
            failed = exc
            break
    top = max(worst.values())
    acceptance(1, "FAIL" if failed else "PASS",
               f"max rel err {top:.2e} (tol {GRAD_TOL:g}) over {len(worst)} variants, eps=1e-5")
    if failed:
        raise failed


def test_c2_conv_oracle_bit_exact(acceptance):
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(100):
        D_, k, n = int(rng.integers(1, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
        L = int(rng.integers(k, 12))
        X_, W, b = rng.normal(size=(D_, L)), rng.normal(size=(n, D_ * k)), rng.normal(size=n)
        got = conv1d_forward(X_, W, b, k).features
        mismatches += not np.array_equal(got, conv_triple_loop(X_.tolist(), W.tolist(), b.tolist(), k))
    acceptance(2, "PASS" if mismatches == 0 else "FAIL", f"{100 - mismatches}/100 instances bit-exact")
    assert mismatches == 0


def test_c3_blocking(acceptance):
    rng = np.random.default_rng(3)
    p = tiny_model("gcae-acsa", "gtru", seed=3)
    leaks = 0
    for _ in range(100):
        ids, aspect, _ = tiny_instance(p, seed=int(rng.integers(2**31)))
        w = int(rng.choice(p.dims.widths))
        _, asp = _branch_pre(p, embed(p, ids), w, p["aspect_embeddings"][aspect])
        pos = int(rng.integers(asp.shape[1]))
        asp = asp.copy()
        asp[:, pos] = -np.abs(asp[:, pos]) - rng.uniform(0, 5, size=asp.shape[0])
        sent = rng.normal(scale=rng.uniform(0.1, 100), size=asp.shape)
        leaks += int(np.count_nonzero(gate_forward(GateKind.GTRU, sent, asp)[:, pos]))
    acceptance(3, "PASS" if leaks == 0 else "FAIL", f"{leaks} nonzero gated entries at blocked positions in 100 trials")
    assert leaks == 0


def test_c4_aspect_selectivity_synthetic(acceptance):
    r = X.synthetic_selectivity()
    cnn, gcae = r["cnn"]["hard_accuracy"], r["gcae-acsa"]["hard_accuracy"]
    ok = cnn == 0.5 and gcae >= 0.9 and r["seconds"] < 120
    acceptance(4, "PASS" if ok else "FAIL",
               f"hard split n={r['n_hard']}: cnn {cnn:.3f} (want exactly 0.5), gcae-gtru {gcae:.3f} (want >= 0.9) "
               f"after {r['epochs']} epochs, {r['seconds']:.0f}s (limit 120s)")
    assert cnn == 0.5
    assert gcae >= 0.9
    assert r["seconds"] < 120


def test_c5_gcn_equivalence(acceptance):
    rng = np.random.default_rng(5)
    diffs = 0
    for trial in range(100):
        gate = list(GateKind)[trial % 3]
        p = tiny_model("gcae-acsa", gate, seed=int(rng.integers(2**31)))
        for w in p.dims.widths:
            p.arrays[f"asp_proj[{w}]"][:] = 0.0
        length = int(rng.integers(3, 12))
        ids, aspect, _ = tiny_instance(p, seed=int(rng.integers(2**31)), length=length)
        diffs += not np.array_equal(forward(p, ids, aspect)[0], forward(gcn_from(p), ids)[0])
    acceptance(5, "PASS" if diffs == 0 else "FAIL", f"{100 - diffs}/100 inputs bit-identical to GCN")
    assert diffs == 0


def test_c6_determinism_across_processes(tmp_path, acceptance):
    for split, (n, seed) in {"train": (30, 1), "test": (10, 2)}.items():
        (tmp_path / f"{split}.xml").write_bytes(D.to_semeval_xml(make_corpus(n, seed)))
    (tmp_path / "config.txt").write_text(
        "widths = 2,3\nfilters_per_width = 5\nembedding_dim = 10\nmax_epochs = 3\nfolds = 2\nruns = 2\n")
    cli = [sys.executable, "-m", "gcae.cli"]
    subprocess.run(cli + ["prepare", "--task", "acsa", "--input", f"train={tmp_path / 'train.xml'}",
                          f"test={tmp_path / 'test.xml'}", "--out", str(tmp_path / "data")], check=True,
                   capture_output=True)
    reports = []
    for run in ("a", "b"):
        subprocess.run(cli + ["train", "--variant", "gcae-acsa", "--data", str(tmp_path / "data"), "--config",
                              str(tmp_path / "config.txt"), "--out", str(tmp_path / run)], check=True,
                       capture_output=True)
        report = json.loads((tmp_path / run / "report.json").read_text())
        report.pop("timing")
        reports.append(json.dumps(report, indent=2, sort_keys=True).encode())
    same = reports[0] == reports[1]
    acceptance(6, "PASS" if same else "FAIL",
               f"two CLI processes, identical seed: reports {'byte-identical' if same else 'differ'} "
               f"({len(reports[0])} bytes, timing excluded)")
    assert same


def test_c7_data_pipeline_fixtures(fixtures, acceptance):
    checks = {}
    (s,) = D.parse_semeval_xml((fixtures / "two_aspect.xml").read_bytes(), "acsa")
    insts = D.explode_instances([s], "acsa")
    checks["two_aspect"] = [(i.aspect, i.polarity.value) for i in insts] == [("food", "positive"), ("delivery", "negative")]
    hard = D.build_hard_subset(D.explode_instances(D.parse_semeval_xml((fixtures / "hard.xml").read_bytes(), "acsa"), "acsa"))
    checks["hard"] = [(i.aspect, i.polarity.value) for i in hard] == [
        ("food", "positive"), ("service", "negative"), ("food", "positive"), ("price", "positive"),
        ("ambience", "neutral"), ("service", "positive"), ("service", "negative")]
    years = [D.parse_semeval_xml((fixtures / f"merge_{y}.xml").read_bytes(), "acsa", str(y) if y > 2014 else "2014")
             for y in (2014, 2015, 2016)]
    labels = {(m.text, c): p.value for m in D.merge_restaurant_large(*years) for c, p in m.category_labels}
    checks["merge p>0"] = labels[("Great pasta, lovely pizza, bland salad.", "food")] == "positive"
    checks["merge p=0"] = labels[("The waiter was kind but the manager was rude.", "service")] == "neutral"
    checks["merge p<0"] = labels[("Overpriced and overpriced again, yet we love this place.", "price")] == "negative"
    checks["merge conflict"] = labels[("The food was great.", "food")] == "neutral"
    checks["merge dedupe"] = len(labels) == 10
    failed = [k for k, v in checks.items() if not v]
    acceptance(7, "PASS" if not failed else "FAIL",
               f"{len(checks) - len(failed)}/{len(checks)} fixture checks" + (f"; failed: {failed}" if failed else ""))
    assert not failed


def test_c8_semeval_reproduction(acceptance):
    root, emb = os.environ.get(SEMEVAL_ENV), os.environ.get(EMBEDDINGS_ENV)
    if not X.semeval_available(root):
        acceptance(8, "SKIP", f"data-gated: set {SEMEVAL_ENV} to a directory holding "
                              f"{', '.join(X.SEMEVAL_FILES.values())} (and {EMBEDDINGS_ENV} for accuracy)")
        pytest.skip("SemEval data not supplied")
    stats = X.semeval_statistics(root)
    mismatched = {name: r["mismatches"] for name, r in stats.items() if r["mismatches"]}
    lines = [f"stats: {len(stats) - len(mismatched)}/{len(stats)} datasets match exactly"]
    for name, ms in mismatched.items():
        # published counts follow an unspecified clean-up step; report, don't hide
        lines.append(f"  mismatch {name}: " + ", ".join(f"{m['split']}/{m['polarity']} {m['got']} vs {m['expected']}" for m in ms))
    accuracy_ok = True
    if emb and os.path.isfile(emb):
        for dataset, target in X.ACCURACY_TARGETS.items():
            report = X.reproduce_semeval(root, emb, dataset)
            got = 100 * report.mean
            ok = abs(got - target) <= X.ACCURACY_TOLERANCE
            accuracy_ok &= ok
            lines.append(f"  {dataset}: {got:.2f} +- {100 * report.std:.2f} vs {target} ({'ok' if ok else 'out of tolerance'})")
    else:
        lines.append(f"  accuracy skipped: {EMBEDDINGS_ENV} not set")
    ok = not mismatched and accuracy_ok
    acceptance(8, "PASS" if ok else "FAIL", "\n".join(lines))
    assert ok


def test_c9_overfit_sanity(acceptance):
    from gcae.synthetic import synthetic_splits
    from gcae.model import ModelVariant
    from gcae.train import ModelFactory, TrainConfig, evaluate, train_epochs

    splits, vocab, aspects = synthetic_splits(25, 1, seed=9)
    train = splits["train"]
    config = TrainConfig(embedding_dim=50, filters_per_width=25, class_count=2, max_epochs=200)
    params = ModelFactory.from_config(ModelVariant.from_name("gcae-acsa"), config, len(vocab), len(aspects))(0)
    curve = []
    train_epochs(params, train, config, lambda _e, p: curve.append(evaluate(p, train)))
    first = next((i + 1 for i, a in enumerate(curve) if a == 1.0), None)
    ok = curve[-1] == 1.0
    acceptance(9, "PASS" if ok else "FAIL",
               f"{len(train)} instances: train accuracy {curve[-1]:.3f} after 200 epochs (first 100% at epoch {first})")
    assert ok
