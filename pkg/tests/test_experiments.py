import numpy as np
import pytest

from gcae import data as D
from gcae import experiments as X
from gcae.synthetic import make_corpus
from gcae.train import TrainConfig


@pytest.fixture
def fake_semeval(tmp_path):
    """Synthetic sentences in the SemEval layout, categories and terms both."""
    for i, (key, name) in enumerate(X.SEMEVAL_FILES.items()):
        schema = "2015" if key.startswith(("r15", "r16")) else "2014"
        sents = make_corpus(12 if key.endswith("train") else 6, seed=i)
        (tmp_path / name).write_bytes(D.to_semeval_xml(sents, schema))
    return tmp_path


def test_expected_tables_are_consistent():
    for name, splits in X.EXPECTED_STATS.items():
        if name.endswith("-hard"):
            full = X.EXPECTED_STATS[name[: -len("-hard")]]
            for split, counts in splits.items():
                assert all(counts[p] <= full[split][p] for p in counts)
    assert X.EXPECTED_STATS["acsa/restaurant-large"]["train"]["conflict"] == 0
    assert set(X.ACCURACY_TARGETS) <= set(X.EXPECTED_STATS)


def test_semeval_available(fake_semeval, tmp_path_factory):
    assert X.semeval_available(fake_semeval)
    assert not X.semeval_available(None)
    assert not X.semeval_available(tmp_path_factory.mktemp("empty"))


def test_semeval_statistics_reports_mismatches(fake_semeval):
    report = X.semeval_statistics(fake_semeval)
    assert set(report) == set(X.EXPECTED_STATS)
    r14 = report["acsa/restaurant-2014"]
    assert r14["got"]["train"] == {"positive": 12, "negative": 12, "neutral": 0, "conflict": 0}
    assert {"split": "train", "polarity": "positive", "expected": 2179, "got": 12} in r14["mismatches"]
    large = report["acsa/restaurant-large"]["got"]["train"]
    # three years of 12 two-aspect sentences; repeated template texts are merged
    assert 0 < large["positive"] + large["negative"] <= 72 and large["neutral"] + large["conflict"] == 0


def test_reproduce_semeval_runs_on_tiny_config(fake_semeval, tmp_path):
    emb = tmp_path / "emb.txt"
    emb.write_text("food " + " ".join(["0.1"] * 6) + "\nthe " + " ".join(["-0.1"] * 6) + "\n")
    config = TrainConfig(widths=(2, 3), filters_per_width=3, embedding_dim=6, max_epochs=2, folds=2, runs=2,
                         class_count=4, term_filters=3)
    for dataset in X.ACCURACY_TARGETS:
        cfg = config if dataset != "acsa/restaurant-large" else TrainConfig(**{**config.to_json(), "class_count": 3})
        report = X.reproduce_semeval(fake_semeval, emb, dataset, cfg)
        assert len(report.accuracies) == 2 and all(0 <= a <= 1 for a in report.accuracies)
        assert np.isfinite(report.std)


def test_synthetic_selectivity_small():
    cfg = TrainConfig(embedding_dim=8, filters_per_width=4, widths=(2, 3), class_count=2, max_epochs=2,
                      early_stopping=False)
    r = X.synthetic_selectivity(20, 5, config=cfg)
    assert r["n_train"] == 40 and r["n_hard"] == 10
    assert r["cnn"]["hard_accuracy"] == 0.5
    assert len(r["gcae-acsa"]["curve"]) == 2
