from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gcae.model import ModelDims, ModelParams, ModelVariant, Task

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

# D=8, L=7, widths [2, 3], n_k=4, C=3
TINY = dict(vocab_size=12, embed_dim=8, n_classes=3, widths=(2, 3), filters=4, n_aspects=5,
            term_width=3, term_filters=4)
TINY_LEN = 7

ALL_VARIANTS = [
    ("gcae-acsa", "gtru"),
    ("gcae-acsa", "gtu"),
    ("gcae-acsa", "glu"),
    ("gcae-atsa", "gtru"),
    ("cnn", "gtru"),
    ("gcn", "gtru"),
]


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``record(n, status, detail)`` prints and keeps one line per criterion."""

    def record(n: int, status: str, detail: str) -> None:
        line = f"criterion {n}: {status} - {detail}"
        _ACCEPTANCE[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])


def tiny_model(name="gcae-acsa", gate="gtru", seed=0, **overrides):
    variant = ModelVariant.from_name(name, gate)
    return ModelParams.init(variant, ModelDims(**(TINY | overrides)), seed)


def tiny_instance(params, seed=0, length=TINY_LEN):
    rng = np.random.default_rng(seed)
    ids = rng.integers(1, params.dims.vocab_size, size=length)
    if params.variant.task is Task.ACSA:
        aspect = int(rng.integers(max(params.dims.n_aspects, 1)))
    else:
        aspect = rng.integers(1, params.dims.vocab_size, size=params.dims.term_width)
    target = int(rng.integers(params.dims.n_classes))
    return ids, aspect, target
