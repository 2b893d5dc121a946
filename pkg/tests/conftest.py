import numpy as np
import pytest
from hypothesis import settings

from c2t.classifier import MlpParams, init_params
from c2t.models import ModelPairSpec, TabularLM, gen_pair

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_pair():
    spec = ModelPairSpec(vocab=64, order=2, seed=5, draft_noise=0.1)
    target, draft = gen_pair(spec)
    return spec, target, draft


@pytest.fixture(scope="session")
def mid_pair():
    spec = ModelPairSpec(vocab=1024, order=2, seed=42, draft_noise=0.08)
    target, draft = gen_pair(spec)
    return spec, target, draft


def p_classifier():
    """Confidence that rises with P only: sigmoid(40 * P - 2)."""
    W1 = np.array([[1.0, 0.0, 0.0]])
    return MlpParams(1, W1, [0.0], [40.0], -2.0)


@pytest.fixture
def pcls():
    return p_classifier()


@pytest.fixture(scope="session")
def rand_cls():
    return init_params(8, 3)


def table_model(vocab, order, rows_fn):
    """Explicit model over every context, rows from ``rows_fn(context)``."""
    probe = TabularLM(vocab, order)
    return TabularLM(vocab, order, {k: rows_fn(k) for k in probe.all_contexts()})


def random_table_model(vocab, order, seed, alpha=0.3):
    gen = np.random.default_rng(seed)
    return table_model(vocab, order, lambda k: gen.dirichlet(np.full(vocab, alpha)))


# acceptance criteria report: test_acceptance records one line per criterion
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
