import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from absakit.corpus import RawInstance
from absakit.encoder import TinyTokenizer, register_markers

from synth import build_fixture_corpus, build_overfit_sc_set


@pytest.fixture()
def tok():
    return register_markers(TinyTokenizer())


@pytest.fixture()
def figure_instance():
    """The running example sentence with aspect "food" and opinion "tasty"."""
    words = tuple("The food is tasty but the service is very bad !".split())
    return RawInstance(
        "fig#0", words, 1, 1, "food", polarity="positive", opinion_spans=((3, 3),)
    )


@pytest.fixture()
def figure_instance_service():
    words = tuple("The food is tasty but the service is very bad !".split())
    return RawInstance(
        "fig#1", words, 6, 6, "service", polarity="negative", opinion_spans=((8, 9),)
    )


@pytest.fixture(scope="session")
def fixture_corpus():
    return build_fixture_corpus(500)


@pytest.fixture(scope="session")
def overfit_sc_set():
    return build_overfit_sc_set(16)
