"""Shared fixtures: tiny corpora, vocabularies and encoder configs."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lwpt.corpus import Document, build_vocabs, synth_corpus

settings.register_profile(
    "lwpt", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("lwpt")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_docs():
    """Five hand-written documents over three labels."""
    return [
        Document("a", [["red", "apple"], ["sweet"]], ("fruit", "red")),
        Document("b", [["green", "apple", "sour"]], ("fruit",)),
        Document("c", [["red", "car", "fast"], ["loud", "engine"]], ("car", "red")),
        Document("d", [["blue", "car"]], ("car",)),
        Document("e", [["red", "rose"]], ("red",)),
    ]


@pytest.fixture
def tiny_vocabs(tiny_docs):
    return build_vocabs(tiny_docs)


@pytest.fixture(scope="session")
def synth_small():
    """A 300-document synthetic corpus with one strong planted pair."""
    return synth_corpus(4, 300, [(0, 1, 0.9)], rng=7)
