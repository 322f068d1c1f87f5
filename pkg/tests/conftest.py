import numpy as np
import pytest

from bical.vocab import TextVocabulary


@pytest.fixture
def vocab_2x2():
    """K=2 queries with two prototypes each: I_0={0,1}, I_1={2,3}."""
    protos = np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-0.6, 0.8]])
    return TextVocabulary(protos, [0, 0, 1, 1], 2)


def random_vocab(rng, K, max_m=4, dim=3):
    counts = rng.integers(1, max_m + 1, size=K)
    owner = np.repeat(np.arange(K), counts)
    protos = rng.standard_normal((len(owner), dim)) + 0.1
    return TextVocabulary(protos, owner, K)
