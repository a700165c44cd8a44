import numpy as np
import pytest

from mddkit.phoneset import PhonemeAlphabet


@pytest.fixture
def abc_alphabet():
    """Three-symbol alphabet used by most unit tests (blank id 3)."""
    return PhonemeAlphabet(
        ("A", "B", "C"), {"A": "vowel", "B": "consonant", "C": "consonant"}
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
