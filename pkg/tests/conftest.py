import numpy as np
import pytest

from maac.config import TINY
from maac.decoder import Decoder
from maac.numerics import Tensor


def tiny_decoder_config(**overrides):
    """C = H = M = 8 decoder sizes on top of the tiny preset, dropout off."""
    base = dict(dim=8, hidden=8, attn_dim=8, embed_dim=8, c1=8, top_k=2,
                dropout_embed=0.0, dropout_classifier=0.0)
    base.update(overrides)
    return TINY.with_overrides(**base)


def random_decoder_inputs(seed, batch=1, length=4, c1=8, k=2, vocab=11):
    rng = np.random.default_rng(seed)
    X = Tensor(rng.normal(size=(batch, length, c1)))
    kw = rng.integers(4, vocab, size=(batch, k))
    return X, kw


@pytest.fixture
def tiny_cfg():
    return tiny_decoder_config()


@pytest.fixture
def make_decoder():
    def build(seed=0, vocab=11, **overrides):
        return Decoder(tiny_decoder_config(**overrides), vocab, seed=seed)

    return build


CAPTION_WORDS = ["a", "bird", "chirps", "dog", "barks", "and", "bark", "chirp"]
KEYWORDS = ["bird", "chirp", "dog", "bark"]


def tiny_captioner_config(**overrides):
    """Two-channel backbone and C = H = M = 8 decoder; four keywords."""
    base = dict(n_mels=8, channels="2,2,2,2,2,2", pools="2x2,2x1,1x1,1x1,1x1,1x1", head_dim=4,
                n_keywords=4, c1=8, top_k=2, dim=8, hidden=8, attn_dim=8, embed_dim=8,
                dropout_embed=0.0, dropout_classifier=0.0, batch_size=4, max_len=6)
    base.update(overrides)
    return TINY.with_overrides(**base)


def tiny_captioner(seed=0, **overrides):
    from maac.model import Captioner, Vocab
    from maac.decoder import SPECIALS

    vocab = Vocab(list(SPECIALS) + CAPTION_WORDS)
    return Captioner(tiny_captioner_config(**overrides), vocab, KEYWORDS, seed)


def tiny_features(seed=0, n=4, frames=8, mels=8):
    return np.random.default_rng(seed).normal(size=(n, frames, mels))


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results.values():
            terminalreporter.write_line(line)
