from dataclasses import replace

import numpy as np
import pytest

from conftest import random_decoder_inputs, tiny_decoder_config
from maac.decoder import BOS, EOS, PAD, UNK, Decoder, StepOutput
from maac.inference import beam_search, greedy_decode, score_sequence
from maac.numerics import Tensor
from oracles.beam_oracle import exhaustive_best, sequence_logprob


class ScriptedDecoder:
    """Decoder stand-in whose logits depend only on the step index."""

    training = False

    def __init__(self, table, vocab_size=8):
        self.table = [np.asarray(row, dtype=float) for row in table]
        self.vocab_size = vocab_size

    def eval(self):
        return self

    def train(self, mode=True):
        return self

    def init_state(self, enc):
        return {"P": np.full((enc.batch, 1), BOS)}

    def append(self, state, tokens):
        return {"P": np.concatenate([state["P"], np.asarray(tokens).reshape(-1, 1)], axis=1)}

    def step(self, state, enc):
        t = state["P"].shape[1] - 1
        row = self.table[min(t, len(self.table) - 1)]
        b = state["P"].shape[0]
        logits = Tensor(np.tile(row, (b, 1)))
        alpha = Tensor(np.ones((b, 1)))
        return StepOutput(logits, alpha, None, None), state


class OneRow:
    def __init__(self, batch=1):
        self.batch = batch
        self.keyword_ids = np.zeros((batch, 1), dtype=np.int64)

    def select(self, rows):
        return OneRow(len(rows))


def favouring(token, strength=5.0, vocab=8, extra=None):
    row = np.zeros(vocab)
    row[token] = strength
    for k, v in (extra or {}).items():
        row[k] = v
    return row


def test_greedy_rigged_chain():
    dec = ScriptedDecoder([favouring(5), favouring(2, extra={4: 3.0}), favouring(EOS)])
    # PAD is masked, so the second step takes the runner-up token 4
    out = greedy_decode(dec, OneRow(), max_len=10)
    assert out.tokens == [5, 4]
    dec = ScriptedDecoder([favouring(5), favouring(6), favouring(EOS)])
    assert greedy_decode(dec, OneRow(), max_len=10).tokens == [5, 6]


def test_greedy_eos_first_gives_empty_caption():
    out = greedy_decode(ScriptedDecoder([favouring(EOS)]), OneRow(), max_len=10)
    assert out.tokens == []


def test_greedy_ties_pick_lowest_id_and_never_emit_specials():
    row = np.zeros(8)
    row[[BOS, PAD, UNK]] = 50.0
    row[[6, 7]] = 1.0
    out = greedy_decode(ScriptedDecoder([row, favouring(EOS)]), OneRow(), max_len=10)
    assert out.tokens == [6]


def test_greedy_stops_at_max_len():
    out = greedy_decode(ScriptedDecoder([favouring(4)]), OneRow(), max_len=3)
    assert out.tokens == [4, 4, 4]


def toy_model(seed, vocab=6):
    dec = Decoder(tiny_decoder_config(), vocab, seed=seed).eval()
    dec.classifier.weight.data *= 6.0      # sharper distributions so greedy and beam disagree
    X, kw = random_decoder_inputs(seed, vocab=vocab)
    return dec, dec.encode(X, kw)


@pytest.mark.parametrize("seed", range(5))
def test_exhaustive_beam_equals_brute_force(seed):
    dec, enc = toy_model(seed)
    best_lp, best_seq = exhaustive_best(dec, enc, [4, 5], EOS, 4)
    out = beam_search(dec, enc, beam=6 ** 4, max_len=4)
    assert out.nbest[0].tokens[1:] == best_seq
    assert abs(out.logprob - best_lp) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_beam_one_equals_greedy(seed):
    dec, enc = toy_model(seed, vocab=11)
    g = greedy_decode(dec, enc, max_len=6)
    b = beam_search(dec, enc, beam=1, max_len=6)
    assert g.tokens == b.tokens and g.logprob == pytest.approx(b.logprob, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_beam_output_invariants(seed):
    dec, enc = toy_model(seed, vocab=11)
    out = beam_search(dec, enc, beam=3, max_len=6, n_best=3)
    for hyp in out.nbest:
        assert hyp.logprob <= 0.0
        assert not set(hyp.words()) & {BOS, PAD, UNK, EOS}
        assert hyp.tokens[0] == BOS and EOS not in hyp.tokens[1:-1]
        assert abs(score_sequence(dec, enc, hyp.tokens[1:]) - hyp.logprob) <= 1e-10
        assert abs(sequence_logprob(dec, enc, hyp.tokens[1:]) - hyp.logprob) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_beam_is_monotone(seed):
    dec, enc = toy_model(seed, vocab=11)
    scores = [beam_search(dec, enc, beam=k, max_len=5).logprob for k in (1, 2, 3, 5, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_attention_export_shapes():
    dec, enc = toy_model(0, vocab=11)
    out = beam_search(dec, enc, beam=2, max_len=5)
    assert len(out.attention) == len(out.nbest[0].tokens) - 1
    for t, rec in enumerate(out.attention):
        assert rec["step"] == t
        assert len(rec["alpha_acoustic"]) == enc.X_hat.shape[1]
        assert len(rec["alpha_prev"]) == t + 1
        assert abs(sum(rec["alpha_keywords"]) - 1.0) <= 1e-12


def test_length_penalty_option_changes_ranking_only():
    dec, enc = toy_model(3, vocab=11)
    plain = beam_search(dec, enc, beam=4, max_len=6, n_best=1000)
    normed = beam_search(dec, enc, beam=4, max_len=6, n_best=1000, length_penalty=1.0)
    key = lambda r: sorted((tuple(h.tokens), h.logprob) for h in r.nbest)  # noqa: E731
    assert key(plain) == key(normed)


def test_argument_errors():
    dec, enc = toy_model(0)
    with pytest.raises(ValueError):
        beam_search(dec, enc, beam=0)
    with pytest.raises(ValueError):
        greedy_decode(dec, enc, max_len=0)
