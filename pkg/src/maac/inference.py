"""Greedy and beam-search caption generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import BOS, EOS, PAD, UNK, Decoder, Encoded
from .numerics import no_grad, ops

BANNED = (BOS, PAD, UNK)


@dataclass
class Hypothesis:
    tokens: list                     # BOS first
    logprob: float
    finished: bool = False           # True when EOS was emitted
    attention: list = field(default_factory=list)
    row: int = 0                     # index into the live state batch

    def words(self) -> list:
        """Token ids without BOS and the EOS terminator."""
        out = self.tokens[1:]
        return out[:-1] if out and out[-1] == EOS else out

    def score(self, gamma: float = 0.0) -> float:
        if gamma == 0.0:
            return self.logprob
        return self.logprob / (max(1, len(self.tokens) - 1) ** gamma)


@dataclass
class DecodeResult:
    tokens: list                      # caption token ids, BOS/EOS stripped
    logprob: float
    attention: list                   # one dict per step
    nbest: list = field(default_factory=list)


def _step_logprobs(decoder: Decoder, state, enc: Encoded):
    out, state = decoder.step(state, enc)
    logp = ops.log_softmax(out.logits, axis=-1).data
    return logp, out, state


def _attention_record(step: int, token: int, out, row: int) -> dict:
    rec = {"step": step, "token": int(token), "alpha_acoustic": out.alpha_acoustic.data[row].tolist()}
    rec["alpha_keywords"] = None if out.alpha_keywords is None else out.alpha_keywords.data[row].tolist()
    rec["alpha_prev"] = None if out.alpha_prev is None else out.alpha_prev.data[row].tolist()
    return rec


def _masked(logp: np.ndarray) -> np.ndarray:
    m = logp.copy()
    m[..., list(BANNED)] = -np.inf
    return m


def greedy_decode(decoder: Decoder, enc: Encoded, max_len: int = 30) -> DecodeResult:
    """Argmax decoding for a single clip (enc batch of 1)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if enc.batch != 1:
        raise ValueError("greedy_decode works on one clip at a time")
    was_training = decoder.training
    decoder.eval()
    try:
        with no_grad():
            state = decoder.init_state(enc)
            tokens, total, attn = [BOS], 0.0, []
            for step in range(max_len):
                logp, out, state = _step_logprobs(decoder, state, enc)
                w = int(np.argmax(_masked(logp[0])))
                total += float(logp[0, w])
                tokens.append(w)
                attn.append(_attention_record(step, w, out, 0))
                if w == EOS:
                    break
                state = decoder.append(state, [w])
    finally:
        decoder.train(was_training)
    hyp = Hypothesis(tokens, total, tokens[-1] == EOS, attn)
    return DecodeResult(hyp.words(), total, attn, [hyp])


def beam_search(decoder: Decoder, enc: Encoded, beam: int = 4, max_len: int = 30,
                length_penalty: float = 0.0, n_best: int = 1) -> DecodeResult:
    """Beam search over summed log-probabilities for a single clip.

    Each step keeps the ``beam`` best expansions of the live hypotheses;
    expansions ending in EOS (or reaching ``max_len``) move to the finished
    pool. Ties are broken by lexicographic token ids.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if enc.batch != 1:
        raise ValueError("beam_search works on one clip at a time")
    was_training = decoder.training
    decoder.eval()
    try:
        with no_grad():
            finished = _beam_loop(decoder, enc, beam, max_len)
    finally:
        decoder.train(was_training)
    finished.sort(key=lambda h: (-h.score(length_penalty), h.tokens))
    best = finished[0]
    return DecodeResult(best.words(), best.logprob, best.attention, finished[:max(1, n_best)])


def _beam_loop(decoder: Decoder, enc: Encoded, beam: int, max_len: int) -> list:
    state = decoder.init_state(enc)
    live = [Hypothesis([BOS], 0.0, row=0)]
    finished = []
    allowed = np.array([w for w in range(decoder.vocab_size) if w not in BANNED])
    for step in range(max_len):
        batch_enc = enc.select(np.zeros(len(live), dtype=np.int64))
        logp, out, state = _step_logprobs(decoder, state, batch_enc)
        cands = []
        for i, hyp in enumerate(live):
            for w in allowed:
                cands.append((hyp.logprob + float(logp[i, w]), hyp.tokens + [int(w)], i))
        cands.sort(key=lambda c: (-c[0], c[1]))
        keep = cands[:beam]
        next_live, rows, toks = [], [], []
        for score, tokens, i in keep:
            rec = _attention_record(step, tokens[-1], out, i)
            hyp = Hypothesis(tokens, score, tokens[-1] == EOS, live[i].attention + [rec])
            if hyp.finished or step == max_len - 1:
                finished.append(hyp)
            else:
                hyp.row = len(next_live)
                next_live.append(hyp)
                rows.append(i)
                toks.append(tokens[-1])
        if not next_live:
            break
        state = decoder.append(state.select(rows), toks)
        live = next_live
    return finished


def score_sequence(decoder: Decoder, enc: Encoded, tokens) -> float:
    """Teacher-forced total log-probability of ``tokens`` (no BOS; may end in EOS)."""
    was_training = decoder.training
    decoder.eval()
    total = 0.0
    try:
        with no_grad():
            state = decoder.init_state(enc)
            for k, w in enumerate(tokens):
                logp, _, state = _step_logprobs(decoder, state, enc)
                total += float(logp[0, w])
                if k + 1 < len(tokens):
                    state = decoder.append(state, [w])
    finally:
        decoder.train(was_training)
    return total
