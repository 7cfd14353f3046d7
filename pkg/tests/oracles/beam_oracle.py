"""Brute-force decoding oracle: score every terminated sequence, keep the best.

Scoring steps the decoder directly and normalises logits with its own
log-sum-exp, independent of the package's inference code.
"""

import itertools

import numpy as np

from maac.numerics import no_grad


def sequence_logprob(decoder, enc, tokens) -> float:
    total = 0.0
    with no_grad():
        state = decoder.init_state(enc)
        for k, w in enumerate(tokens):
            out, state = decoder.step(state, enc)
            z = out.logits.data[0]
            top = z.max()
            total += float(z[w] - top - np.log(np.exp(z - top).sum()))
            if k + 1 < len(tokens):
                state = decoder.append(state, [w])
    return total


def terminated_sequences(words, eos, max_len):
    """Sequences ending in EOS within max_len tokens, plus EOS-free ones of exactly max_len."""
    alphabet = [eos] + list(words)
    for n in range(1, max_len + 1):
        for seq in itertools.product(alphabet, repeat=n):
            if eos in seq[:-1]:
                continue
            if n < max_len and seq[-1] != eos:
                continue
            yield list(seq)


def exhaustive_best(decoder, enc, words, eos, max_len):
    best = None
    for seq in terminated_sequences(words, eos, max_len):
        s = sequence_logprob(decoder, enc, seq)
        if best is None or s > best[0] or (s == best[0] and seq < best[1]):
            best = (s, seq)
    return best
