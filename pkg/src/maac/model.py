"""Vocabulary and the full captioner (keyword encoder + attention decoder)."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .decoder import BOS, EOS, PAD, SPECIALS, UNK, Decoder, Encoded
from .encoder import KeywordEncoder, topk_keywords
from .numerics import Module, Tensor, no_grad, ops


@dataclass
class Vocab:
    tokens: list
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, UNK)

    def encode(self, words, eos: bool = True) -> list:
        ids = [self.id(w) for w in words]
        return ids + [EOS] if eos else ids

    def decode(self, ids) -> list:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (BOS, PAD):
                continue
            out.append(self.tokens[i])
        return out

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def build(cls, token_lists, extra=()) -> "Vocab":
        """Words ordered by training frequency, then lexicographically.

        ``extra`` words (keyword-table entries that may never occur verbatim)
        are added with frequency zero.
        """
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        for w in extra:
            counts.setdefault(w, 0)
        for s in SPECIALS:
            counts.pop(s, None)
        words = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(list(SPECIALS) + words)


class Captioner(Module):
    def __init__(self, cfg: Config, vocab: Vocab, keywords, seed: int):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.keywords = list(keywords)
        if len(self.keywords) != cfg.n_keywords:
            raise ValueError(f"config expects {cfg.n_keywords} keywords, got {len(self.keywords)}")
        missing = [k for k in self.keywords if k not in vocab]
        if missing:
            raise ValueError(f"keywords missing from the vocabulary: {missing[:5]}")
        self.keyword_vocab_ids = np.array([vocab.id(k) for k in self.keywords], dtype=np.int64)
        self.encoder = KeywordEncoder(cfg, seed)
        self.decoder = Decoder(cfg, len(vocab), seed)

    def train(self, mode: bool = True) -> "Captioner":
        super().train(mode)
        # the keyword encoder always runs with frozen running statistics here
        self.encoder.set_backbone_mode(False)
        return self

    def decoder_parameters(self) -> list:
        return self.encoder.acoustic_parameters() + self.decoder.parameters()

    def encoder_features(self, feats):
        """Frozen-encoder pass: (last-block sequence [B,L,Ch], keyword probs [B,N])."""
        x = np.asarray(feats, dtype=self.cfg.dtype)
        self.encoder.set_backbone_mode(False)
        with no_grad():
            blocks = self.encoder.backbone_forward(x)
            y_hat = self.encoder.predict_keywords(*self.encoder.hierarchy_heads(blocks))
            seq = ops.transpose(ops.mean(blocks[-1], axis=3), (0, 2, 1))
        return seq.data, y_hat.data

    def keyword_ids(self, y_hat) -> np.ndarray:
        return self.keyword_vocab_ids[topk_keywords(y_hat, self.cfg.top_k)]

    def encode(self, seq, kw_ids) -> Encoded:
        X = self.encoder.acoustic_out(Tensor(np.asarray(seq, dtype=self.cfg.dtype)))
        return self.decoder.encode(X, kw_ids)

    def prepare(self, feats) -> Encoded:
        seq, y_hat = self.encoder_features(feats)
        with no_grad():
            return self.encode(seq, self.keyword_ids(y_hat))
