"""LSTM decoder with acoustic and semantic attention.

At every step the previous hidden state queries three sources: the projected
acoustic frames, the projected keyword embeddings and the projected embeddings
of the words emitted so far. Each attention head scores rows with a one-layer
ReLU network, softmax-normalises over rows, takes the weighted row sum and
gates it with the hidden state through a GLU. The three gated contexts plus the
previous word embedding form the LSTM input.

Token ids 0, 1, 2, 3 are BOS, EOS, PAD, UNK.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import Config
from .numerics import Dropout, Embedding, Linear, LSTMCell, Module, Tensor, ops
from .numerics.nn import init_uniform

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<bos>", "<eos>", "<pad>", "<unk>")


class AttentionModule(Module):
    """Scores rows of F_hat against h_prev and gates the weighted sum."""

    def __init__(self, dim: int, hidden: int, attn_dim: int, name: str, seed: int, dtype=np.float64):
        super().__init__()
        bi = 1.0 / np.sqrt(dim)
        bs = 1.0 / np.sqrt(hidden)
        bn = 1.0 / np.sqrt(attn_dim)
        self.W_i = init_uniform(f"{name}.W_i", (attn_dim, dim), bi, seed, dtype)
        self.b_i = init_uniform(f"{name}.b_i", (attn_dim,), bi, seed, dtype)
        self.W_s = init_uniform(f"{name}.W_s", (attn_dim, hidden), bs, seed, dtype)
        self.b_s = init_uniform(f"{name}.b_s", (attn_dim,), bs, seed, dtype)
        self.W_n = init_uniform(f"{name}.W_n", (attn_dim,), bn, seed, dtype)
        self.b_n = init_uniform(f"{name}.b_n", (1,), bn, seed, dtype)

    def keys(self, F_hat: Tensor) -> Tensor:
        """Row transform F_hat W_i^T + b_i; independent of the step, so cacheable."""
        return ops.matmul(F_hat, self.W_i.T) + self.b_i

    def attend(self, F_hat: Tensor, keys: Tensor, h_prev: Tensor):
        """F_hat [B,R,C], keys [B,R,M], h_prev [B,H] -> (o [B,C], alpha [B,R])."""
        q = ops.matmul(h_prev, self.W_s.T) + self.b_s
        A = ops.relu(keys + ops.reshape(q, (q.shape[0], 1, q.shape[1])))
        alpha = ops.softmax(ops.matmul(A, self.W_n) + self.b_n, axis=-1)
        context = ops.sum(F_hat * ops.reshape(alpha, alpha.shape + (1,)), axis=1)
        return ops.glu(ops.concat([context, h_prev], axis=-1)), alpha


def attention_module(F_hat, h_prev, params: AttentionModule):
    """Unbatched or batched attention: F_hat [R,C] or [B,R,C]; h_prev [H] or [B,H]."""
    F_hat = F_hat if isinstance(F_hat, Tensor) else Tensor(F_hat)
    h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    single = F_hat.ndim == 2
    if single:
        F_hat = ops.reshape(F_hat, (1,) + F_hat.shape)
        h_prev = ops.reshape(h_prev, (1,) + h_prev.shape)
    if F_hat.shape[1] < 1:
        raise ValueError("attention needs at least one row")
    if F_hat.shape[-1] != params.W_i.shape[1] or h_prev.shape[-1] != params.W_s.shape[1]:
        raise ValueError(f"attention shape mismatch: F_hat{F_hat.shape} h{h_prev.shape}")
    o, alpha = params.attend(F_hat, params.keys(F_hat), h_prev)
    if single:
        return o[0], alpha[0]
    return o, alpha


def init_hidden(X_hat: Tensor):
    """h0 = mean over the time rows of X_hat, c0 = 0."""
    if X_hat.shape[-2] < 1:
        raise ValueError("X_hat needs at least one row")
    h0 = ops.mean(X_hat, axis=-2)
    return h0, Tensor(np.zeros(h0.shape, dtype=h0.dtype))


@dataclass
class Encoded:
    """Step-invariant decoder inputs for a batch."""

    X_hat: Tensor
    X_keys: Tensor
    keyword_ids: np.ndarray
    W_hat: Tensor | None = None
    W_keys: Tensor | None = None

    @property
    def batch(self) -> int:
        return self.X_hat.shape[0]

    def select(self, rows) -> "Encoded":
        rows = np.asarray(rows)
        pick = lambda t: None if t is None else Tensor(t.data[rows])  # noqa: E731
        return Encoded(pick(self.X_hat), pick(self.X_keys), self.keyword_ids[rows], pick(self.W_hat), pick(self.W_keys))


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    P: np.ndarray                 # [B, t] token ids emitted so far, BOS first
    prev_emb: Tensor              # embedding of P[:, -1]
    P_hat: Tensor | None = None   # [B, t, C]
    P_keys: Tensor | None = None  # [B, t, M]

    @property
    def t(self) -> int:
        return self.P.shape[1]

    def select(self, rows) -> "DecoderState":
        """Detached copy of a subset (or reordering) of batch rows."""
        rows = np.asarray(rows)
        pick = lambda x: None if x is None else Tensor(x.data[rows])  # noqa: E731
        return DecoderState(pick(self.h), pick(self.c), self.P[rows], pick(self.prev_emb),
                            pick(self.P_hat), pick(self.P_keys))


@dataclass
class StepOutput:
    logits: Tensor
    alpha_acoustic: Tensor
    alpha_keywords: Tensor | None
    alpha_prev: Tensor | None

    @property
    def probs(self) -> Tensor:
        return ops.softmax(self.logits, axis=-1)


class Decoder(Module):
    def __init__(self, cfg: Config, vocab_size: int, seed: int, name: str = "decoder"):
        super().__init__()
        if vocab_size <= UNK:
            raise ValueError("vocabulary must hold the four special tokens plus words")
        dtype = cfg.dtype
        C, H, M, E = cfg.dim, cfg.hidden, cfg.attn_dim, cfg.embed_dim
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.use_prev_words = cfg.use_prev_words
        self.use_keywords = cfg.use_keywords
        self.shared = cfg.share_semantic_attention
        self.embed = Embedding(vocab_size, E, f"{name}.embed", seed, dtype)
        self.acoustic_proj = Linear(cfg.c1, C, f"{name}.acoustic_proj", seed, dtype=dtype)
        self.acoustic_attn = AttentionModule(C, H, M, f"{name}.acoustic_attn", seed, dtype)
        if self.use_keywords or self.use_prev_words:
            if self.shared:
                self.semantic_proj = Linear(E, C, f"{name}.semantic_proj", seed, dtype=dtype)
                self.semantic_attn = AttentionModule(C, H, M, f"{name}.semantic_attn", seed, dtype)
            else:
                if self.use_keywords:
                    self.keyword_proj = Linear(E, C, f"{name}.keyword_proj", seed, dtype=dtype)
                    self.keyword_attn = AttentionModule(C, H, M, f"{name}.keyword_attn", seed, dtype)
                if self.use_prev_words:
                    self.prev_proj = Linear(E, C, f"{name}.prev_proj", seed, dtype=dtype)
                    self.prev_attn = AttentionModule(C, H, M, f"{name}.prev_attn", seed, dtype)
        self.lstm = LSTMCell(C, H, f"{name}.lstm", seed, dtype)
        self.classifier = Linear(H, vocab_size, f"{name}.classifier", seed, dtype=dtype)
        self.dropout = Dropout()

    # -- semantic branches ----------------------------------------------------
    def _keyword_branch(self):
        if not self.use_keywords:
            return None
        return (self.semantic_proj, self.semantic_attn) if self.shared else (self.keyword_proj, self.keyword_attn)

    def _prev_branch(self):
        if not self.use_prev_words:
            return None
        return (self.semantic_proj, self.semantic_attn) if self.shared else (self.prev_proj, self.prev_attn)

    def _embed(self, ids) -> Tensor:
        return self.dropout(self.embed(ids), self.cfg.dropout_embed, self.training)

    # -- setup ----------------------------------------------------------------
    def encode(self, X: Tensor, keyword_ids) -> Encoded:
        """X [B,L,c1] acoustic sequence, keyword_ids [B,K] vocabulary ids."""
        keyword_ids = np.asarray(keyword_ids, dtype=np.int64)
        if keyword_ids.ndim != 2 or keyword_ids.shape[0] != X.shape[0]:
            raise ValueError(f"keyword ids must be [B, K], got {keyword_ids.shape}")
        X_hat = self.acoustic_proj(X)
        enc = Encoded(X_hat, self.acoustic_attn.keys(X_hat), keyword_ids)
        branch = self._keyword_branch()
        if branch is not None:
            if keyword_ids.shape[1] < 1:
                raise ValueError("keyword path enabled but no keywords given")
            proj, attn = branch
            enc.W_hat = proj(self._embed(keyword_ids))
            enc.W_keys = attn.keys(enc.W_hat)
        return enc

    def init_state(self, enc: Encoded) -> DecoderState:
        h0, c0 = init_hidden(enc.X_hat)
        bos = np.full((enc.batch, 1), BOS, dtype=np.int64)
        state = DecoderState(h0, c0, np.zeros((enc.batch, 0), dtype=np.int64), None)
        return self.append(state, bos[:, 0])

    def append(self, state: DecoderState, tokens) -> DecoderState:
        """Extend P with the chosen tokens; their embedding feeds the next step."""
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        emb = self._embed(tokens)
        P = np.concatenate([state.P, tokens[:, None]], axis=1)
        new = replace(state, P=P, prev_emb=emb)
        branch = self._prev_branch()
        if branch is not None:
            proj, attn = branch
            row = proj(emb)
            row = ops.reshape(row, (row.shape[0], 1, row.shape[1]))
            key = attn.keys(row)
            new.P_hat = row if state.P_hat is None else ops.concat([state.P_hat, row], axis=1)
            new.P_keys = key if state.P_keys is None else ops.concat([state.P_keys, key], axis=1)
        return new

    # -- one step -------------------------------------------------------------
    def step(self, state: DecoderState, enc: Encoded):
        """Advance h, c by one step. Returns (StepOutput, state with new h, c)."""
        if state.t < 1:
            raise ValueError("P must be seeded with BOS before decoding")
        h_prev = state.h
        o_x, a_x = self.acoustic_attn.attend(enc.X_hat, enc.X_keys, h_prev)
        parts = [o_x]
        a_w = a_p = None
        kb = self._keyword_branch()
        if kb is not None:
            o_w, a_w = kb[1].attend(enc.W_hat, enc.W_keys, h_prev)
            parts.append(o_w)
        pb = self._prev_branch()
        if pb is not None:
            o_p, a_p = pb[1].attend(state.P_hat, state.P_keys, h_prev)
            parts.append(o_p)
        parts.append(state.prev_emb)
        h, c = self.lstm(ops.add_n(*parts), h_prev, state.c)
        logits = self.classifier(self.dropout(h, self.cfg.dropout_classifier, self.training))
        return StepOutput(logits, a_x, a_w, a_p), replace(state, h=h, c=c)

    def decode_step(self, state: DecoderState, enc: Encoded, w_prev):
        """Spec-level step: returns (v_t, new_state, alphas).

        ``w_prev`` must be the last entry of ``state.P``; the caller appends the
        chosen word with :meth:`append`.
        """
        w_prev = np.asarray(w_prev, dtype=np.int64).reshape(-1)
        if w_prev.min() < 0 or w_prev.max() >= self.vocab_size:
            raise IndexError("token id out of range")
        if not np.array_equal(w_prev, state.P[:, -1]):
            raise ValueError("w_prev must equal the last element of P")
        out, new_state = self.step(state, enc)
        alphas = {"acoustic": out.alpha_acoustic, "keywords": out.alpha_keywords, "prev": out.alpha_prev}
        return out.probs, new_state, alphas

    def semantic_context(self, keyword_ids, P_ids, h_prev: Tensor):
        """Keyword and previous-word contexts from scratch (no caching).

        Returns (o_w, o_p, alpha_w, alpha_p); disabled paths give zero vectors
        and ``None`` attention.
        """
        keyword_ids = np.atleast_2d(np.asarray(keyword_ids, dtype=np.int64))
        P_ids = np.atleast_2d(np.asarray(P_ids, dtype=np.int64))
        if P_ids.shape[1] < 1:
            raise ValueError("P is empty; seed it with BOS")
        h_prev = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
        if h_prev.ndim == 1:
            h_prev = ops.reshape(h_prev, (1, h_prev.shape[0]))
        zero = Tensor(np.zeros((h_prev.shape[0], self.cfg.dim), dtype=h_prev.dtype))
        o_w, a_w, o_p, a_p = zero, None, zero, None
        kb = self._keyword_branch()
        if kb is not None:
            W_hat = kb[0](self._embed(keyword_ids))
            o_w, a_w = kb[1].attend(W_hat, kb[1].keys(W_hat), h_prev)
        pb = self._prev_branch()
        if pb is not None:
            P_hat = pb[0](self._embed(P_ids))
            o_p, a_p = pb[1].attend(P_hat, pb[1].keys(P_hat), h_prev)
        return o_w, o_p, a_w, a_p

    # -- teacher forcing ------------------------------------------------------
    def forward_sequence(self, enc: Encoded, targets, teacher_forcing_prob: float = 1.0, rng=None):
        """Run over gold ``targets`` [B,T] (no BOS, EOS then PAD).

        With probability ``teacher_forcing_prob`` per step and row the gold token
        is fed back; otherwise the step's argmax. Returns the per-step logits and
        the fed-back token matrix.
        """
        targets = np.asarray(targets, dtype=np.int64)
        state = self.init_state(enc)
        logits, fed = [], []
        for t in range(targets.shape[1]):
            out, state = self.step(state, enc)
            logits.append(out.logits)
            nxt = targets[:, t]
            if teacher_forcing_prob < 1.0:
                if rng is None:
                    raise ValueError("scheduled sampling needs an Rng")
                own = out.logits.data.argmax(axis=-1)
                use_gold = rng.random(targets.shape[0]) < teacher_forcing_prob
                nxt = np.where(use_gold, nxt, own)
            fed.append(nxt)
            if t + 1 < targets.shape[1]:
                state = self.append(state, nxt)
        return ops.stack(logits, axis=1), np.stack(fed, axis=1)
