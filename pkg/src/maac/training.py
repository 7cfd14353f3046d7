"""Losses, schedules and the three training stages.

1. ``train_encoder``: keyword encoder on multi-hot labels with binary
   cross-entropy. Phase one freezes the convolutional backbone (running
   batch-norm statistics, no gradient); phase two fine-tunes everything.
   Mixup and SpecAugment are applied here only.
2. ``train_captioner_ce``: decoder (plus the acoustic projection) with
   label-smoothed cross-entropy under teacher forcing; the keyword encoder
   stays frozen.
3. ``scst_finetune``: self-critical policy gradient on the CIDEr-D reward with
   a greedy baseline and one multinomial sample per clip.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .decoder import BOS, EOS, PAD, UNK
from .encoder import KeywordEncoder, bce_loss, calibrate_batchnorm, topk_keywords
from .features import FeatureParams, LogMel, mixup_batch, spec_augment
from .metrics import CiderD
from .model import Captioner
from .numerics import Rng, Tensor, no_grad, ops

STAGE_LR = {
    "encoder_frozen": "lr_encoder_frozen",
    "encoder_finetune": "lr_encoder_finetune",
    "ce": "lr_ce",
    "rl": "lr_rl",
}

# large negative logit offset that removes BOS/PAD/UNK from the sampling policy
_BAN = -1e9


class TrainingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schedules, optimiser, clipping
# ---------------------------------------------------------------------------


def lr_at(epoch: int, stage: str, cfg: Config | None = None) -> float:
    """Initial stage rate decayed by ``lr_decay`` per completed epoch."""
    if stage not in STAGE_LR:
        raise TrainingError(f"unknown stage {stage!r}; expected one of {sorted(STAGE_LR)}")
    if epoch < 0:
        raise TrainingError("epoch must be >= 0")
    cfg = cfg or Config()
    return getattr(cfg, STAGE_LR[stage]) * cfg.lr_decay ** epoch


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    @classmethod
    def from_config(cls, params, cfg: Config) -> "Adam":
        return cls(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _smoothed_nll(logv: Tensor, targets: np.ndarray, eps: float, pad_id: int) -> Tensor:
    targets = np.asarray(targets, dtype=np.int64)
    if logv.shape[:-1] != targets.shape:
        raise TrainingError(f"distribution shape {logv.shape} does not match targets {targets.shape}")
    V = logv.shape[-1]
    if targets.min() < 0 or targets.max() >= V:
        raise TrainingError("target id out of range")
    mask = (targets != pad_id).astype(logv.dtype)
    n = mask.sum()
    if n == 0:
        raise TrainingError("every target position is PAD")
    per_step = ops.gather_last(logv, np.where(targets == pad_id, 0, targets)) * (1.0 - eps)
    if eps > 0.0:
        per_step = per_step + ops.sum(logv, axis=-1) * (eps / V)
    return -ops.sum(per_step * mask) / float(n)


def ce_loss_smoothed(v, targets, eps: float = 0.1, pad_id: int = PAD) -> Tensor:
    """Label-smoothed cross-entropy of step distributions ``v`` [..., T, V].

    q = (1 - eps) onehot(target) + eps / V; the loss is the mean over non-PAD
    steps of -sum_w q(w) log v(w).
    """
    v = v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))
    if not 0.0 <= eps < 1.0:
        raise TrainingError("eps must lie in [0, 1)")
    sums = v.data.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0, atol=1e-9) or (v.data < 0).any():
        raise TrainingError("rows of v must be probability distributions")
    if eps > 0.0 and (v.data == 0).any():
        # smoothing puts mass on every word; a zero probability gives infinite loss
        raise TrainingError("label smoothing needs strictly positive probabilities")
    if eps == 0.0:
        targets = np.asarray(targets, dtype=np.int64)
        safe = np.where(targets == pad_id, 0, targets)
        picked = ops.gather_last(v, safe)
        mask = targets != pad_id
        if not mask.any():
            raise TrainingError("every target position is PAD")
        # only the target entries enter the loss, so zeros elsewhere are harmless
        filled = Tensor(np.where(mask, 0.0, 1.0))
        ll = ops.log(picked + filled)
        return -ops.sum(ll * mask.astype(np.float64)) / float(mask.sum())
    return _smoothed_nll(ops.log(v), targets, eps, pad_id)


def ce_loss_from_logits(logits: Tensor, targets, eps: float = 0.1, pad_id: int = PAD) -> Tensor:
    """Same loss as :func:`ce_loss_smoothed` with v = softmax(logits), computed stably."""
    return _smoothed_nll(ops.log_softmax(logits, axis=-1), targets, eps, pad_id)


def scst_loss(logprob_sums: Tensor, r_sample, r_greedy) -> Tensor:
    """-(mean over clips) of (r_sample - r_greedy) * sum_t log v_t(sampled)."""
    adv = np.asarray(r_sample, dtype=np.float64) - np.asarray(r_greedy, dtype=np.float64)
    if adv.shape != logprob_sums.shape:
        raise TrainingError(f"reward shape {adv.shape} != log-prob shape {logprob_sums.shape}")
    return -ops.mean(logprob_sums * adv.astype(logprob_sums.dtype))


# ---------------------------------------------------------------------------
# logging
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    stage: str
    records: list = field(default_factory=list)

    def add(self, epoch: int, loss: float, lr: float, wall_time: float, **metrics) -> dict:
        if self.records and epoch <= self.records[-1]["epoch"]:
            raise TrainingError("epochs must be strictly increasing")
        rec = {"stage": self.stage, "epoch": int(epoch), "loss": float(loss), "lr": float(lr),
               "metrics": {k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                           for k, v in metrics.items()},
               "wall_time": float(wall_time)}
        self.records.append(rec)
        return rec

    def losses(self) -> list:
        return [r["loss"] for r in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        log = cls(recs[0]["stage"] if recs else "")
        log.records = recs
        return log


def _batches(n: int, size: int, rng: Rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


# ---------------------------------------------------------------------------
# stage 1: keyword encoder
# ---------------------------------------------------------------------------


def keyword_recall(y_hat, planted, k: int) -> float:
    """Mean over clips of |top-k ∩ planted| / min(k, |planted|)."""
    planted = np.asarray(planted) > 0
    top = topk_keywords(y_hat, k)
    scores = []
    for row, bits in zip(top, planted):
        need = min(k, int(bits.sum()))
        if need == 0:
            continue
        scores.append(bits[row].sum() / need)
    return float(np.mean(scores)) if scores else 1.0


def encoder_bce(encoder: KeywordEncoder, feats, labels, batch: int = 64) -> float:
    """Eval-mode BCE over a whole set, batch-size independent (running statistics)."""
    encoder.set_backbone_mode(False)
    total, n = 0.0, 0
    with no_grad():
        for i in range(0, len(feats), batch):
            xb = feats[i:i + batch]
            y_hat = encoder.predict_keywords(*encoder.hierarchy_heads(encoder.backbone_forward(xb)))
            total += bce_loss(labels[i:i + batch], y_hat).item() * len(xb)
            n += len(xb)
    return total / n


def encoder_predictions(encoder: KeywordEncoder, feats, batch: int = 64) -> np.ndarray:
    encoder.set_backbone_mode(False)
    out = []
    with no_grad():
        for i in range(0, len(feats), batch):
            blocks = encoder.backbone_forward(feats[i:i + batch])
            out.append(encoder.predict_keywords(*encoder.hierarchy_heads(blocks)).data)
    return np.concatenate(out, axis=0)


def _augment_batch(xb, yb, cfg: Config, rng: Rng, params: FeatureParams):
    xb = xb.copy()
    yb = yb.astype(np.float64).copy()
    if cfg.spec_augment_encoder:
        for i in range(len(xb)):
            xb[i] = spec_augment(LogMel(xb[i], params), rng, cfg.time_masks, None,
                                 cfg.freq_masks, min(cfg.max_freq_w, xb.shape[2])).frames
    if cfg.mixup_prob > 0 and len(xb) > 1 and rng.random() < cfg.mixup_prob:
        partner = rng.permutation(len(xb))
        lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
        xb, yb = mixup_batch(xb, yb, xb[partner], yb[partner], lam=lam)
    return xb, yb


def _encoder_epochs(encoder, feats, labels, cfg, rng, params, trainable, stage, epochs, log, epoch0,
                    backbone_training, on_epoch=None):
    opt = Adam.from_config(trainable, cfg)
    for p in encoder.keyword_parameters():
        p.requires_grad = False
    for p in trainable:
        p.requires_grad = True
    for e in range(epochs):
        t0 = time.perf_counter()
        lr = lr_at(e, stage, cfg)
        losses = []
        for idx in _batches(len(feats), cfg.batch_size, rng):
            xb, yb = _augment_batch(feats[idx], labels[idx], cfg, rng, params)
            encoder.set_backbone_mode(backbone_training)
            opt.zero_grad()
            blocks = encoder.backbone_forward(xb)
            loss = bce_loss(yb, encoder.predict_keywords(*encoder.hierarchy_heads(blocks)))
            loss.backward()
            clip_grad_norm(trainable, cfg.grad_clip)
            opt.step(lr)
            losses.append(loss.item())
        log.add(epoch0 + e, float(np.mean(losses)), lr, time.perf_counter() - t0, phase=stage)
        if on_epoch is not None:
            on_epoch(epoch0 + e)
    for p in encoder.keyword_parameters():
        p.requires_grad = True
    return epoch0 + epochs


def train_encoder(feats, labels, cfg: Config, seed: int | None = None, planted=None,
                  on_phase_end=None) -> tuple:
    """Two-phase keyword-encoder training. Returns (encoder, TrainLog).

    ``feats`` [n, T, n_mels], ``labels`` [n, N] multi-hot. ``on_phase_end`` is
    called with (phase name, encoder) after each phase (used by checks of the
    freeze contract). When ``planted`` labels are given the log also records
    top-K recall against them.
    """
    feats = np.asarray(feats, dtype=cfg.dtype)
    labels = np.asarray(labels, dtype=np.float64)
    if len(feats) == 0:
        raise TrainingError("empty training corpus")
    if labels.shape != (len(feats), cfg.n_keywords):
        raise TrainingError(f"labels must be [{len(feats)}, {cfg.n_keywords}], got {labels.shape}")
    seed = cfg.seed if seed is None else seed
    rng = Rng(seed).child("encoder-train")
    params = cfg.feature_params()
    encoder = KeywordEncoder(cfg, seed)
    calib = [feats[i:i + 64] for i in range(0, len(feats), 64)]
    calibrate_batchnorm(encoder, calib)
    log = TrainLog("encoder")
    heads = [p for p in encoder.keyword_parameters() if p not in set(encoder.backbone_parameters())]
    epoch = _encoder_epochs(encoder, feats, labels, cfg, rng, params, heads, "encoder_frozen",
                            cfg.epochs_encoder_frozen, log, 0, backbone_training=False)
    if on_phase_end is not None:
        on_phase_end("encoder_frozen", encoder)
    _encoder_epochs(encoder, feats, labels, cfg, rng, params, encoder.keyword_parameters(), "encoder_finetune",
                    cfg.epochs_encoder_finetune, log, epoch, backbone_training=True)
    calibrate_batchnorm(encoder, calib)
    encoder.set_backbone_mode(False)
    if on_phase_end is not None:
        on_phase_end("encoder_finetune", encoder)
    final = {"train_bce": encoder_bce(encoder, feats, labels)}
    if planted is not None:
        final["recall"] = keyword_recall(encoder_predictions(encoder, feats), planted, cfg.top_k)
    if log.records:
        log.records[-1]["metrics"].update(final)
    return encoder, log


# ---------------------------------------------------------------------------
# stage 2: cross-entropy captioner training
# ---------------------------------------------------------------------------


@dataclass
class CaptionData:
    """Frozen-encoder outputs plus training targets, aligned by example."""

    seq: np.ndarray          # [n_clips, L, Ch] last-block sequence
    keyword_ids: np.ndarray  # [n_clips, K] vocabulary ids of predicted keywords
    example_clip: np.ndarray  # [n_examples] clip index of each caption
    targets: np.ndarray      # [n_examples, T] with EOS and PAD


def prepare_caption_data(captioner: Captioner, feats, targets_per_clip, batch: int = 64) -> CaptionData:
    feats = np.asarray(feats, dtype=captioner.cfg.dtype)
    seqs, kws = [], []
    for i in range(0, len(feats), batch):
        s, y = captioner.encoder_features(feats[i:i + batch])
        seqs.append(s)
        kws.append(captioner.keyword_ids(y))
    clip_idx, rows = [], []
    for c, tgt in enumerate(targets_per_clip):
        for row in np.atleast_2d(tgt):
            clip_idx.append(c)
            rows.append(row)
    width = max(len(r) for r in rows)
    targets = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        targets[i, :len(r)] = r
    return CaptionData(np.concatenate(seqs), np.concatenate(kws), np.asarray(clip_idx, dtype=np.int64), targets)


def _trim(targets: np.ndarray) -> np.ndarray:
    keep = np.flatnonzero((targets != PAD).any(axis=0))
    return targets[:, :keep[-1] + 1] if keep.size else targets


def teacher_forced_accuracy(captioner: Captioner, data: CaptionData, batch: int = 64) -> float:
    """Fraction of non-PAD steps whose argmax equals the gold token under teacher forcing."""
    was = captioner.training
    captioner.eval()
    hit = total = 0
    try:
        with no_grad():
            for i in range(0, len(data.targets), batch):
                sl = slice(i, i + batch)
                clips = data.example_clip[sl]
                tgt = _trim(data.targets[sl])
                enc = captioner.encode(data.seq[clips], data.keyword_ids[clips])
                logits, _ = captioner.decoder.forward_sequence(enc, tgt)
                pred = logits.data.argmax(axis=-1)
                mask = tgt != PAD
                hit += int(((pred == tgt) & mask).sum())
                total += int(mask.sum())
    finally:
        captioner.train(was)
    return hit / total


def train_captioner_ce(captioner: Captioner, data: CaptionData, cfg: Config, seed: int | None = None,
                       epochs: int | None = None, eval_every: int = 0, on_step=None, feats=None) -> TrainLog:
    """Cross-entropy training of the decoder and acoustic projection.

    The keyword encoder (backbone, heads, classifier) is frozen: it receives no
    gradient and its running statistics are not updated. ``on_step`` is called
    after every optimiser step with the captioner (freeze checks). With
    ``cfg.spec_augment_ce`` and ``feats`` given, every batch re-runs the frozen
    encoder on SpecAugmented features.
    """
    augment = cfg.spec_augment_ce and feats is not None
    if augment:
        feats = np.asarray(feats, dtype=cfg.dtype)
        params = cfg.feature_params()
    seed = cfg.seed if seed is None else seed
    rng = Rng(seed).child("ce-train")
    captioner.decoder.dropout.rng = rng.child("dropout")
    for p in captioner.encoder.keyword_parameters():
        p.requires_grad = False
    trainable = captioner.decoder_parameters()
    opt = Adam.from_config(trainable, cfg)
    log = TrainLog("ce")
    epochs = cfg.epochs_ce if epochs is None else epochs
    for e in range(epochs):
        t0 = time.perf_counter()
        lr = lr_at(e, "ce", cfg)
        tf = max(0.0, cfg.teacher_forcing_prob - cfg.teacher_forcing_decay * e)
        captioner.train()
        losses = []
        for idx in _batches(len(data.targets), cfg.batch_size, rng):
            clips = data.example_clip[idx]
            tgt = _trim(data.targets[idx])
            opt.zero_grad()
            if augment:
                xb = np.stack([spec_augment(LogMel(feats[c], params), rng, cfg.time_masks, None, cfg.freq_masks,
                                            min(cfg.max_freq_w, feats.shape[2])).frames for c in clips])
                seq, y_hat = captioner.encoder_features(xb)
                kw = captioner.keyword_ids(y_hat)
            else:
                seq, kw = data.seq[clips], data.keyword_ids[clips]
            captioner.train()
            enc = captioner.encode(seq, kw)
            logits, _ = captioner.decoder.forward_sequence(enc, tgt, tf, rng)
            loss = ce_loss_from_logits(logits, tgt, cfg.label_smoothing)
            loss.backward()
            clip_grad_norm(trainable, cfg.grad_clip)
            opt.step(lr)
            losses.append(loss.item())
            if on_step is not None:
                on_step(captioner)
        metrics = {}
        if eval_every and ((e + 1) % eval_every == 0 or e + 1 == epochs):
            metrics["tf_accuracy"] = teacher_forced_accuracy(captioner, data)
        log.add(e, float(np.mean(losses)), lr, time.perf_counter() - t0, teacher_forcing=tf, **metrics)
    captioner.eval()
    for p in captioner.encoder.keyword_parameters():
        p.requires_grad = True
    return log


# ---------------------------------------------------------------------------
# stage 3: self-critical sequence training
# ---------------------------------------------------------------------------


def _ban_mask(vocab_size: int) -> np.ndarray:
    m = np.zeros(vocab_size)
    m[[BOS, PAD, UNK]] = _BAN
    return m


def greedy_batch(captioner: Captioner, enc, max_len: int) -> np.ndarray:
    """Batched greedy decoding (BOS/PAD/UNK excluded). Returns ids [B, <=max_len], PAD after EOS."""
    dec = captioner.decoder
    ban = _ban_mask(dec.vocab_size)
    out = np.full((enc.batch, max_len), PAD, dtype=np.int64)
    with no_grad():
        state = dec.init_state(enc)
        alive = np.ones(enc.batch, dtype=bool)
        for t in range(max_len):
            o, state = dec.step(state, enc)
            w = (o.logits.data + ban).argmax(axis=-1)
            w = np.where(alive, w, PAD)
            out[:, t] = w
            alive &= w != EOS
            if not alive.any():
                break
            state = dec.append(state, np.where(alive, w, EOS))
    return out


def sample_batch(captioner: Captioner, enc, max_len: int, rng: Rng):
    """Multinomial sampling with gradient tracking.

    Returns (ids [B, max_len] with PAD after EOS, Tensor [B] of summed
    log-probabilities of the sampled tokens).
    """
    dec = captioner.decoder
    ban = _ban_mask(dec.vocab_size)
    state = dec.init_state(enc)
    B = enc.batch
    out = np.full((B, max_len), PAD, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    total = None
    for t in range(max_len):
        o, state = dec.step(state, enc)
        logp = ops.log_softmax(o.logits + ban, axis=-1)
        cdf = np.cumsum(np.exp(logp.data), axis=-1)
        u = rng.random(B) * cdf[:, -1]
        w = np.minimum((cdf < u[:, None]).sum(axis=-1), dec.vocab_size - 1)
        w = np.where(alive, w, PAD)
        out[:, t] = w
        picked = ops.gather_last(logp, np.where(alive, w, EOS)) * alive.astype(logp.dtype)
        total = picked if total is None else total + picked
        alive &= w != EOS
        if not alive.any():
            break
        state = dec.append(state, np.where(alive, w, EOS))
    return out, total


def _words(vocab, ids) -> list:
    return [vocab.decode(row) for row in ids]


def scst_step(captioner: Captioner, enc, references, max_len: int, rng: Rng, reward_fn):
    """One SCST loss evaluation. Returns (loss Tensor, sampled ids, r_sample, r_greedy)."""
    captioner.eval()
    greedy = greedy_batch(captioner, enc, max_len)
    sampled, logp_sum = sample_batch(captioner, enc, max_len, rng)
    vocab = captioner.vocab
    r_s = np.asarray(reward_fn(_words(vocab, sampled), references), dtype=np.float64)
    r_g = np.asarray(reward_fn(_words(vocab, greedy), references), dtype=np.float64)
    return scst_loss(logp_sum, r_s, r_g), sampled, r_s, r_g


def cider_reward(scorer: CiderD):
    def reward(hyps, references):
        return [scorer.score(h, refs) for h, refs in zip(hyps, references)]

    return reward


def greedy_cider(captioner: Captioner, data_seq, data_kw, references, max_len: int,
                 scorer: CiderD | None = None, batch: int = 64) -> float:
    """Mean greedy CIDEr-D (raw, 0..10) with document frequencies from ``references``."""
    scorer = scorer or CiderD(references)
    captioner.eval()
    scores = []
    for i in range(0, len(data_seq), batch):
        with no_grad():
            enc = captioner.encode(data_seq[i:i + batch], data_kw[i:i + batch])
        hyps = _words(captioner.vocab, greedy_batch(captioner, enc, max_len))
        scores += [scorer.score(h, r) for h, r in zip(hyps, references[i:i + batch])]
    return float(np.mean(scores))


def scst_finetune(captioner: Captioner, seq, keyword_ids, references, cfg: Config, seed: int | None = None,
                  epochs: int | None = None, reward_fn=None, feats=None) -> TrainLog:
    """Self-critical fine-tuning on per-clip references (token lists).

    ``seq``/``keyword_ids`` are the frozen-encoder outputs per clip. When
    ``cfg.freeze_encoder_rl`` is off, ``feats`` must be given and the encoder
    backbone, heads and classifier are updated too.
    """
    references = [list(r) for r in references]
    if any(len(r) == 0 for r in references):
        raise TrainingError("every clip needs at least one reference caption")
    seed = cfg.seed if seed is None else seed
    rng = Rng(seed).child("rl-train")
    scorer = CiderD(references)
    reward_fn = reward_fn or cider_reward(scorer)
    trainable = captioner.decoder_parameters()
    if not cfg.freeze_encoder_rl:
        if feats is None:
            raise TrainingError("unfreezing the encoder for RL needs the input features")
        trainable = captioner.encoder.keyword_parameters() + trainable
    else:
        for p in captioner.encoder.keyword_parameters():
            p.requires_grad = False
    opt = Adam.from_config(trainable, cfg)
    log = TrainLog("rl")
    epochs = cfg.epochs_rl if epochs is None else epochs
    for e in range(epochs):
        t0 = time.perf_counter()
        lr = lr_at(e, "rl", cfg)
        losses, rewards = [], []
        for idx in _batches(len(seq), cfg.batch_size, rng):
            opt.zero_grad()
            if cfg.freeze_encoder_rl:
                s = seq[idx]
            else:
                captioner.encoder.set_backbone_mode(False)
                blocks = captioner.encoder.backbone_forward(np.asarray(feats, dtype=cfg.dtype)[idx])
                s = ops.transpose(ops.mean(blocks[-1], axis=3), (0, 2, 1))
            X = captioner.encoder.acoustic_out(s if isinstance(s, Tensor) else Tensor(s))
            enc = captioner.decoder.encode(X, keyword_ids[idx])
            loss, _, r_s, _ = scst_step(captioner, enc, [references[i] for i in idx], cfg.max_len, rng, reward_fn)
            loss.backward()
            clip_grad_norm(trainable, cfg.grad_clip)
            opt.step(lr)
            losses.append(loss.item())
            rewards.append(float(np.mean(r_s)))
        log.add(e, float(np.mean(losses)), lr, time.perf_counter() - t0, mean_sample_reward=float(np.mean(rewards)))
    for p in captioner.encoder.keyword_parameters():
        p.requires_grad = True
    captioner.eval()
    return log
