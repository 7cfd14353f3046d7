"""Keyword encoder: conv backbone, feature-hierarchy heads, keyword classifier.

The backbone stacks ``conv3x3 -> batch norm -> ReLU -> avg-pool`` blocks. The
outputs of the third, fourth and last block are globally average-pooled and
projected by three separate linear heads; their concatenation goes through one
linear layer and a sigmoid to give per-keyword probabilities. The last block,
mean-pooled over frequency and projected to ``c1`` channels, is the acoustic
sequence handed to the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .numerics import BatchNorm2d, Conv2d, Linear, Module, Tensor, ops

BCE_EPS = 1e-7


@dataclass
class EncoderOutput:
    y_hat: Tensor          # [B, N]
    f1: Tensor             # [B, head_dim]
    f2: Tensor
    f3: Tensor
    X: Tensor              # [B, L, c1]


class KeywordEncoder(Module):
    def __init__(self, cfg: Config, seed: int, name: str = "encoder"):
        super().__init__()
        dtype = cfg.dtype
        chans = cfg.channel_list()
        self.pools = cfg.pool_list()
        self.n_mels = cfg.n_mels
        self.n_blocks = len(chans)
        self.taps = (2, 3, len(chans) - 1)
        c_in = 1
        self._convs, self._norms = [], []
        for i, c in enumerate(chans):
            conv = Conv2d(c_in, c, f"{name}.block{i}.conv", seed, dtype=dtype)
            norm = BatchNorm2d(c, f"{name}.block{i}.bn", dtype=dtype)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", norm)
            self._convs.append(conv)
            self._norms.append(norm)
            c_in = c
        self.head1 = Linear(chans[self.taps[0]], cfg.head_dim, f"{name}.head1", seed, dtype=dtype)
        self.head2 = Linear(chans[self.taps[1]], cfg.head_dim, f"{name}.head2", seed, dtype=dtype)
        self.head3 = Linear(chans[self.taps[2]], cfg.head_dim, f"{name}.head3", seed, dtype=dtype)
        self.classifier = Linear(3 * cfg.head_dim, cfg.n_keywords, f"{name}.classifier", seed, dtype=dtype)
        self.acoustic_out = Linear(chans[-1], cfg.c1, f"{name}.acoustic_out", seed, dtype=dtype)

    # -- parameter groups -----------------------------------------------------
    def backbone_modules(self) -> list:
        return self._convs + self._norms

    def backbone_parameters(self) -> list:
        return [p for m in self.backbone_modules() for p in m.parameters()]

    def keyword_parameters(self) -> list:
        """Everything trained by the keyword loss (backbone, heads, classifier)."""
        heads = [self.head1, self.head2, self.head3, self.classifier]
        return self.backbone_parameters() + [p for m in heads for p in m.parameters()]

    def acoustic_parameters(self) -> list:
        return self.acoustic_out.parameters()

    def set_backbone_mode(self, training: bool) -> None:
        for m in self.backbone_modules():
            m.train(training)

    # -- forward pieces -------------------------------------------------------
    def backbone_forward(self, x) -> list:
        """x: [B, T, n_mels] or [B, 1, T, n_mels] log-mel batch -> per-block maps."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.conv0.weight.dtype))
        if x.ndim == 3:
            x = ops.reshape(x, (x.shape[0], 1, x.shape[1], x.shape[2]))
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[3] != self.n_mels:
            raise ValueError(f"expected [B, 1, T, {self.n_mels}] input, got {x.shape}")
        outs = []
        h = x
        for conv, norm, (ph, pw) in zip(self._convs, self._norms, self.pools):
            h = ops.relu(norm(conv(h)))
            if ph > 1 or pw > 1:
                h = ops.avg_pool2d(h, ph, pw)
            outs.append(h)
        return outs

    def hierarchy_heads(self, block_outputs) -> tuple:
        if len(block_outputs) <= max(self.taps):
            raise ValueError(f"need {max(self.taps) + 1} block outputs, got {len(block_outputs)}")
        heads = (self.head1, self.head2, self.head3)
        return tuple(
            head(ops.global_avg_pool(block_outputs[i], (2, 3))) for head, i in zip(heads, self.taps)
        )

    def keyword_logits(self, f1, f2, f3) -> Tensor:
        return self.classifier(ops.concat([f1, f2, f3], axis=-1))

    def predict_keywords(self, f1, f2, f3) -> Tensor:
        return ops.sigmoid(self.keyword_logits(f1, f2, f3))

    def acoustic_sequence(self, last_block: Tensor) -> Tensor:
        """[B, C, T', F'] -> mean over frequency -> [B, T', C] -> linear -> [B, T', c1]."""
        seq = ops.transpose(ops.mean(last_block, axis=3), (0, 2, 1))
        return self.acoustic_out(seq)

    def __call__(self, x) -> EncoderOutput:
        blocks = self.backbone_forward(x)
        f1, f2, f3 = self.hierarchy_heads(blocks)
        return EncoderOutput(self.predict_keywords(f1, f2, f3), f1, f2, f3, self.acoustic_sequence(blocks[-1]))


def bce_loss(y, y_hat: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Two-sided binary cross-entropy averaged over keywords (and batch)."""
    y = np.asarray(y, dtype=y_hat.dtype)
    if y.shape != y_hat.shape:
        raise ValueError(f"target shape {y.shape} != prediction shape {y_hat.shape}")
    if (y < 0).any() or (y > 1).any():
        raise ValueError("targets must lie in [0, 1]")
    p = ops.clip(y_hat, eps, 1.0 - eps)
    ll = ops.log(p) * y + ops.log(1.0 - p) * (1.0 - y)
    return -ops.mean(ll)


def topk_keywords(y_hat, k: int) -> np.ndarray:
    """Indices of the k largest probabilities, descending; ties by ascending index."""
    y = np.asarray(y_hat.data if isinstance(y_hat, Tensor) else y_hat)
    n = y.shape[-1]
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available keywords")
    order = np.argsort(-y, axis=-1, kind="stable")
    return order[..., :k]


def calibrate_batchnorm(encoder: KeywordEncoder, batches) -> None:
    """Set running statistics to exact population moments, block by block.

    Block ``i`` is calibrated on inputs produced by blocks ``< i`` in eval mode
    with their already-calibrated statistics.
    """
    from .numerics import no_grad

    batches = [np.asarray(b, dtype=encoder.conv0.weight.dtype) for b in batches]
    if not batches:
        return
    encoder.set_backbone_mode(False)
    with no_grad():
        for i, norm in enumerate(encoder._norms):
            total = sq = None
            count = 0
            for xb in batches:
                h = Tensor(xb[:, None] if xb.ndim == 3 else xb)
                for j in range(i):
                    h = ops.relu(encoder._norms[j](encoder._convs[j](h)))
                    ph, pw = encoder.pools[j]
                    if ph > 1 or pw > 1:
                        h = ops.avg_pool2d(h, ph, pw)
                d = encoder._convs[i](h).data
                s1, s2 = d.sum(axis=(0, 2, 3)), (d * d).sum(axis=(0, 2, 3))
                total = s1 if total is None else total + s1
                sq = s2 if sq is None else sq + s2
                count += d.shape[0] * d.shape[2] * d.shape[3]
            mean = total / count
            norm.running_mean[...] = mean
            norm.running_var[...] = np.maximum(sq / count - mean * mean, 0.0)
