"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``MAAC_DISABLE_NUMBA=1`` before import to force the numpy path. Both paths
compute the same quantities; the numba loops are exact re-orderings of the
numpy reductions, so results agree to rounding (not bit-for-bit).
"""

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("MAAC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by MAAC_DISABLE_NUMBA")
    from numba import njit

    USING_NUMBA = True
except ImportError as exc:  # pragma: no cover - exercised via env flag
    logger.debug("numba kernels unavailable: %s", exc)
    USING_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        return wrap if not args or not callable(args[0]) else args[0]


# ---------------------------------------------------------------------------
# 2-D convolution, stride 1, symmetric zero padding
# ---------------------------------------------------------------------------


def conv2d_forward_numpy(x, w, b, pad):
    """x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co] -> [B,Co,H+2p-kh+1,W+2p-kw+1]."""
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = xp.shape[2] - kh + 1
    wo = xp.shape[3] - kw + 1
    out = np.zeros((x.shape[0], w.shape[0], ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("bchw,oc->bohw", xp[:, :, i:i + ho, j:j + wo], w[:, :, i, j])
    out += b[None, :, None, None]
    return out


def conv2d_backward_numpy(g, x, w, pad):
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = g.shape[2], g.shape[3]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i:i + ho, j:j + wo]
            gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, win)
            gxp[:, :, i:i + ho, j:j + wo] += np.einsum("bohw,oc->bchw", g, w[:, :, i, j])
    gb = g.sum(axis=(0, 2, 3))
    h, wd = x.shape[2], x.shape[3]
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(gx), gw, gb


@njit(cache=True)
def _conv2d_forward_nb(x, w, b, pad):
    bsz, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = h + 2 * pad - kh + 1
    wo = wd + 2 * pad - kw + 1
    out = np.empty((bsz, co, ho, wo), dtype=x.dtype)
    for n in range(bsz):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    acc = b[o]
                    for c in range(ci):
                        for i in range(kh):
                            rr = r + i - pad
                            if rr < 0 or rr >= h:
                                continue
                            for j in range(kw):
                                ss = s + j - pad
                                if ss < 0 or ss >= wd:
                                    continue
                                acc += x[n, c, rr, ss] * w[o, c, i, j]
                    out[n, o, r, s] = acc
    return out


@njit(cache=True)
def _conv2d_backward_nb(g, x, w, pad):
    bsz, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(co, dtype=x.dtype)
    for n in range(bsz):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    go = g[n, o, r, s]
                    if go == 0.0:
                        continue
                    gb[o] += go
                    for c in range(ci):
                        for i in range(kh):
                            rr = r + i - pad
                            if rr < 0 or rr >= h:
                                continue
                            for j in range(kw):
                                ss = s + j - pad
                                if ss < 0 or ss >= wd:
                                    continue
                                gw[o, c, i, j] += go * x[n, c, rr, ss]
                                gx[n, c, rr, ss] += go * w[o, c, i, j]
    return gx, gw, gb


def conv2d_forward_numba(x, w, b, pad):
    return _conv2d_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b), pad)


def conv2d_backward_numba(g, x, w, pad):
    return _conv2d_backward_nb(np.ascontiguousarray(g), np.ascontiguousarray(x), np.ascontiguousarray(w), pad)


# ---------------------------------------------------------------------------
# Longest common subsequence length over integer-coded token sequences
# ---------------------------------------------------------------------------


def lcs_length_numpy(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return 0
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for x in a:
        match = np.concatenate(([0], np.where(b == x, prev[:-1] + 1, 0)))
        cur = np.maximum(match, prev)
        # running max along the row resolves the left-neighbour dependency
        cur = np.maximum.accumulate(cur)
        prev = cur
    return int(prev[-1])


@njit(cache=True)
def _lcs_length_nb(a, b):
    n, m = len(a), len(b)
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        prev, cur = cur, prev
    return prev[m]


def lcs_length_numba(a, b):
    return int(_lcs_length_nb(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))


if USING_NUMBA:
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    lcs_length = lcs_length_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    lcs_length = lcs_length_numpy
