from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Tensor


RESOLUTION_ULPS = 4
PLATEAU_RTOL = 1e-7


class NonDeterministicError(RuntimeError):
    pass


def grad_check(f, params, eps=(1e-3, 1e-4, 1e-5, 1e-6), max_coords: int = 12, rng: Rng | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params``. Up to ``max_coords`` coordinates per parameter are sampled
    (all of them when the parameter is smaller). The error per coordinate is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.

    ``eps`` may be a single step or a sequence of decreasing steps. With a
    sequence, central differences are taken step by step until two
    consecutive estimates agree to ``PLATEAU_RTOL`` beyond their rounding
    floors; failing that, the pair with the smallest disagreement plus
    rounding floor is located and its larger step is used. Large steps are
    thereby only trusted where small ones drown in cancellation noise, and
    small steps where large ones straddle a kink (a ReLU or max-pool tie).
    """
    steps = (eps,) if np.isscalar(eps) else tuple(eps)
    params = list(params)
    rng = rng or Rng(0)

    def value() -> float:
        out = f()
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ValueError("grad_check needs a scalar Tensor objective")
        return float(out.data.reshape(()))

    for p in params:
        p.grad = np.zeros_like(p.data)
    out = f()
    base = float(out.data.reshape(()))
    if value() != base:
        raise NonDeterministicError("objective changed between identical evaluations")
    if out.requires_grad:
        out.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
        for k in coords:
            orig = flat[k]
            est, noise = [], []
            for h in steps:
                flat[k] = orig + h
                up = value()
                flat[k] = orig - h
                down = value()
                flat[k] = orig
                diff = up - down
                # a difference of a few ulps is below what the quotient can resolve
                floor = RESOLUTION_ULPS * np.spacing(max(abs(up), abs(down)))
                if abs(diff) <= floor:
                    diff = 0.0
                est.append(diff / (2.0 * h))
                noise.append(floor / (2.0 * h))
                if len(est) >= 2 and _score(est, noise, len(est) - 2) <= PLATEAU_RTOL * abs(est[-2]):
                    break
            g_fd = _most_stable(est, noise)
            a = float(g_ad.reshape(-1)[k])
            err = abs(a - g_fd) / max(1e-8, abs(a) + abs(g_fd))
            worst = max(worst, err)
    return worst


def _score(est: list, noise: list, i: int) -> float:
    """Error bound for step ``i``: disagreement with the next step plus both rounding floors."""
    return abs(est[i] - est[i + 1]) + noise[i] + noise[i + 1]


def _most_stable(est: list, noise: list) -> float:
    if len(est) == 1:
        return est[0]
    i = min(range(len(est) - 1), key=lambda j: _score(est, noise, j))
    # agreement vouches for the truncation error; the larger step has less rounding noise
    return est[i]
