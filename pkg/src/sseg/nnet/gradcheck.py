"""Central finite-difference verification of recorded gradients."""
from __future__ import annotations

import numpy as np

from .autodiff import backward

FD_STEP = 1e-5
FD_REL_TOL = 1e-4


def finite_difference_check(build_fn, tensors, probes: int = 20, step: float = FD_STEP, seed: int = 0) -> float:
    """Max relative error between recorded and central-difference gradients.

    `build_fn` must rebuild the scalar loss graph from scratch on every call
    (it reads the current .data of `tensors`). Probes sample random
    coordinates of the given tensors.
    """
    for t in tensors:
        t.zero_grad()
    out = build_fn()
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t in tensors:
        t.zero_grad()

    rng = np.random.RandomState(seed)
    worst = 0.0
    for _ in range(probes):
        ti = rng.randint(len(tensors))
        t = tensors[ti]
        flat = rng.randint(t.data.size)
        idx = np.unravel_index(flat, t.data.shape)
        orig = t.data[idx]
        t.data[idx] = orig + step
        f_plus = build_fn().item()
        t.data[idx] = orig - step
        f_minus = build_fn().item()
        t.data[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        ana = float(analytic[ti][idx])
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-3)
        worst = max(worst, rel)
    return worst
