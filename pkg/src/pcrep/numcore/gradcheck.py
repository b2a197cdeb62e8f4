"""Finite-difference verification of tape gradients.

Runs entirely in float64: the loss builder is evaluated once on a tape for
analytic gradients, then on plain arrays per coordinate for the numeric
estimate. Central differences are the default; the forward scheme halves the
evaluation count for large parameter sets at the cost of O(h) truncation,
which is still orders below any useful tolerance on piecewise-linear losses.
"""

from __future__ import annotations

import numpy as np

from .engine import NonFiniteError, Tape, Tensor, reverse_gradients


def finite_diff_check(f, params: list, h: float = 1e-5,
                      scheme: str = "central") -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    f takes a list of parameters (Tensors or ndarrays, same structure) and
    returns a scalar. Inputs are copied to float64 before checking.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if scheme not in ("central", "forward"):
        raise ValueError(f"unknown scheme {scheme!r}")
    base = [np.array(p, dtype=np.float64) for p in params]

    tape = Tape(np.float64)
    lifted = [tape.parameter(p, name=f"p{i}") for i, p in enumerate(base)]
    loss = f(lifted)
    if not isinstance(loss, Tensor):
        raise TypeError("loss builder must return a tape node when given Tensors")
    grads = reverse_gradients(tape, loss)
    analytic = [grads[t] for t in lifted]

    f_base = float(f(base)) if scheme == "forward" else 0.0

    worst = 0.0
    for i, arr in enumerate(base):
        flat = arr.reshape(-1)
        gflat = analytic[i].reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            f_plus = float(f(base))
            if scheme == "central":
                flat[j] = keep - h
                f_minus = float(f(base))
                fd = (f_plus - f_minus) / (2.0 * h)
            else:
                f_minus = f_base
                fd = (f_plus - f_base) / h
            flat[j] = keep
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError("loss became non-finite during perturbation")
            err = abs(gflat[j] - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
