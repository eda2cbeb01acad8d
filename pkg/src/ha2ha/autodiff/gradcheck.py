"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .params import ParamStore
from .tensor import Tensor, set_branch_log

MAX_CHECK_PARAMS = 10_000


@dataclass(frozen=True)
class GradCheckReport:
    max_error: float
    n_checked: int
    n_kink_skipped: int


def _evaluate(loss_fn: Callable[[], Tensor], track: bool):
    log: Optional[list] = [] if track else None
    prev = set_branch_log(log)
    try:
        value = loss_fn().item()
    finally:
        set_branch_log(prev)
    return value, log


def _same_branches(ref: list, other: list) -> bool:
    """True when every nonsmooth op chose the same branch. Sign arrays with a
    zero reference entry (|x| at x = 0, symmetric about the kink) are ignored
    at that entry."""
    if len(ref) != len(other):
        return False
    for r, o in zip(ref, other):
        if r.shape != o.shape:
            return False
        if r.dtype.kind == "f":
            if np.any((r != o) & (r != 0)):
                return False
        elif np.any(r != o):
            return False
    return True


def gradient_check_report(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    step: float = 1e-3,
    n_samples: Optional[int] = 200,
    seed: int = 0,
    skip_kinks: bool = True,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    Parameters
    ----------
    loss_fn
        Zero-argument callable that rebuilds the scalar loss from ``params``.
    params
        Store whose entries are perturbed in place (restored afterwards). Use
        float64 parameters for meaningful results. Buffers are restored after
        every evaluation.
    step
        Central-difference step.
    n_samples
        Number of scalar parameters to check, drawn in random order; ``None``
        checks every entry.
    skip_kinks
        When set, a sample whose +step or -step evaluation switches the branch
        of any nonsmooth op (|x| sign, leaky ReLU side, max-pool winner) is
        discarded, because a difference quotient across a kink does not
        estimate the derivative. Further parameters are drawn in its place.

    Returns
    -------
    GradCheckReport
        Max of |g - g_fd| / max(|g|, |g_fd|, 1e-8) over the checked entries,
        plus the number of checked and discarded samples.
    """
    total = params.count()
    if total > MAX_CHECK_PARAMS:
        raise ValueError(f"gradient_check is limited to {MAX_CHECK_PARAMS} parameters, got {total}")
    saved = {k: v.copy() for k, v in params.buffers.items()}

    def restore_buffers():
        for k, v in saved.items():
            params.buffers[k] = v.copy()

    params.zero_grad()
    prev = set_branch_log(None)
    try:
        loss_fn().backward()
    finally:
        set_branch_log(prev)
    analytic = [g.ravel().copy() for g in params.grads()]
    params.zero_grad()
    restore_buffers()
    _, ref_log = _evaluate(loss_fn, skip_kinks)
    restore_buffers()

    tensors = list(params.params.values())
    index = [(pi, j) for pi, t in enumerate(tensors) for j in range(t.data.size)]
    order = np.random.default_rng(seed).permutation(len(index))
    target = len(index) if n_samples is None else min(n_samples, len(index))
    worst, checked, skipped = 0.0, 0, 0
    for k in order:
        if checked >= target:
            break
        pi, j = index[k]
        flat = tensors[pi].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        up, up_log = _evaluate(loss_fn, skip_kinks)
        restore_buffers()
        flat[j] = orig - step
        down, down_log = _evaluate(loss_fn, skip_kinks)
        restore_buffers()
        flat[j] = orig
        if skip_kinks and not (_same_branches(ref_log, up_log) and _same_branches(ref_log, down_log)):
            skipped += 1
            continue
        fd = (up - down) / (2 * step)
        g = float(analytic[pi][j])
        worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-8))
        checked += 1
    return GradCheckReport(worst, checked, skipped)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    step: float = 1e-3,
    n_samples: Optional[int] = 200,
    seed: int = 0,
    skip_kinks: bool = True,
) -> float:
    """Max relative error of the reverse-mode gradient; see
    ``gradient_check_report``."""
    return gradient_check_report(loss_fn, params, step, n_samples, seed, skip_kinks).max_error
