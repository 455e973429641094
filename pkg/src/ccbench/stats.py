"""Significance testing and the hyperparameter selection criterion."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats as sps


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """Unequal-variance t-test; returns (t, dof, two-sided p).

    Degenerate case (both sample variances zero): p = 1 when the means are
    equal and p = 0 otherwise, with t = 0 or +-inf and dof = n_a + n_b - 2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        dof = float(len(a) + len(b) - 2)
        if ma == mb:
            return 0.0, dof, 1.0
        return math.copysign(math.inf, ma - mb), dof, 0.0
    t = (ma - mb) / math.sqrt(se2)
    dof = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = float(min(1.0, 2.0 * sps.t.sf(abs(t), dof)))
    return float(t), float(dof), p


def selection_score(performances: Sequence[float]) -> float:
    """mean - std over per-seed performances (population std)."""
    x = np.asarray(performances, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no performances to score")
    return float(x.mean() - x.std())


def best_index(scores: Sequence[float | None]) -> int:
    """Argmax over the finite scores; ties go to the lowest index."""
    best, best_score = -1, -math.inf
    for i, s in enumerate(scores):
        if s is not None and np.isfinite(s) and s > best_score:
            best, best_score = i, s
    if best < 0:
        raise ValueError("no finite score")
    return best


def bold_set(samples: dict[str, Sequence[float]], alpha: float = 0.05) -> tuple[str, set[str]]:
    """Best entry by mean plus every entry not significantly different from it.

    Entries with a single value cannot be tested and are bold only if best.
    Ties in the mean go to the first key.
    """
    if not samples:
        raise ValueError("no entries")
    keys = list(samples)
    means = [float(np.mean(samples[k])) for k in keys]
    best = keys[best_index(means)]
    bold = {best}
    for k in keys:
        if k == best or len(samples[k]) < 2 or len(samples[best]) < 2:
            continue
        if welch_t_test(samples[best], samples[k])[2] >= alpha:
            bold.add(k)
    return best, bold
