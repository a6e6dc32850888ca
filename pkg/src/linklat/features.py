"""Candidate feature construction and greedy forward selection.

Candidate names follow a small grammar over the base queue features
(``rho``, ``pi0``, ``piK``, ``lambda_e``, ``rho_e``, ``L``, ``Se``)::

    x            the base feature itself
    x^2, x^3     powers
    log1p(x)     log(1 + x)
    exp(x)       exp(min(x, EXP_CLAMP))
    sqrt(x)      square root
    x*y          product of two base features (declaration order)

:func:`compute_feature` evaluates any such name from a mapping of base
columns, which is how a fitted linear model rebuilds its inputs.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .queueing import FeatureBatch

__all__ = [
    "BASE_FEATURES",
    "DEFAULT_FEATURES",
    "FeatureMatrix",
    "build_candidate_features",
    "compute_feature",
    "forward_stepwise",
    "StepwiseResult",
]

BASE_FEATURES = ("rho", "pi0", "piK", "lambda_e", "rho_e", "L", "Se")
# the four inputs retained for the linear model
DEFAULT_FEATURES = ("pi0", "L", "rho_e", "Se")
EXP_CLAMP = 50.0

_UNARY = {
    "^2": lambda v: v ** 2,
    "^3": lambda v: v ** 3,
    "log1p": np.log1p,
    "exp": lambda v: np.exp(np.minimum(v, EXP_CLAMP)),
    "sqrt": np.sqrt,
}
_CALL = re.compile(r"^(log1p|exp|sqrt)\((\w+)\)$")
_POW = re.compile(r"^(\w+)\^([23])$")


def _as_columns(base) -> Mapping[str, np.ndarray]:
    if isinstance(base, FeatureBatch):
        return base.as_dict()
    if hasattr(base, "as_dict"):
        return {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in base.as_dict().items()}
    return {k: np.asarray(v, dtype=float) for k, v in base.items()}


def compute_feature(name: str, base) -> np.ndarray:
    """Evaluate candidate ``name`` on base feature columns."""
    cols = _as_columns(base)
    if name in cols:
        return np.asarray(cols[name], dtype=float)
    m = _POW.match(name)
    if m and m.group(1) in cols:
        return _UNARY["^" + m.group(2)](cols[m.group(1)])
    m = _CALL.match(name)
    if m and m.group(2) in cols:
        with np.errstate(invalid="ignore", divide="ignore"):
            return _UNARY[m.group(1)](cols[m.group(2)])
    if "*" in name:
        left, right = name.split("*", 1)
        if left in cols and right in cols:
            return cols[left] * cols[right]
    raise KeyError(f"cannot evaluate feature {name!r} from columns {sorted(cols)}")


@dataclass
class FeatureMatrix:
    names: list
    values: np.ndarray  # (n_samples, n_features)
    dropped: list = field(default_factory=list)  # (name, reason)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def subset(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.values[:, idx]


def build_candidate_features(base, names: Optional[Sequence[str]] = None) -> FeatureMatrix:
    """Base features, five elementwise transforms of each, and pairwise products.

    ``base`` is a :class:`FeatureBatch`, a :class:`QueueFeatures` or a mapping
    of name -> column; ``names`` picks and orders the base features used
    (default: all of them, in their declaration order).  Candidates that
    produce a non-finite value anywhere are dropped and listed in
    ``FeatureMatrix.dropped``.
    """
    cols = _as_columns(base)
    if names is None:
        names = [n for n in BASE_FEATURES if n in cols] or list(cols)
    names = list(names)
    for n in names:
        if n not in cols:
            raise KeyError(f"unknown base feature {n!r}")
        if not np.all(np.isfinite(cols[n])):
            raise ValueError(f"base feature {n!r} has non-finite values")
    cand = list(names)
    for n in names:
        cand += [f"{n}^2", f"{n}^3", f"log1p({n})", f"exp({n})", f"sqrt({n})"]
    cand += [f"{a}*{b}" for a, b in itertools.combinations(names, 2)]
    kept, columns, dropped = [], [], []
    for c in cand:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            v = compute_feature(c, cols)
        if not np.all(np.isfinite(v)):
            dropped.append((c, "non-finite values"))
            continue
        kept.append(c)
        columns.append(np.asarray(v, dtype=float))
    n_rows = len(next(iter(cols.values()))) if cols else 0
    values = np.column_stack(columns) if columns else np.zeros((n_rows, 0))
    return FeatureMatrix(names=kept, values=values, dropped=dropped)


@dataclass
class StepwiseResult:
    selected: list
    scores: list  # validation MAPE after each addition
    baseline: float  # validation MAPE of the intercept-only model


def _mape(pred, y) -> float:
    return float(100.0 * np.mean(np.abs(pred - y) / np.abs(y)))


def _lstsq_fit_predict(Xtr, ytr, Xva):
    A = np.column_stack([Xtr, np.ones(len(Xtr))])
    coef, *_ = np.linalg.lstsq(A, ytr, rcond=None)
    return Xva @ coef[:-1] + coef[-1]


def forward_stepwise(candidates: FeatureMatrix, targets, max_features: int = 4,
                     validation_fraction: float = 0.2, seed: int = 0) -> StepwiseResult:
    """Greedy forward selection of linear-model inputs.

    At every step each remaining candidate is tried alongside the current
    selection; a linear model is fitted on the training fold and scored by
    MAPE on a held-out fold.  The best candidate is kept if it lowers the
    score; candidates are visited in name order and only a strictly lower
    score displaces the incumbent, so ties go to the lexicographically
    smallest name.
    """
    y = np.asarray(targets, dtype=float)
    if max_features < 0:
        raise ValueError("max_features must be >= 0")
    if candidates.values.shape[1] == 0:
        raise ValueError("no candidate features")
    if y.shape[0] != candidates.values.shape[0]:
        raise ValueError("candidates and targets differ in length")
    if not np.all(y > 0):
        raise ValueError("targets must be positive for the MAPE scorer")
    n = y.size
    if n >= 10:
        perm = np.random.Generator(np.random.Philox(seed)).permutation(n)
        n_val = max(1, int(round(validation_fraction * n)))
        va, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    else:
        tr = va = np.arange(n)
    X = candidates.values
    usable = [c for c in sorted(candidates.names)
              if np.ptp(X[tr, candidates.names.index(c)]) > 0]
    if not usable:
        raise ValueError("all candidate features are constant")
    baseline = _mape(np.full(va.size, y[tr].mean()), y[va])
    selected, scores = [], []
    best = baseline
    while len(selected) < max_features:
        step_best, step_name = math.inf, None
        for c in usable:
            if c in selected:
                continue
            cols = [candidates.names.index(s) for s in selected + [c]]
            pred = _lstsq_fit_predict(X[np.ix_(tr, cols)], y[tr], X[np.ix_(va, cols)])
            score = _mape(pred, y[va])
            if score < step_best:
                step_best, step_name = score, c
        if step_name is None or not step_best < best:
            break
        selected.append(step_name)
        scores.append(step_best)
        best = step_best
    return StepwiseResult(selected=selected, scores=scores, baseline=baseline)
