"""Occupancy estimators and their fitting procedures.

Five model families:

* :class:`LinearModel` - least squares on named queue features;
* :class:`ExpPolyModel` - ``exp(p(rho_e))`` with ``p`` fitted to ``log y``;
* :class:`BasisModel` with ``kind="mm1k"`` - a combination of the
  normalised shapes ``x^n / (1 + x + ... + x^K)`` that mimic the M/M/1/K
  occupancy law;
* :class:`BasisModel` with ``kind="bernstein"`` - Bernstein polynomials of
  degree ``K``;
* :class:`ImplicitModel` - a monotone piecewise-linear curve whose knots are
  optimised (see :func:`fit_implicit`).

All curve models take the effective utilisation ``rho_e`` as their only
input.  Every model is an immutable value with ``predict``,
``parameter_count`` and ``to_dict``/``model_from_dict`` for serialisation.
"""

from __future__ import annotations

import math
import re
import time
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .features import DEFAULT_FEATURES, compute_feature
from .queueing import FeatureBatch, QueueFeatures

__all__ = [
    "LinearModel",
    "ExpPolyModel",
    "BasisModel",
    "ImplicitModel",
    "FitReport",
    "RankWarning",
    "fit_linear",
    "fit_exp_poly",
    "basis_value",
    "basis_matrix",
    "fit_basis",
    "fit_implicit",
    "implicit_objective",
    "predict",
    "model_from_dict",
    "ModelSpec",
    "parse_model_spec",
    "fit_spec",
]

MAX_EXP_POLY_DEGREE = 12


class RankWarning(UserWarning):
    """The design matrix is rank deficient; a minimum-norm solution was used."""


def _rho_e_of(x) -> np.ndarray:
    if isinstance(x, (FeatureBatch, QueueFeatures)):
        x = x.rho_e
    elif isinstance(x, Mapping):
        x = x["rho_e"]
    return np.asarray(x, dtype=float)


def _out(v: np.ndarray, like):
    return float(v) if np.ndim(like) == 0 and np.ndim(v) <= 1 and np.size(v) == 1 else v


# ---------------------------------------------------------------------------
# linear regression


@dataclass(frozen=True)
class LinearModel:
    feature_names: tuple
    weights: tuple
    intercept: float
    rank_deficient: bool = False
    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(self.feature_names):
            raise ValueError("one weight per feature name is required")

    @property
    def parameter_count(self) -> int:
        return len(self.weights) + 1

    @property
    def parameter_count_weights(self) -> int:
        """Weights only, without the intercept."""
        return len(self.weights)

    def design(self, x) -> np.ndarray:
        """Input matrix in ``feature_names`` order.

        ``x`` is a 2-D array whose columns already follow ``feature_names``,
        or anything carrying named base features (a :class:`FeatureBatch`,
        :class:`QueueFeatures` or mapping) from which derived candidates such
        as ``rho_e^2`` are computed.
        """
        if isinstance(x, np.ndarray) and x.ndim == 2:
            if x.shape[1] != len(self.feature_names):
                raise ValueError(f"expected {len(self.feature_names)} columns, got {x.shape[1]}")
            return x
        try:
            cols = [np.atleast_1d(compute_feature(n, x)) for n in self.feature_names]
        except KeyError as exc:
            raise ValueError(f"feature-name mismatch: {exc.args[0]}") from None
        return np.column_stack(cols) if cols else np.zeros((1, 0))

    def predict(self, x):
        X = self.design(x)
        y = X @ np.asarray(self.weights) + self.intercept
        if isinstance(x, QueueFeatures) or (isinstance(x, Mapping) and
                                             all(np.ndim(v) == 0 for v in x.values())):
            return float(y[0])
        return y

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names), "weights": list(self.weights),
                "intercept": self.intercept, "rank_deficient": self.rank_deficient}


def fit_linear(X, y, feature_names: Optional[Sequence[str]] = None) -> LinearModel:
    """Ordinary least squares with intercept via SVD-based ``lstsq``.

    A rank-deficient design yields the minimum-norm solution, sets
    ``rank_deficient`` and emits :class:`RankWarning`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.size == 0 or y.size == 0:
        raise ValueError("empty data")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y differ in length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in X or y")
    n, p = X.shape
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} samples for {p} features, got {n}")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(p))
    A = np.column_stack([X, np.ones(n)])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    deficient = rank < p + 1
    if deficient:
        warnings.warn(f"design matrix has rank {rank} < {p + 1}; using the minimum-norm solution",
                      RankWarning, stacklevel=2)
    return LinearModel(names, tuple(coef[:-1]), float(coef[-1]), bool(deficient))


# ---------------------------------------------------------------------------
# exponential of a polynomial


@dataclass(frozen=True)
class ExpPolyModel:
    coefficients: tuple  # increasing powers
    kind = "exp-poly"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def parameter_count(self) -> int:
        return len(self.coefficients)

    def predict(self, x):
        r = _rho_e_of(x)
        return _out(np.exp(np.polynomial.polynomial.polyval(r, self.coefficients)), r)

    def to_dict(self) -> dict:
        return {"coefficients": list(self.coefficients)}


def fit_exp_poly(rho_e, y, degree: int = 8) -> ExpPolyModel:
    """Least-squares polynomial fit of ``log y`` against ``rho_e``."""
    x = np.asarray(rho_e, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if isinstance(degree, bool) or int(degree) != degree or not 1 <= degree <= MAX_EXP_POLY_DEGREE:
        raise ValueError(f"degree must be an integer in [1, {MAX_EXP_POLY_DEGREE}], got {degree!r}")
    if x.shape != y.shape or x.size == 0:
        raise ValueError("rho_e and y must be non-empty and of equal length")
    if not np.all(y > 0):
        raise ValueError("all targets must be > 0 to take their logarithm "
                         "(drop zero-occupancy rows first)")
    if x.size < degree + 1:
        raise ValueError(f"need at least {degree + 1} samples for degree {degree}")
    V = np.polynomial.polynomial.polyvander(x, int(degree))
    coef, *_ = np.linalg.lstsq(V, np.log(y), rcond=None)
    return ExpPolyModel(tuple(coef))


# ---------------------------------------------------------------------------
# basis expansions


def _mm1k_phi(n: int, K: int, x: np.ndarray) -> np.ndarray:
    # (1 - x) / (1 - x^(K+1)) == 1 / (1 + x + ... + x^K), exact at x = 1
    s = np.zeros_like(x)
    for _ in range(K + 1):
        s = s * x + 1.0
    return x ** n / s


def _check_basis_args(kind: str, n: int, K: int) -> None:
    if kind not in ("mm1k", "bernstein"):
        raise ValueError(f"unknown basis kind {kind!r}")
    if int(K) != K or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K!r}")
    if int(n) != n or not 0 <= n <= K:
        raise ValueError(f"n must be an integer in [0, K], got {n!r}")


def basis_value(kind: str, n: int, K: int, x):
    """Value of the ``n``-th basis function of order ``K`` at ``x``.

    ``mm1k``: ``phi_n(x) / phi_n(n / (n + 1))`` with
    ``phi_n(x) = x^n (1 - x) / (1 - x^(K+1))`` (its limit ``x^n / (K + 1)`` at
    ``x = 1``).  ``bernstein``: ``C(K, n) x^n (1 - x)^(K - n)``.  ``x`` must
    lie in ``[0, 1]``.
    """
    _check_basis_args(kind, n, K)
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)) or np.any(xa < 0) or np.any(xa > 1):
        raise ValueError("x must lie in [0, 1]")
    if kind == "bernstein":
        v = math.comb(int(K), int(n)) * xa ** n * (1.0 - xa) ** (K - n)
    else:
        peak = np.asarray(n / (n + 1.0))
        v = _mm1k_phi(int(n), int(K), xa) / _mm1k_phi(int(n), int(K), peak)
    return float(v) if v.ndim == 0 else v


def basis_matrix(kind: str, K: int, x) -> np.ndarray:
    """Design matrix whose column ``n`` is ``basis_value(kind, n, K, x)``."""
    _check_basis_args(kind, 0, K)
    x = np.asarray(x, dtype=float).ravel()
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    K = int(K)
    # built basis-major so every row write is contiguous
    rows = np.empty((K + 1, x.size))
    rows[0] = 1.0
    for n in range(1, K + 1):
        np.multiply(rows[n - 1], x, out=rows[n])
    if kind == "bernstein":
        one_minus = 1.0 - x
        comp = np.ones(x.size)
        for n in range(K, -1, -1):
            rows[n] *= comp
            rows[n] *= math.comb(K, n)
            comp *= one_minus
        return rows.T
    s = np.zeros_like(x)
    for _ in range(K + 1):
        s = s * x + 1.0
    rows /= s
    for n in range(K + 1):
        rows[n] /= _mm1k_phi(n, K, np.asarray(n / (n + 1.0)))
    return rows.T


_CHUNK = 1 << 16


@dataclass(frozen=True)
class BasisModel:
    kind: str
    K: int
    alphas: tuple

    def __post_init__(self):
        if self.kind not in ("mm1k", "bernstein"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if len(self.alphas) != self.K + 1:
            raise ValueError(f"expected {self.K + 1} coefficients, got {len(self.alphas)}")

    @property
    def parameter_count(self) -> int:
        return self.K + 1

    def predict(self, x):
        r = _rho_e_of(x)
        flat = r.ravel()
        coef = np.asarray(self.alphas)
        out = np.empty(flat.size)
        for i in range(0, flat.size, _CHUNK):
            out[i:i + _CHUNK] = basis_matrix(self.kind, self.K, flat[i:i + _CHUNK]) @ coef
        return _out(out.reshape(r.shape), r)

    def to_dict(self) -> dict:
        return {"K": self.K, "alphas": list(self.alphas)}


def fit_basis(kind: str, K: int, rho_e, y) -> BasisModel:
    """Least squares over the ``K + 1`` basis columns."""
    x = np.asarray(rho_e, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size == 0:
        raise ValueError("rho_e and y must be non-empty and of equal length")
    if x.size < K + 2:
        raise ValueError(f"need at least {K + 2} samples for K={K}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite targets")
    A = basis_matrix(kind, K, x)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise ArithmeticError("basis fit produced non-finite coefficients")
    return BasisModel(kind, int(K), tuple(coef))


# ---------------------------------------------------------------------------
# implicit function: optimised knots of a monotone piecewise-linear curve


@dataclass(frozen=True)
class ImplicitModel:
    """Piecewise-linear curve through knots ``(a_n, b_n)``, ``n = 0..N``.

    Knots live in the unit square; ``x_min``/``x_max`` and ``y_min``/``y_max``
    map inputs and outputs to and from it.  Outside ``[a_0, a_N]`` the first
    and last non-degenerate segments are extended.
    """

    a: tuple
    b: tuple
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    alpha: float = 0.0
    converged: bool = True
    iterations: int = 0
    kind = "implicit"

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(a) != len(b) or len(a) < 3:
            raise ValueError("need matching a and b with at least 3 knots")
        if a[0] != 0.0 or a[-1] != 1.0 or b[-1] != 1.0:
            raise ValueError("knot constraints a_0 = 0 and a_N = b_N = 1 violated")
        if any(y < x for x, y in zip(a, a[1:])):
            raise ValueError("knot abscissae must be nondecreasing")
        if any(not 0.0 <= v <= 1.0 for v in a + b):
            raise ValueError("knots must lie in [0, 1]^2")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def N(self) -> int:
        return len(self.a) - 1

    @property
    def parameter_count(self) -> int:
        return 2 * self.N

    def predict_normalized(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        a, b = np.asarray(self.a), np.asarray(self.b)
        out = np.interp(u, a, b)
        da = np.diff(a)
        good = np.flatnonzero(da > 0)
        if good.size:
            j0, j1 = good[0], good[-1]
            s0 = (b[j0 + 1] - b[j0]) / da[j0]
            s1 = (b[j1 + 1] - b[j1]) / da[j1]
            out = np.where(u < 0.0, b[0] + s0 * u, out)
            out = np.where(u > 1.0, b[-1] + s1 * (u - 1.0), out)
        return out

    def predict(self, x):
        r = _rho_e_of(x)
        u = (r - self.x_min) / (self.x_max - self.x_min)
        v = self.predict_normalized(u)
        return _out(self.y_min + v * (self.y_max - self.y_min), r)

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max, "alpha": self.alpha,
                "converged": self.converged, "iterations": self.iterations}


_EPS = 1e-14


def _knots_from_params(p: np.ndarray, N: int):
    delta = p[:N]
    c = np.concatenate([[0.0], np.cumsum(delta)])
    total = c[-1]
    a = c / total
    a[0], a[-1] = 0.0, 1.0
    b = np.concatenate([p[N:], [1.0]])
    return a, b, c, total


def _interp_with_grad(a, b, x):
    """Interpolated values at sorted ``x`` plus partials wrt the knots."""
    N = a.size - 1
    j = np.clip(np.searchsorted(a, x, side="right") - 1, 0, N - 1)
    da = a[j + 1] - a[j]
    ok = da > _EPS
    safe = np.where(ok, da, 1.0)
    t = np.where(ok, (x - a[j]) / safe, (x >= a[j + 1]).astype(float))
    f = b[j] * (1.0 - t) + b[j + 1] * t
    slope = np.where(ok, (b[j + 1] - b[j]) / safe, 0.0)
    return j, t, f, slope


def _turn_penalty(a, b):
    """Sum over interior knots of sin^2 of the turning angle, and its gradient
    wrt the knot coordinates."""
    u = np.column_stack([np.diff(a), np.diff(b)])
    n2 = np.einsum("ij,ij->i", u, u)
    total = 0.0
    ga = np.zeros(a.size)
    gb = np.zeros(b.size)
    for n in range(u.shape[0] - 1):
        p, q = u[n], u[n + 1]
        den = n2[n] * n2[n + 1]
        if den <= _EPS:
            continue
        c = p[0] * q[1] - p[1] * q[0]
        val = c * c / den
        total += val
        dp = 2 * c * np.array([q[1], -q[0]]) / den - 2 * val * p / n2[n]
        dq = 2 * c * np.array([-p[1], p[0]]) / den - 2 * val * q / n2[n + 1]
        # u_n = theta_{n+1} - theta_n
        ga[n + 1] += dp[0]; gb[n + 1] += dp[1]
        ga[n] -= dp[0]; gb[n] -= dp[1]
        ga[n + 2] += dq[0]; gb[n + 2] += dq[1]
        ga[n + 1] -= dq[0]; gb[n + 1] -= dq[1]
    return total, ga, gb


def implicit_objective(p: np.ndarray, x: np.ndarray, y: np.ndarray, N: int, alpha: float,
                       loss: str = "mse", y_scale: tuple = (0.0, 1.0)):
    """Objective and gradient in the optimiser's parameters.

    ``p`` holds ``N`` nonnegative abscissa increments followed by the ``N``
    free ordinates ``b_0..b_{N-1}``; ``x``/``y`` are normalised to ``[0, 1]``.
    ``loss="mape"`` measures percentage error after undoing the output
    scaling given by ``y_scale = (y_min, y_max)``.
    """
    a, b, c, total = _knots_from_params(p, N)
    j, t, f, slope = _interp_with_grad(a, b, x)
    n = x.size
    if loss == "mse":
        r = f - y
        value = float(np.mean(r * r))
        gf = 2.0 * r / n
    else:
        lo, hi = y_scale
        y_raw = lo + y * (hi - lo)
        r = (lo + f * (hi - lo)) - y_raw
        value = float(100.0 * np.mean(np.abs(r) / y_raw))
        gf = 100.0 * np.sign(r) * (hi - lo) / y_raw / n
    gb = np.bincount(j, gf * (1.0 - t), N + 1) + np.bincount(j + 1, gf * t, N + 1)
    ga = (np.bincount(j, gf * slope * (t - 1.0), N + 1)
          + np.bincount(j + 1, -gf * slope * t, N + 1))
    if alpha > 0:
        pen, pa, pb = _turn_penalty(a, b)
        value += alpha / N * pen
        ga += alpha / N * pa
        gb += alpha / N * pb
    # a_n = c_n / total with c_n = delta_1 + ... + delta_n
    tail = np.cumsum(ga[::-1])[::-1]  # tail[i] = sum_{n >= i} ga[n]
    g_delta = (tail[1:] - float(np.dot(ga, a))) / total
    grad = np.concatenate([g_delta, gb[:N]])
    return value, grad


def _initial_params(x: np.ndarray, y: np.ndarray, N: int) -> np.ndarray:
    a = np.quantile(x, np.arange(N + 1) / N)
    a[0], a[-1] = 0.0, 1.0
    a = np.maximum.accumulate(a)
    delta = np.diff(a) + 1e-6
    a = np.concatenate([[0.0], np.cumsum(delta)]) / delta.sum()
    mids = np.concatenate([[-np.inf], (a[1:] + a[:-1]) / 2, [np.inf]])
    b = np.empty(N)
    for n in range(N):
        lo, hi = np.searchsorted(x, [mids[n], mids[n + 1]])
        b[n] = y[lo:hi].mean() if hi > lo else np.nan
    if np.any(np.isnan(b)):
        known = ~np.isnan(b)
        b = np.interp(a[:N], a[:N][known], b[known]) if known.any() else a[:N].copy()
    return np.concatenate([delta, np.clip(b, 0.0, 1.0)])


def fit_implicit(rho_e, y, N: int = 12, alpha: float = 1e-5, max_iter: int = 1000,
                 loss: str = "mse", max_samples: Optional[int] = None,
                 seed: int = 0) -> ImplicitModel:
    """Fit knots of a piecewise-linear curve by constrained minimisation.

    The objective is the fit loss plus ``alpha / N`` times the sum of squared
    sines of the turning angles between consecutive segments.  Abscissae are
    parameterised as normalised cumulative sums of nonnegative increments,
    which pins ``a_0 = 0`` and ``a_N = 1`` and keeps them nondecreasing; the
    free ordinates are box-constrained to ``[0, 1]`` and ``b_N = 1``.  The
    optimiser is L-BFGS-B started from knots at quantiles of the data.  If
    it stops without converging the best iterate is returned with
    ``converged=False``.
    """
    x = np.asarray(rho_e, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if int(N) != N or N < 2:
        raise ValueError(f"N must be an integer >= 2, got {N!r}")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if loss not in ("mse", "mape"):
        raise ValueError(f"loss must be 'mse' or 'mape', got {loss!r}")
    if x.shape != y.shape:
        raise ValueError("rho_e and y differ in length")
    if x.size < N + 1:
        raise ValueError(f"need at least {N + 1} samples for N={N}, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs")
    if loss == "mape" and not np.all(y > 0):
        raise ValueError("MAPE loss needs positive targets")
    if max_samples is not None and x.size > max_samples:
        keep = np.sort(np.random.Generator(np.random.Philox(seed)).choice(
            x.size, max_samples, replace=False))
        x, y = x[keep], y[keep]
    N = int(N)
    x_min, x_max = float(x.min()), float(x.max())
    y_min, y_max = float(y.min()), float(y.max())
    if x_max <= x_min:
        raise ValueError("rho_e has no spread")
    if y_max <= y_min:
        y_max = y_min + 1.0
    order = np.argsort(x, kind="stable")
    xn = ((x - x_min) / (x_max - x_min))[order]
    yn = ((y - y_min) / (y_max - y_min))[order]

    best = {"value": math.inf, "p": None}

    def fun(p):
        if not np.sum(p[:N]) > _EPS:
            # knots collapse onto one abscissa; make the line search back off
            grad = np.zeros_like(p)
            grad[:N] = -1.0
            return 1e30, grad
        value, grad = implicit_objective(p, xn, yn, N, alpha, loss, (y_min, y_max))
        if value < best["value"]:
            best["value"], best["p"] = value, p.copy()
        return value, grad

    p0 = _initial_params(xn, yn, N)
    bounds = [(0.0, None)] * N + [(0.0, 1.0)] * N
    res = minimize(fun, p0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": int(max_iter), "ftol": 1e-16, "gtol": 1e-13,
                            "maxcor": 30})
    p = best["p"] if best["p"] is not None else res.x
    a, b, _, _ = _knots_from_params(p, N)
    b = np.clip(b, 0.0, 1.0)
    return ImplicitModel(tuple(a), tuple(b), x_min, x_max, y_min, y_max, float(alpha),
                         bool(res.success), int(res.nit))


# ---------------------------------------------------------------------------
# generic helpers


def predict(model, x):
    """Occupancy estimate of ``model`` for ``x``.

    Curve models read ``rho_e`` from ``x`` (a number, an array, a
    :class:`QueueFeatures`, a :class:`FeatureBatch` or a mapping); linear
    models need their named features.
    """
    return model.predict(x)


def model_from_dict(kind: str, d: dict):
    if kind == "linear":
        return LinearModel(tuple(d["feature_names"]), tuple(d["weights"]), d["intercept"],
                           bool(d.get("rank_deficient", False)))
    if kind == "exp-poly":
        return ExpPolyModel(tuple(d["coefficients"]))
    if kind in ("mm1k", "bernstein"):
        return BasisModel(kind, int(d["K"]), tuple(d["alphas"]))
    if kind == "implicit":
        return ImplicitModel(tuple(d["a"]), tuple(d["b"]), d["x_min"], d["x_max"], d["y_min"],
                             d["y_max"], d.get("alpha", 0.0), d.get("converged", True),
                             d.get("iterations", 0))
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class FitReport:
    model: object
    train_mape: float
    train_mse: float
    fit_seconds: float
    n_samples: int
    iterations: Optional[int] = None


KINDS = ("linear", "exp-poly", "mm1k", "bernstein", "implicit")
_DEFAULTS = {
    "linear": {"features": ",".join(DEFAULT_FEATURES)},
    "exp-poly": {"degree": 8},
    "mm1k": {"K": 32},
    "bernstein": {"K": 32},
    "implicit": {"N": 12, "alpha": 1e-5, "max_iter": 1000, "loss": "mse"},
}
_TYPES = {"degree": int, "K": int, "N": int, "alpha": float, "max_iter": int,
          "loss": str, "features": str, "max_samples": int}


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus hyperparameters, e.g. ``exp-poly:degree=8``."""

    kind: str
    params: tuple = ()

    @property
    def options(self) -> dict:
        return {**_DEFAULTS[self.kind], **dict(self.params)}

    @property
    def name(self) -> str:
        opts = self.options
        shown = {k: v for k, v in opts.items() if k not in ("max_iter", "loss", "features")}
        if self.kind == "linear":
            return "linear"
        inner = ",".join(f"{k}={v}" for k, v in sorted(shown.items()))
        return f"{self.kind}({inner})" if inner else self.kind

    @property
    def input_features(self) -> tuple:
        if self.kind == "linear":
            return tuple(self.options["features"].split(","))
        return ("rho_e",)


def parse_model_spec(text: str) -> ModelSpec:
    """Parse ``kind[:key=value,...]``; unknown kinds or keys raise ``ValueError``."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {KINDS}")
    params = {}
    if rest:
        # feature lists contain commas, so split on commas that start a key=
        for item in re.split(r",(?=\s*\w+\s*=)", rest):
            key, eq, val = item.partition("=")
            key = key.strip()
            if not eq or key not in _DEFAULTS[kind] and key != "max_samples":
                raise ValueError(f"invalid option {item!r} for {kind}")
            try:
                params[key] = _TYPES[key](val.strip())
            except ValueError:
                raise ValueError(f"invalid value for {key}: {val!r}") from None
    spec = ModelSpec(kind, tuple(sorted(params.items())))
    _validate(spec)
    return spec


def _validate(spec: ModelSpec) -> None:
    o = spec.options
    if spec.kind == "exp-poly" and not 1 <= o["degree"] <= MAX_EXP_POLY_DEGREE:
        raise ValueError(f"degree must be in [1, {MAX_EXP_POLY_DEGREE}]")
    if spec.kind in ("mm1k", "bernstein") and o["K"] < 1:
        raise ValueError("K must be >= 1")
    if spec.kind == "implicit":
        if o["N"] < 2:
            raise ValueError("N must be >= 2")
        if o["alpha"] < 0:
            raise ValueError("alpha must be >= 0")
        if o["loss"] not in ("mse", "mape"):
            raise ValueError("loss must be mse or mape")


def fit_spec(spec: ModelSpec, features: FeatureBatch, y, seed: int = 0) -> FitReport:
    """Fit the model described by ``spec`` on featurized links."""
    o = spec.options
    y = np.asarray(y, dtype=float)
    t0 = time.perf_counter()
    iterations = None
    if spec.kind == "linear":
        names = spec.input_features
        X = np.column_stack([compute_feature(n, features) for n in names])
        model = fit_linear(X, y, names)
    elif spec.kind == "exp-poly":
        model = fit_exp_poly(features.rho_e, y, o["degree"])
    elif spec.kind in ("mm1k", "bernstein"):
        model = fit_basis(spec.kind, o["K"], features.rho_e, y)
    else:
        model = fit_implicit(features.rho_e, y, o["N"], o["alpha"], o["max_iter"], o["loss"],
                             o.get("max_samples"), seed)
        iterations = model.iterations
    elapsed = time.perf_counter() - t0
    pred = model.predict(features)
    with np.errstate(divide="ignore", invalid="ignore"):
        mape = float(100.0 * np.mean(np.abs(pred - y) / np.abs(y)))
    mse = float(np.mean((pred - y) ** 2))
    return FitReport(model, mape, mse, elapsed, int(y.size), iterations)
