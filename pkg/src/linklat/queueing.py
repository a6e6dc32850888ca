"""Closed-form M/M/1/K quantities and the engineered per-link feature vector.

Every quantity is a function of the offered load ``rho = lambda / mu`` and the
system capacity ``K`` (packets held, including the one in service).  Scalar
helpers validate their inputs and raise ``ValueError``; the ``*_array``
helpers are vectorised versions used when featurizing whole datasets.

Loads above one are legal: a finite queue never diverges, it drops arrivals.
For ``rho > 1`` the stationary law is evaluated through ``r = 1 / rho`` so
that no power of ``rho`` overflows, and ``rho == 1`` uses the exact uniform
limit ``1 / (K + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "LinkTraffic",
    "QueueFeatures",
    "FeatureBatch",
    "utilization",
    "pi0",
    "piK",
    "stationary_distribution",
    "mean_occupancy",
    "effective_arrival_rate",
    "feature_L",
    "feature_Se",
    "featurize",
    "featurize_arrays",
    "occupancy_to_delay",
    "IDENTITY_RTOL",
]

# tolerance of the lambda*(1 - piK) == mu*(1 - pi0) self-check
IDENTITY_RTOL = 1e-12
# absolute slack for the identity checks, far below any physical rate
_IDENTITY_ATOL = 1e-300
# largest double below 1; 1 - pi0 rounds up to 1.0 once pi0 < 2**-53
_BELOW_ONE = math.nextafter(1.0, 0.0)


def _check_finite_nonneg(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def _check_K(K) -> int:
    if isinstance(K, bool) or int(K) != K or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K!r}")
    return int(K)


@dataclass(frozen=True)
class LinkTraffic:
    """Observed inputs of one link.

    ``mu`` may be omitted when both ``capacity`` (bits/s) and
    ``avg_packet_size`` (bits) are given; it is then ``capacity / avg_packet_size``.
    """

    lam: float
    K: int
    mu: Optional[float] = None
    capacity: Optional[float] = None
    avg_packet_size: Optional[float] = None

    def __post_init__(self):
        _check_finite_nonneg("lambda", self.lam)
        _check_K(self.K)
        for name in ("capacity", "avg_packet_size"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        if self.mu is None:
            if self.capacity is None or self.avg_packet_size is None:
                raise ValueError("mu is missing and cannot be derived: "
                                 "capacity and avg_packet_size are both required")
            object.__setattr__(self, "mu", self.capacity / self.avg_packet_size)
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be finite and > 0, got {self.mu!r}")

    @property
    def rho(self) -> float:
        return self.lam / self.mu


@dataclass(frozen=True)
class QueueFeatures:
    rho: float
    pi0: float
    piK: float
    lambda_e: float
    rho_e: float
    L: float
    Se: float

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "pi0": self.pi0,
            "piK": self.piK,
            "lambda_e": self.lambda_e,
            "rho_e": self.rho_e,
            "L": self.L,
            "Se": self.Se,
        }


def utilization(lam: float, mu: float) -> float:
    lam = _check_finite_nonneg("lambda", lam)
    mu = _check_finite_nonneg("mu", mu)
    if mu == 0:
        raise ValueError("mu must be > 0")
    return lam / mu


# ---------------------------------------------------------------------------
# scalar stationary law


def _one_minus_pow(x: float, m: int) -> float:
    """``1 - x**m`` for ``0 <= x <= 1`` without cancellation near 1."""
    if x == 0.0:
        return 1.0
    return -math.expm1(m * math.log(x))


def _boundary_probs(rho: float, K: int) -> tuple[float, float, float, float]:
    """Return ``(pi0, piK, 1 - pi0, 1 - piK)``, each computed without
    subtracting nearly equal numbers."""
    if rho == 1.0:
        p = 1.0 / (K + 1)
        q = K / (K + 1)
        return p, p, q, q
    if rho < 1.0:
        den = _one_minus_pow(rho, K + 1)
        p0 = (1.0 - rho) / den
        pk = p0 * rho ** K
        c0 = rho * _one_minus_pow(rho, K) / den
        ck = _one_minus_pow(rho, K) / den
        return p0, pk, c0, ck
    r = 1.0 / rho
    den = _one_minus_pow(r, K + 1)
    pk = (1.0 - r) / den
    p0 = pk * r ** K
    c0 = _one_minus_pow(r, K) / den
    ck = r * _one_minus_pow(r, K) / den
    return p0, pk, c0, ck


def pi0(rho: float, K: int) -> float:
    """Probability that the system is empty."""
    rho = _check_finite_nonneg("rho", rho)
    return _boundary_probs(rho, _check_K(K))[0]


def piK(rho: float, K: int) -> float:
    """Probability that the system is full (the blocking probability)."""
    rho = _check_finite_nonneg("rho", rho)
    return _boundary_probs(rho, _check_K(K))[1]


def stationary_distribution(rho: float, K: int) -> np.ndarray:
    """Vector ``(pi_0, ..., pi_K)`` of the birth-death chain."""
    rho = _check_finite_nonneg("rho", rho)
    K = _check_K(K)
    k = np.arange(K + 1, dtype=float)
    if rho == 1.0:
        return np.full(K + 1, 1.0 / (K + 1))
    if rho < 1.0:
        return _boundary_probs(rho, K)[0] * rho ** k
    return _boundary_probs(rho, K)[1] * (1.0 / rho) ** (K - k)


def mean_occupancy(rho: float, K: int) -> float:
    """Textbook mean number in system, ``sum_k k * pi_k``."""
    p = stationary_distribution(rho, K)
    return float(np.dot(np.arange(K + 1), p))


def effective_arrival_rate(lam: float, mu: float, rho: Optional[float] = None,
                           K: int = 1, drop_ratio: Optional[float] = None) -> float:
    """Rate of admitted arrivals ``lambda * (1 - piK)``.

    ``rho`` is optional and, when given, must agree with ``lam / mu``.  Before
    returning, the balance ``lambda * (1 - piK) == mu * (1 - pi0)`` is checked
    to relative ``IDENTITY_RTOL``.  Passing a measured ``drop_ratio`` replaces
    the analytic blocking probability (no balance check in that case).
    """
    lam = _check_finite_nonneg("lambda", lam)
    mu = _check_finite_nonneg("mu", mu)
    if mu == 0:
        raise ValueError("mu must be > 0")
    K = _check_K(K)
    r = lam / mu
    if rho is not None and not math.isclose(rho, r, rel_tol=1e-12, abs_tol=1e-300):
        raise ValueError(f"rho={rho!r} is inconsistent with lambda/mu={r!r}")
    if drop_ratio is not None:
        if not 0.0 <= drop_ratio <= 1.0:
            raise ValueError(f"drop_ratio must lie in [0, 1], got {drop_ratio!r}")
        return lam * (1.0 - drop_ratio)
    _, _, c0, ck = _boundary_probs(r, K)
    lam_e = lam * ck
    other = mu * c0
    if abs(lam_e - other) > IDENTITY_RTOL * max(abs(lam_e), abs(other)) + _IDENTITY_ATOL:
        raise ArithmeticError(
            f"effective arrival rate identity violated: {lam_e!r} != {other!r}")
    return lam_e


def _sum_k_pow(x: float, K: int) -> float:
    """``sum_{k=1..K} k * x**k`` by Horner evaluation."""
    acc = 0.0
    for k in range(K, 0, -1):
        acc = (acc + k) * x
    return acc


def feature_L(rho: float, K: int) -> float:
    """The occupancy feature ``rho + pi0 * sum_k k rho^k``.

    This carries an extra leading ``rho`` compared with the textbook mean
    (:func:`mean_occupancy`); it is kept as-is because it is used as a
    regression input, not as a prediction.
    """
    rho = _check_finite_nonneg("rho", rho)
    return rho + mean_occupancy(rho, _check_K(K))


def feature_Se(rho_e: float, K: int) -> float:
    """Unnormalised effective occupancy ``sum_{k=1..K} k rho_e^k``."""
    rho_e = _check_finite_nonneg("rho_e", rho_e)
    if rho_e >= 1.0:
        raise ValueError(f"rho_e must be < 1, got {rho_e!r}")
    return _sum_k_pow(rho_e, _check_K(K))


def featurize(link: LinkTraffic, drop_ratio: Optional[float] = None) -> QueueFeatures:
    rho = utilization(link.lam, link.mu)
    K = link.K
    p0, pk, c0, _ = _boundary_probs(rho, K)
    lam_e = effective_arrival_rate(link.lam, link.mu, rho, K, drop_ratio=drop_ratio)
    rho_e = min(lam_e / link.mu, _BELOW_ONE)
    if drop_ratio is None and abs(rho_e - c0) > IDENTITY_RTOL:
        raise ArithmeticError(f"rho_e={rho_e!r} differs from 1 - pi0={c0!r}")
    return QueueFeatures(
        rho=rho,
        pi0=p0,
        piK=pk,
        lambda_e=lam_e,
        rho_e=rho_e,
        L=rho + mean_occupancy(rho, K),
        Se=feature_Se(rho_e, K),
    )


def occupancy_to_delay(occupancy, avg_packet_size, capacity):
    """Per-link delay in seconds: occupancy times packet transmission time.

    Works elementwise on arrays as well as on scalars.
    """
    occupancy = np.asarray(occupancy, dtype=float)
    size = np.asarray(avg_packet_size, dtype=float)
    cap = np.asarray(capacity, dtype=float)
    if np.any(~(cap > 0)) or np.any(~np.isfinite(cap)):
        raise ValueError("capacity must be finite and > 0")
    if np.any(~(size > 0)) or np.any(~np.isfinite(size)):
        raise ValueError("avg_packet_size must be finite and > 0")
    if np.any(occupancy < 0):
        raise ValueError("occupancy must be >= 0")
    out = occupancy * size / cap
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# vectorised featurization


@dataclass(frozen=True)
class FeatureBatch:
    """Column-oriented :class:`QueueFeatures` for many links at once."""

    rho: np.ndarray
    pi0: np.ndarray
    piK: np.ndarray
    lambda_e: np.ndarray
    rho_e: np.ndarray
    L: np.ndarray
    Se: np.ndarray

    NAMES = ("rho", "pi0", "piK", "lambda_e", "rho_e", "L", "Se")

    def __len__(self) -> int:
        return len(self.rho)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def row(self, i: int) -> QueueFeatures:
        return QueueFeatures(**{n: float(getattr(self, n)[i]) for n in self.NAMES})


def _one_minus_pow_array(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    pos = x > 0
    out[pos] = -np.expm1(m[pos] * np.log(x[pos]))
    return out


def featurize_arrays(lam, mu, K) -> FeatureBatch:
    """Vectorised :func:`featurize`; ``lam``, ``mu`` and ``K`` broadcast."""
    lam, mu, K = np.broadcast_arrays(np.asarray(lam, dtype=float),
                                     np.asarray(mu, dtype=float),
                                     np.asarray(K))
    lam = lam.astype(float).ravel()
    mu = mu.astype(float).ravel()
    Kf = K.astype(float).ravel()
    if not (np.all(np.isfinite(lam)) and np.all(lam >= 0)):
        raise ValueError("lambda must be finite and >= 0")
    if not (np.all(np.isfinite(mu)) and np.all(mu > 0)):
        raise ValueError("mu must be finite and > 0")
    if not (np.all(Kf >= 1) and np.all(Kf == np.round(Kf))):
        raise ValueError("K must be integers >= 1")
    Ki = Kf.astype(np.int64)
    rho = lam / mu
    n = rho.size
    p0 = np.empty(n)
    pk = np.empty(n)
    c0 = np.empty(n)
    ck = np.empty(n)

    lo = rho < 1.0
    hi = rho > 1.0
    eq = ~(lo | hi)

    x = rho[lo]
    den = _one_minus_pow_array(x, Kf[lo] + 1)
    p0[lo] = (1.0 - x) / den
    pk[lo] = p0[lo] * x ** Kf[lo]
    omk = _one_minus_pow_array(x, Kf[lo])
    c0[lo] = x * omk / den
    ck[lo] = omk / den

    r = 1.0 / rho[hi]
    den = _one_minus_pow_array(r, Kf[hi] + 1)
    pk[hi] = (1.0 - r) / den
    p0[hi] = pk[hi] * r ** Kf[hi]
    omk = _one_minus_pow_array(r, Kf[hi])
    c0[hi] = omk / den
    ck[hi] = r * omk / den

    p0[eq] = pk[eq] = 1.0 / (Kf[eq] + 1)
    c0[eq] = ck[eq] = Kf[eq] / (Kf[eq] + 1)

    lam_e = lam * ck
    other = mu * c0
    bad = (np.abs(lam_e - other)
           > IDENTITY_RTOL * np.maximum(np.abs(lam_e), np.abs(other)) + _IDENTITY_ATOL)
    if np.any(bad):
        raise ArithmeticError("effective arrival rate identity violated "
                              f"at {int(np.argmax(bad))}")
    rho_e = np.minimum(lam_e / mu, _BELOW_ONE)

    # sum_k k pi_k: walk k upward with pi_k = pi0 rho^k (rho <= 1) or
    # pi_k = piK r^(K - k) (rho > 1); lanes stop once k exceeds their K
    kmax = int(Ki.max()) if n else 0
    occ = np.zeros(n)
    se = np.zeros(n)
    up = ~hi
    rho_up = np.where(up, rho, 0.0)
    term_up = p0.copy()
    pow_e = np.ones(n)
    r_all = np.where(hi, 1.0 / np.where(hi, rho, 1.0), 0.0)
    for k in range(1, kmax + 1):
        live = Ki >= k
        term_up = term_up * rho_up
        pow_e = pow_e * rho_e
        pik = np.where(up, term_up, 0.0)
        if np.any(hi):
            pik_hi = pk * r_all ** np.maximum(Kf - k, 0)
            pik = np.where(hi, pik_hi, pik)
        occ += np.where(live, k * pik, 0.0)
        se += np.where(live, k * pow_e, 0.0)
    return FeatureBatch(rho=rho, pi0=p0, piK=pk, lambda_e=lam_e, rho_e=rho_e,
                        L=rho + occ, Se=se)
