"""Discrete-event simulation of finite FIFO queues and feed-forward networks.

Randomness comes from numpy's counter-based ``Philox`` bit generator.  A
run's integer seed is expanded with ``SeedSequence`` and split into
independent child streams (one for arrivals, one for service times, and one
per flow or link in a network), so the same seed always reproduces the same
result bit for bit.

Confidence intervals use batch means over 32 equal batches of the
measurement window (equal event counts for a single queue, equal simulated
time for a network).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Optional, Sequence

import numpy as np
from scipy import stats as _st

from . import _kernels as kern

__all__ = [
    "ServiceDistribution",
    "SimConfig",
    "SimResult",
    "LinkSpec",
    "FlowSpec",
    "TandemConfig",
    "TandemResult",
    "simulate_queue",
    "simulate_tandem",
    "make_rng",
    "N_BATCHES",
]

N_BATCHES = 32
MIN_MEASURED_EVENTS = 10_000


def make_rng(seed) -> np.random.Generator:
    """Philox generator for an integer seed or a ``SeedSequence``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ServiceDistribution:
    """Service time law: ``exponential(rate)``, ``deterministic(time)`` or
    ``truncnormal(mean, std)`` (a normal truncated to positive values)."""

    kind: str
    rate: Optional[float] = None
    time: Optional[float] = None
    mean: Optional[float] = None
    std: float = 0.0

    def __post_init__(self):
        if self.kind == "exponential":
            ok = self.rate is not None and self.rate > 0 and math.isfinite(self.rate)
        elif self.kind == "deterministic":
            ok = self.time is not None and self.time > 0 and math.isfinite(self.time)
        elif self.kind == "truncnormal":
            ok = (self.mean is not None and self.mean > 0 and math.isfinite(self.mean)
                  and self.std >= 0 and math.isfinite(self.std))
        else:
            raise ValueError(f"unknown service kind {self.kind!r}")
        if not ok:
            raise ValueError(f"invalid parameters for {self.kind} service: {self}")

    @classmethod
    def exponential(cls, rate: float) -> "ServiceDistribution":
        return cls("exponential", rate=float(rate))

    @classmethod
    def deterministic(cls, time: float) -> "ServiceDistribution":
        return cls("deterministic", time=float(time))

    @classmethod
    def truncnormal(cls, mean: float, std: float) -> "ServiceDistribution":
        return cls("truncnormal", mean=float(mean), std=float(std))

    @property
    def mean_time(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "deterministic":
            return self.time
        if self.std == 0:
            return self.mean
        # mean of N(m, s^2) conditioned on being positive
        a = -self.mean / self.std
        tail = 0.5 * math.erfc(a / math.sqrt(2.0))
        return self.mean + self.std * math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi) / tail

    @property
    def mu(self) -> float:
        """Service rate, the inverse of the mean service time."""
        return 1.0 / self.mean_time

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, n)
        if self.kind == "deterministic":
            return np.full(n, self.time)
        out = rng.normal(self.mean, self.std, n)
        bad = np.flatnonzero(out <= 0)
        while bad.size:
            out[bad] = rng.normal(self.mean, self.std, bad.size)
            bad = bad[out[bad] <= 0]
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("rate", "time", "mean"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        if self.kind == "truncnormal":
            d["std"] = self.std
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceDistribution":
        return cls(**d)


@dataclass(frozen=True)
class SimConfig:
    lam: float
    service: ServiceDistribution
    K: int
    measured_events: int = 1_000_000
    warmup_events: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K!r}")
        if self.measured_events < MIN_MEASURED_EVENTS:
            raise ValueError(f"measured_events must be >= {MIN_MEASURED_EVENTS}")
        if self.warmup_events is None:
            object.__setattr__(self, "warmup_events", self.measured_events // 10)
        if self.warmup_events < 0:
            raise ValueError("warmup_events must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SimResult:
    mean_occupancy: float
    loss_prob: float
    mean_sojourn: float
    emp_pi0: float
    emp_piK: float
    emp_lambda_e: float
    emp_lambda: float
    half_width: dict
    measured_time: float
    offered: int
    accepted: int
    dropped: int
    departed: int
    n_start: int
    n_end: int


@functools.lru_cache(maxsize=None)
def _t_quantile(nb: int) -> float:
    return float(_st.t.ppf(0.975, nb - 1))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _summarize(stats: np.ndarray, info: np.ndarray) -> SimResult:
    tot = stats.sum(axis=0)
    T = tot[kern.S_TIME]
    est = {
        "mean_occupancy": _ratio(tot[kern.S_AREA], T),
        "loss_prob": _ratio(tot[kern.S_DROPPED], tot[kern.S_OFFERED]),
        "mean_sojourn": _ratio(tot[kern.S_SOJOURN], tot[kern.S_DEPARTED]),
        "emp_pi0": _ratio(tot[kern.S_EMPTY], T),
        "emp_piK": _ratio(tot[kern.S_FULL], T),
        "emp_lambda_e": _ratio(tot[kern.S_ACCEPTED], T),
        "emp_lambda": _ratio(tot[kern.S_OFFERED], T),
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        bt = stats[:, kern.S_TIME]
        per_batch = {
            "mean_occupancy": stats[:, kern.S_AREA] / bt,
            "loss_prob": stats[:, kern.S_DROPPED] / stats[:, kern.S_OFFERED],
            "mean_sojourn": stats[:, kern.S_SOJOURN] / stats[:, kern.S_DEPARTED],
            "emp_pi0": stats[:, kern.S_EMPTY] / bt,
            "emp_piK": stats[:, kern.S_FULL] / bt,
            "emp_lambda_e": stats[:, kern.S_ACCEPTED] / bt,
            "emp_lambda": stats[:, kern.S_OFFERED] / bt,
        }
    nb = stats.shape[0]
    tq = _t_quantile(nb)
    hw = {}
    for name, vals in per_batch.items():
        vals = vals[np.isfinite(vals)]
        hw[name] = float(tq * vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return SimResult(
        half_width=hw,
        measured_time=float(T),
        offered=int(tot[kern.S_OFFERED]),
        accepted=int(tot[kern.S_ACCEPTED]),
        dropped=int(tot[kern.S_DROPPED]),
        departed=int(tot[kern.S_DEPARTED]),
        n_start=int(info[3]),
        n_end=int(info[4]),
        **{k: float(v) for k, v in est.items()},
    )


def _empty_result() -> SimResult:
    names = ("mean_occupancy", "loss_prob", "mean_sojourn", "emp_pi0",
             "emp_piK", "emp_lambda_e", "emp_lambda")
    vals = dict.fromkeys(names, 0.0)
    vals["emp_pi0"] = 1.0
    return SimResult(half_width=dict.fromkeys(names, 0.0), measured_time=math.inf,
                     offered=0, accepted=0, dropped=0, departed=0, n_start=0, n_end=0,
                     **vals)


def simulate_queue(cfg: SimConfig) -> SimResult:
    """Simulate one M/G/1/K queue with Poisson arrivals.

    The first ``warmup_events`` events (arrivals, dropped ones included, and
    departures) are discarded; statistics cover the next ``measured_events``.
    """
    if cfg.lam == 0:
        # no arrival ever happens: the system stays empty forever
        return _empty_result()
    total = cfg.warmup_events + cfg.measured_events
    arr_ss, svc_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    # every arrival is an event, so `total` arrivals always suffice
    gaps = make_rng(arr_ss).exponential(1.0 / cfg.lam, total)
    arrivals = np.cumsum(gaps)
    services = cfg.service.sample(make_rng(svc_ss), total)
    _, stats, info = kern.fifo_sweep(arrivals, services, int(cfg.K), kern.MODE_EVENTS,
                                     float(cfg.warmup_events), float(total), N_BATCHES)
    return _summarize(stats, info)


# ---------------------------------------------------------------------------
# feed-forward networks


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    service: ServiceDistribution
    K: int


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    path: tuple
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        if not self.path:
            raise ValueError(f"flow {self.flow_id!r} has an empty path")
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise ValueError(f"flow {self.flow_id!r} has invalid rate {self.rate!r}")


@dataclass(frozen=True)
class TandemConfig:
    """A feed-forward network of queues.

    The measurement window is sized so that the least busy link sees about
    ``measured_events`` events; ``warmup_fraction`` of that window is
    simulated first and discarded.
    """

    links: tuple
    flows: tuple
    measured_events: int = 100_000
    warmup_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "flows", tuple(self.flows))
        if self.measured_events < MIN_MEASURED_EVENTS:
            raise ValueError(f"measured_events must be >= {MIN_MEASURED_EVENTS}")
        if self.warmup_fraction < 0:
            raise ValueError("warmup_fraction must be >= 0")


@dataclass
class TandemResult:
    links: dict
    flow_delay: dict
    flow_delivered: dict
    link_order: list
    window: tuple = field(default=(0.0, 0.0))


def link_order(links: Sequence[LinkSpec], flows: Sequence[FlowSpec]) -> list:
    """Topological order of the links; raises ``ValueError`` on cycles."""
    ids = [l.link_id for l in links]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate link ids")
    known = set(ids)
    ts = TopologicalSorter({lid: set() for lid in ids})
    for f in flows:
        for lid in f.path:
            if lid not in known:
                raise ValueError(f"flow {f.flow_id!r} uses unknown link {lid!r}")
        if len(set(f.path)) != len(f.path):
            raise ValueError(f"flow {f.flow_id!r} visits a link twice (cyclic path)")
        for a, b in zip(f.path, f.path[1:]):
            ts.add(b, a)
    try:
        ts.prepare()
    except CycleError as exc:
        raise ValueError(f"paths are not feed-forward: cycle {exc.args[1]}") from None
    # ties broken by declaration position so runs are reproducible
    return _stable_topo(ids, flows, {lid: i for i, lid in enumerate(ids)})


def _stable_topo(ids, flows, pos):
    succ = {lid: set() for lid in ids}
    indeg = dict.fromkeys(ids, 0)
    for f in flows:
        for a, b in zip(f.path, f.path[1:]):
            if b not in succ[a]:
                succ[a].add(b)
                indeg[b] += 1
    ready = sorted((lid for lid in ids if indeg[lid] == 0), key=pos.__getitem__)
    out = []
    while ready:
        lid = ready.pop(0)
        out.append(lid)
        for nxt in sorted(succ[lid], key=pos.__getitem__):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
        ready.sort(key=pos.__getitem__)
    return out


def _window(cfg: TandemConfig) -> tuple[float, float]:
    load = {l.link_id: 0.0 for l in cfg.links}
    for f in cfg.flows:
        for lid in f.path:
            load[lid] += f.rate
    rates = []
    for l in cfg.links:
        lam = load[l.link_id]
        if lam > 0:
            rates.append(lam + min(lam, l.service.mu))
    if not rates:
        return 0.0, 0.0
    span = cfg.measured_events / min(rates)
    w0 = cfg.warmup_fraction * span
    return w0, w0 + span


def simulate_tandem(cfg: TandemConfig) -> TandemResult:
    """Simulate a feed-forward network of finite FIFO queues.

    Each flow injects a Poisson stream at the head of its path; a packet
    visits the links of its path in order and disappears when it is dropped.
    Because the link graph is acyclic, links are simulated one after another
    in topological order, each fed by the merged departures of its upstream
    links.  Per-flow delay averages delivered packets that entered the
    network during the measurement window.
    """
    order = link_order(cfg.links, cfg.flows)
    by_id = {l.link_id: l for l in cfg.links}
    w0, w1 = _window(cfg)
    n_flows = len(cfg.flows)
    streams = np.random.SeedSequence(cfg.seed).spawn(n_flows + len(cfg.links))
    flow_ss = streams[:n_flows]
    link_ss = dict(zip((l.link_id for l in cfg.links), streams[n_flows:]))

    # packet table ordered by flow: entry time, current time, alive flag;
    # flow fi owns the slice bounds[fi]:bounds[fi + 1]
    entry, flow_of = [], []
    bounds = [0]
    for fi, f in enumerate(cfg.flows):
        if f.rate <= 0 or w1 <= 0:
            bounds.append(bounds[-1])
            continue
        rng = make_rng(flow_ss[fi])
        n_exp = int(f.rate * w1 + 10 * math.sqrt(f.rate * w1 + 1) + 10)
        t = np.cumsum(rng.exponential(1.0 / f.rate, n_exp))
        while t[-1] < w1:
            more = np.cumsum(rng.exponential(1.0 / f.rate, n_exp)) + t[-1]
            t = np.concatenate([t, more])
        t = t[t < w1]
        entry.append(t)
        flow_of.append(np.full(t.size, fi, dtype=np.int64))
        bounds.append(bounds[-1] + t.size)
    entry = np.concatenate(entry) if entry else np.zeros(0)
    flow_of = np.concatenate(flow_of) if flow_of else np.zeros(0, dtype=np.int64)
    now = entry.copy()
    alive = np.ones(entry.size, dtype=bool)

    users = {lid: [fi for fi, f in enumerate(cfg.flows) if lid in f.path] for lid in order}

    link_results = {}
    for lid in order:
        spec = by_id[lid]
        fis = users[lid]
        idx = np.concatenate([np.arange(bounds[fi], bounds[fi + 1]) for fi in fis]
                             + [np.zeros(0, dtype=np.int64)])
        idx = idx[alive[idx]]
        if idx.size == 0:
            link_results[lid] = _empty_result()
            continue
        # stable sort keeps simultaneous packets in a reproducible order
        idx = idx[np.argsort(now[idx], kind="stable")]
        arr = now[idx]
        svc = spec.service.sample(make_rng(link_ss[lid]), idx.size)
        dep, stats, info = kern.fifo_sweep(arr, svc, int(spec.K), kern.MODE_TIME,
                                           w0, w1, N_BATCHES)
        dropped = np.isnan(dep)
        alive[idx[dropped]] = False
        now[idx[~dropped]] = dep[~dropped]
        link_results[lid] = _summarize(stats, info)

    flow_delay, delivered = {}, {}
    measured = (entry >= w0) & (entry < w1) & alive
    for fi, f in enumerate(cfg.flows):
        sel = measured & (flow_of == fi)
        delivered[f.flow_id] = int(sel.sum())
        flow_delay[f.flow_id] = float(np.mean(now[sel] - entry[sel])) if sel.any() else math.nan
    return TandemResult(links=link_results, flow_delay=flow_delay,
                        flow_delivered=delivered, link_order=order, window=(w0, w1))
