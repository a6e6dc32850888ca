"""Synthetic datasets: grids of simulated queues and small networks.

Every grid point becomes one network.  ``single`` networks are one
M/G/1/K queue fed by one Poisson flow; ``chain``, ``star`` and ``dag``
networks carry a few multi-hop flows plus one single-hop filler flow per
link, with rates set so that each link's nominal offered load equals its
target utilisation.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import __version__
from .data import Dataset, LinkSample, PathSample, SCHEMA_VERSION
from .sim import (FlowSpec, LinkSpec, ServiceDistribution, SimConfig, TandemConfig,
                  make_rng, simulate_queue, simulate_tandem)

__all__ = ["GridSpec", "generate_dataset", "TOPOLOGIES", "build_network"]

TOPOLOGIES = ("single", "chain", "star", "dag")
SERVICES = ("exponential", "deterministic", "truncnormal")


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid of networks to simulate.

    ``loads`` are per-link target utilisations; when ``load_range`` is set
    each link instead draws its target uniformly from that interval, and
    ``loads`` only contributes its length to the grid (use ``(None,)``).
    Service rates are in packets/second, packet sizes in bits.
    """

    topologies: tuple = ("single",)
    sizes: tuple = (1,)
    loads: tuple = (0.5,)
    load_range: Optional[tuple] = None
    mus: tuple = (1000.0,)
    Ks: tuple = (32,)
    services: tuple = ("exponential",)
    service_cv: float = 0.3
    avg_packet_size: float = 1000.0
    replicates: int = 1
    measured_events: int = 10_000
    warmup_fraction: float = 0.1

    def __post_init__(self):
        for name in ("topologies", "sizes", "loads", "mus", "Ks", "services"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for t in self.topologies:
            if t not in TOPOLOGIES:
                raise ValueError(f"unknown topology {t!r}; choose from {TOPOLOGIES}")
        for s in self.services:
            if s not in SERVICES:
                raise ValueError(f"unknown service kind {s!r}; choose from {SERVICES}")
        if self.load_range is not None:
            lo, hi = self.load_range
            if not 0 < lo <= hi:
                raise ValueError(f"invalid load_range {self.load_range!r}")
            object.__setattr__(self, "load_range", (float(lo), float(hi)))
        elif any(x is None or x < 0 for x in self.loads):
            raise ValueError("loads must be >= 0 when load_range is not set")

    def points(self) -> list:
        return list(itertools.product(self.topologies, self.sizes, self.loads, self.mus,
                                      self.Ks, self.services, range(self.replicates)))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        if d.get("load_range") is not None:
            d["load_range"] = tuple(d["load_range"])
        return cls(**d)


def _service(kind: str, mu: float, cv: float) -> ServiceDistribution:
    if kind == "exponential":
        return ServiceDistribution.exponential(mu)
    if kind == "deterministic":
        return ServiceDistribution.deterministic(1.0 / mu)
    return ServiceDistribution.truncnormal(1.0 / mu, cv / mu)


def _template_paths(topology: str, n: int, rng: np.random.Generator) -> list:
    """Multi-hop paths (as link indices) of a topology with ``n`` links."""
    if topology == "single" or n == 1:
        return []
    if topology == "chain":
        return [tuple(range(n))]
    if topology == "star":
        hub = n - 1
        return [(i, hub) for i in range(n - 1)]
    paths = []
    for _ in range(n):
        start = int(rng.integers(0, n - 1))
        length = int(rng.integers(2, 4))
        hops = [start]
        while len(hops) < length and hops[-1] < n - 1:
            hops.append(int(rng.integers(hops[-1] + 1, n)))
        if len(hops) > 1:
            paths.append(tuple(hops))
    return paths or [(0, n - 1)]


def build_network(net_id: str, topology: str, size: int, load, mu: float, K: int,
                  service: str, grid: GridSpec, rng: np.random.Generator):
    """Links, flows and per-link targets for one grid point."""
    n = 1 if topology == "single" else max(int(size), 2)
    if grid.load_range is not None:
        targets = rng.uniform(grid.load_range[0], grid.load_range[1], n)
    else:
        targets = np.full(n, float(load))
    svc = _service(service, mu, grid.service_cv)
    links = [LinkSpec(f"{net_id}/l{j}", svc, int(K)) for j in range(n)]
    multi = _template_paths(topology, n, rng)
    budget = targets * svc.mu
    users = np.zeros(n)
    for p in multi:
        users[list(p)] += 1
    flows, used = [], np.zeros(n)
    for fi, p in enumerate(multi):
        share = rng.uniform(0.3, 0.8)
        rate = share * min(budget[j] / users[j] for j in p)
        used[list(p)] += rate
        flows.append(FlowSpec(f"{net_id}/f{fi}", tuple(links[j].link_id for j in p), rate))
    for j in range(n):
        filler = max(budget[j] - used[j], 0.0)
        flows.append(FlowSpec(f"{net_id}/f{len(multi) + j}", (links[j].link_id,), filler))
    return links, flows


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _run_point(args):
    idx, point, grid, ss, prefix = args
    topology, size, load, mu, K, service, _rep = point
    net_id = f"{prefix}{idx:05d}"
    build_ss, sim_ss = ss.spawn(2)
    rng = make_rng(build_ss)
    links, flows = build_network(net_id, topology, size, load, mu, K, service, grid, rng)
    size_bits = grid.avg_packet_size
    samples, paths = [], []
    if topology == "single":
        spec, flow = links[0], flows[0]
        warm = int(grid.warmup_fraction * grid.measured_events)
        res = simulate_queue(SimConfig(flow.rate, spec.service, spec.K, grid.measured_events,
                                       warm, _seed_int(sim_ss)))
        per_link = {spec.link_id: res}
        flow_delay = {flow.flow_id: res.mean_sojourn if res.departed else math.nan}
    else:
        tres = simulate_tandem(TandemConfig(links, flows, grid.measured_events,
                                            grid.warmup_fraction, _seed_int(sim_ss)))
        per_link, flow_delay = tres.links, tres.flow_delay
    for spec in links:
        res = per_link[spec.link_id]
        mean_t = spec.service.mean_time
        # link rate chosen so that an average packet takes the mean service time
        capacity = size_bits / (1.0 / mu)
        samples.append(LinkSample(
            link_id=spec.link_id, network_id=net_id,
            lam=res.emp_lambda, mu=1.0 / mean_t, K=spec.K,
            capacity=capacity, avg_packet_size=mean_t * capacity,
            observed_occupancy=res.mean_occupancy,
            observed_delay=res.mean_sojourn if res.departed else None,
            observed_loss=res.loss_prob,
        ))
    for f in flows:
        d = flow_delay.get(f.flow_id, math.nan)
        paths.append(PathSample(flow_id=f.flow_id, network_id=net_id, link_ids=f.path,
                                observed_end_to_end_delay=None if math.isnan(d) else d))
    return samples, paths


def generate_dataset(grid: GridSpec, seed: int = 0, threads: int = 1,
                     prefix: str = "n") -> Dataset:
    """Simulate every grid point and collect one sample per link and flow.

    Each grid point gets its own child seed, so results do not depend on
    ``threads``.  Network ids are ``prefix`` plus the grid-point index; use
    distinct prefixes for datasets that will be concatenated.
    """
    points = grid.points()
    if not points:
        raise ValueError("grid produces zero samples")
    children = np.random.SeedSequence(seed).spawn(len(points))
    jobs = [(i, p, grid, ss, prefix) for i, (p, ss) in enumerate(zip(points, children))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    links = [s for r in results for s in r[0]]
    paths = [p for r in results for p in r[1]]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "source": "simulated",
        "seed": int(seed),
        "prefix": prefix,
        "generator": "linklat.generate",
        "generator_version": __version__,
        "grid": grid.to_dict(),
    }
    return Dataset(links=links, paths=paths, meta=meta)
