"""Simulator checks against the analytic M/M/1/K law and its own invariants."""

from dataclasses import asdict

import numpy as np
import pytest
from scipy import stats

from linklat.queueing import mean_occupancy, pi0, piK
from linklat.sim import (FlowSpec, LinkSpec, ServiceDistribution, SimConfig, TandemConfig,
                         link_order, simulate_queue, simulate_tandem)

EVENTS = 400_000


def _exp(mu):
    return ServiceDistribution.exponential(mu)


def _within(est, hw, truth, k=2.0, floor=1e-9):
    """True when ``truth`` lies within ``k`` CI half-widths of ``est``."""
    return abs(est - truth) <= k * hw + floor


def test_zero_arrivals():
    res = simulate_queue(SimConfig(0.0, _exp(3.0), 4, 10_000, seed=1))
    assert res.mean_occupancy == 0 and res.loss_prob == 0 and res.emp_pi0 == 1


def test_determinism():
    cfg = SimConfig(0.8, _exp(1.0), 5, 20_000, seed=99)
    assert asdict(simulate_queue(cfg)) == asdict(simulate_queue(cfg))
    other = simulate_queue(SimConfig(0.8, _exp(1.0), 5, 20_000, seed=100))
    assert asdict(other) != asdict(simulate_queue(cfg))


@pytest.mark.parametrize("lam,mu,K", [(1.0, 2.0, 2), (0.9, 1.0, 8), (3.0, 2.0, 4)])
def test_conservation(lam, mu, K):
    res = simulate_queue(SimConfig(lam, _exp(mu), K, 50_000, seed=3))
    assert res.offered == res.accepted + res.dropped
    # accepted packets in the window either left or are still in the system
    assert res.accepted + res.n_start - res.n_end == res.departed
    assert 0 <= res.loss_prob <= 1
    assert 0 <= res.mean_occupancy <= K


def test_worked_example_pi0_within_ci():
    res = simulate_queue(SimConfig(1.0, _exp(2.0), 2, 1_000_000, seed=2024))
    assert _within(res.emp_pi0, res.half_width["emp_pi0"], 4 / 7)
    little = abs(res.emp_lambda_e * res.mean_sojourn - res.mean_occupancy) / res.mean_occupancy
    assert little < 0.01


# 3 quantities x 6 configs: use a Bonferroni-style 3 half-width band
@pytest.mark.parametrize("rho,K", [(0.3, 3), (0.7, 5), (0.9, 10), (1.0, 6), (1.4, 4), (2.0, 3)])
def test_mm1k_agreement_within_ci(rho, K):
    res = simulate_queue(SimConfig(rho, _exp(1.0), K, EVENTS, seed=11))
    hw = res.half_width
    assert _within(res.emp_pi0, hw["emp_pi0"], pi0(rho, K), k=3)
    assert _within(res.emp_piK, hw["emp_piK"], piK(rho, K), k=3)
    assert _within(res.mean_occupancy, hw["mean_occupancy"], mean_occupancy(rho, K), k=3)


@pytest.mark.parametrize("rho", [0.5, 1.0, 1.5])
def test_littles_law(rho):
    res = simulate_queue(SimConfig(rho, _exp(1.0), 6, 1_000_000, seed=5))
    assert abs(res.emp_lambda_e * res.mean_sojourn - res.mean_occupancy) < 0.01 * res.mean_occupancy


def test_deterministic_service_md1k_reference():
    # M/D/1/1 is an Erlang loss system: blocking = rho / (1 + rho) for any service law
    rho = 0.6
    res = simulate_queue(SimConfig(rho, ServiceDistribution.deterministic(1.0), 1, EVENTS, seed=8))
    assert _within(res.loss_prob, res.half_width["loss_prob"], rho / (1 + rho), k=3)


def test_truncnormal_mean_matches_scipy():
    svc = ServiceDistribution.truncnormal(1.0, 0.8)
    a = (0 - 1.0) / 0.8
    ref = stats.truncnorm(a, np.inf, loc=1.0, scale=0.8).mean()
    assert svc.mean_time == pytest.approx(ref, rel=1e-12)
    draws = svc.sample(np.random.default_rng(0), 200_000)
    assert draws.min() > 0
    assert draws.mean() == pytest.approx(ref, rel=5e-3)


@pytest.mark.parametrize("kind,args", [("exponential", (0.0,)), ("deterministic", (-1.0,)),
                                       ("truncnormal", (1.0, -0.1))])
def test_service_validation(kind, args):
    with pytest.raises(ValueError):
        getattr(ServiceDistribution, kind)(*args)


def test_service_roundtrip():
    svc = ServiceDistribution.truncnormal(0.002, 0.0005)
    assert ServiceDistribution.from_dict(svc.to_dict()) == svc


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(1.0, _exp(1.0), 3, measured_events=100)
    with pytest.raises(ValueError):
        SimConfig(1.0, _exp(1.0), 0)
    with pytest.raises(ValueError):
        SimConfig(-1.0, _exp(1.0), 3)


def test_degenerate_tandem_matches_single_queue():
    link = LinkSpec("a", _exp(1.0), 5)
    cfg = TandemConfig([link], [FlowSpec("f", ("a",), 0.7)], measured_events=300_000, seed=4)
    res = simulate_tandem(cfg).links["a"]
    hw = res.half_width
    assert _within(res.emp_pi0, hw["emp_pi0"], pi0(0.7, 5), k=3)
    assert _within(res.mean_occupancy, hw["mean_occupancy"], mean_occupancy(0.7, 5), k=3)


def test_two_link_series_delay_is_sum_of_sojourns():
    links = [LinkSpec("a", _exp(1.0), 8), LinkSpec("b", _exp(1.2), 8)]
    cfg = TandemConfig(links, [FlowSpec("f", ("a", "b"), 0.6)], measured_events=300_000,
                       seed=6)
    out = simulate_tandem(cfg)
    total = out.links["a"].mean_sojourn + out.links["b"].mean_sojourn
    hw = out.links["a"].half_width["mean_sojourn"] + out.links["b"].half_width["mean_sojourn"]
    assert abs(out.flow_delay["f"] - total) <= 2 * hw + 0.01 * total
    assert out.link_order == ["a", "b"]


def test_overloaded_k1_link_loses_most_packets():
    # analytic blocking for lambda = 10 mu, K = 1 is 10/11
    cfg = TandemConfig([LinkSpec("a", _exp(1.0), 1)], [FlowSpec("f", ("a",), 10.0)],
                       measured_events=50_000, seed=2)
    res = simulate_tandem(cfg).links["a"]
    assert res.loss_prob > 0.5
    assert res.loss_prob == pytest.approx(piK(10.0, 1), abs=0.02)


def test_cyclic_paths_rejected():
    links = [LinkSpec("a", _exp(1.0), 3), LinkSpec("b", _exp(1.0), 3)]
    flows = [FlowSpec("f", ("a", "b"), 0.1), FlowSpec("g", ("b", "a"), 0.1)]
    with pytest.raises(ValueError, match="cycl"):
        link_order(links, flows)
    with pytest.raises(ValueError):
        link_order(links, [FlowSpec("h", ("a", "b", "a"), 0.1)])


def test_tandem_determinism():
    links = [LinkSpec(x, _exp(1.0), 4) for x in "abc"]
    flows = [FlowSpec("f", ("a", "b", "c"), 0.3), FlowSpec("g", ("b",), 0.4)]
    cfg = TandemConfig(links, flows, measured_events=20_000, seed=12)
    a, b = simulate_tandem(cfg), simulate_tandem(cfg)
    assert a.flow_delay == b.flow_delay
    assert {k: asdict(v) for k, v in a.links.items()} == {k: asdict(v) for k, v in b.links.items()}
