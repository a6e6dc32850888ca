import numpy as np
import pytest

from linklat.data import concat
from linklat.generate import GridSpec, build_network, generate_dataset
from linklat.queueing import mean_occupancy
from linklat.sim import make_rng


def test_ten_single_queues_reproducible():
    grid = GridSpec(topologies=("single",), loads=tuple(np.linspace(0.1, 1.0, 10)))
    a = generate_dataset(grid, seed=7)
    b = generate_dataset(grid, seed=7)
    assert len(a.links) == 10
    assert a.links == b.links and a.paths == b.paths and a.meta == b.meta
    assert generate_dataset(grid, seed=8).links != a.links


def test_thread_count_does_not_change_results():
    grid = GridSpec(topologies=("chain", "single"), sizes=(3,), loads=(0.4, 0.8))
    assert generate_dataset(grid, seed=1, threads=1).links == \
        generate_dataset(grid, seed=1, threads=3).links


def test_empty_grid():
    with pytest.raises(ValueError, match="zero samples"):
        generate_dataset(GridSpec(loads=()), seed=0)


def test_meta_records_generator_and_seed():
    ds = generate_dataset(GridSpec(), seed=5)
    assert ds.meta["seed"] == 5 and ds.meta["generator_version"]
    assert GridSpec.from_dict(ds.meta["grid"]) == GridSpec()


@pytest.mark.parametrize("rho", [0.3, 0.8, 1.05])
def test_mm1k_observed_occupancy_matches_textbook(rho):
    grid = GridSpec(topologies=("single",), loads=(rho,), Ks=(10,), measured_events=400_000)
    link = generate_dataset(grid, seed=2).links[0]
    # the label is a time average, the analytic mean uses the nominal load
    assert link.observed_occupancy == pytest.approx(mean_occupancy(rho, 10), rel=0.03)
    assert link.lam == pytest.approx(rho * link.mu, rel=0.01)


def test_network_templates_hit_target_loads():
    grid = GridSpec(topologies=("star",), sizes=(4,), loads=(0.6,))
    links, flows = build_network("x", "star", 4, 0.6, 1000.0, 32, "exponential", grid,
                                 make_rng(0))
    load = {l.link_id: 0.0 for l in links}
    for f in flows:
        for lid in f.path:
            load[lid] += f.rate
    assert all(v == pytest.approx(600.0) for v in load.values())
    assert any(len(f.path) == 2 for f in flows)


def test_every_link_and_flow_recorded():
    grid = GridSpec(topologies=("dag", "chain"), sizes=(5,), loads=(0.5,),
                    services=("truncnormal",))
    ds = generate_dataset(grid, seed=4)
    assert len(ds.links) == 10
    index = ds.link_index()
    for p in ds.paths:
        assert all(lid in index for lid in p.link_ids)
    assert all(l.capacity > 0 and l.avg_packet_size > 0 for l in ds.links)
    assert all(l.avg_packet_size / l.capacity == pytest.approx(1 / l.mu) for l in ds.links)


def test_prefixes_allow_concatenation():
    a = generate_dataset(GridSpec(), seed=1, prefix="a")
    b = generate_dataset(GridSpec(), seed=1, prefix="b")
    both = concat([a, b])
    assert len(both.links) == 2
    with pytest.raises(ValueError):
        concat([a, a])
