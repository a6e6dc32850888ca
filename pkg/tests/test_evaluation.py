import csv

import numpy as np
import pytest

from linklat.data import Dataset, LinkSample, PathSample, split
from linklat.estimators import ExpPolyModel
from linklat.evaluation import (ExternalPredictions, benchmark, link_features, mape, mse,
                                plot_data, predict_link_delays, predict_path_delay,
                                predict_path_delays)
from linklat.generate import GridSpec, generate_dataset


class ConstantModel:
    """Predicts the same occupancy for every link."""

    parameter_count = 1

    def __init__(self, value):
        self.value = value

    def predict(self, x):
        return np.full(np.shape(x.rho_e), self.value)


def _link(i, occ=1.0, cap=1e6, size=1e3):
    return LinkSample(link_id=f"l{i}", network_id="n", lam=500.0, mu=1000.0, K=16,
                      capacity=cap, avg_packet_size=size, observed_occupancy=occ)


@pytest.fixture(scope="module")
def chains():
    grid = GridSpec(topologies=("chain", "single"), sizes=(4,),
                    loads=tuple(np.linspace(0.2, 0.95, 8)), measured_events=20_000)
    return generate_dataset(grid, seed=13)


@pytest.mark.parametrize("y_hat,y,expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([1.1, 1.8], [1.0, 2.0], 10.0),
    ([110.0, 180.0], [100.0, 200.0], 10.0),
])
def test_mape_examples(y_hat, y, expected):
    assert mape(y_hat, y) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("y_hat,y,expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([2.0, 3.0], [1.0, 2.0], 1.0),
    ([0.003], [0.0], 9e-6),
])
def test_mse_examples(y_hat, y, expected):
    assert mse(y_hat, y) == pytest.approx(expected, rel=1e-12, abs=0)


def test_metric_errors():
    with pytest.raises(ValueError, match="zero"):
        mape([1.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValueError, match="length"):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="empty"):
        mape([], [])


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(0)
    y = rng.uniform(0.1, 5, 50)
    y_hat = y * rng.uniform(0.8, 1.2, 50)
    perm = rng.permutation(50)
    assert mape(y_hat[perm], y[perm]) == pytest.approx(mape(y_hat, y), rel=1e-12)
    assert mse(y_hat[perm], y[perm]) == pytest.approx(mse(y_hat, y), rel=1e-12)


def test_single_link_path_delay():
    # 2 packets of 1000 bytes at 1e6 bytes/s: 2 ms
    ds = Dataset([_link(0)], [PathSample("f", ("l0",))])
    assert predict_path_delay(ConstantModel(2.0), ds, "f") == pytest.approx(2e-3)


def test_identical_links_double_delay():
    ds = Dataset([_link(0), _link(1)], [PathSample("f", ("l0",)), PathSample("g", ("l0", "l1"))])
    m = ConstantModel(3.0)
    assert predict_path_delay(m, ds, "g") == pytest.approx(2 * predict_path_delay(m, ds, "f"))


def test_path_delay_additive(chains):
    m = ExpPolyModel((0.1, 1.5, -0.2))
    index = chains.link_index()
    for p in chains.paths:
        per_link = predict_link_delays(m, [index[lid] for lid in p.link_ids])
        assert predict_path_delay(m, chains, p) == pytest.approx(per_link.sum(), rel=1e-12)
    vec = predict_path_delays(m, chains)
    assert vec == pytest.approx([predict_path_delay(m, chains, p) for p in chains.paths],
                                rel=1e-12)


def test_path_delay_errors():
    ds = Dataset([_link(0, cap=None)], [PathSample("f", ("l0",))])
    with pytest.raises(ValueError, match="capacity"):
        predict_path_delay(ConstantModel(1.0), ds, "f")
    with pytest.raises(KeyError):
        predict_path_delay(ConstantModel(1.0), ds, "ghost")
    with pytest.raises(ValueError, match="missing link metadata"):
        predict_path_delay(ConstantModel(1.0), Dataset([_link(0)]),
                           PathSample("f", ("l0", "l9")))


def test_negative_occupancy_is_floored():
    ds = Dataset([_link(0)], [PathSample("f", ("l0",))])
    assert predict_path_delay(ConstantModel(-1.0), ds, "f") == 0.0


def test_path_error_bounded_by_worst_link_error(chains):
    """A path delay is a sum of link delays, so its relative error is a convex
    combination of the per-link errors, up to simulation noise in the labels."""
    m = ExpPolyModel((0.05, 1.0, 0.5))
    index = chains.link_index()
    for p in chains.paths:
        links = [index[lid] for lid in p.link_ids]
        pred = predict_link_delays(m, links)
        obs = np.array([l.observed_delay for l in links])
        worst = np.max(np.abs(pred - obs) / obs)
        path_err = abs(pred.sum() - p.observed_end_to_end_delay) / p.observed_end_to_end_delay
        assert path_err <= worst + 0.1


def test_benchmark_is_deterministic(chains):
    train, test = split(chains, (0.7, 0.3), seed=1)
    models = ["linear:features=pi0,L,Se", "exp-poly:degree=3", "bernstein:K=8",
              "implicit:N=6,max_iter=200"]
    a = benchmark(models, train, test, seed=5)
    b = benchmark(models, train, test, seed=5)
    assert [r.metrics() for r in a.rows] == [r.metrics() for r in b.rows]
    assert all(r.error is None and r.path_mape is not None for r in a.rows)
    mapes = [r.mape for r in a.rows]
    assert mapes == sorted(mapes)


def test_benchmark_parameter_counts():
    grid = GridSpec(loads=tuple(np.linspace(0.1, 1.2, 60)), measured_events=10_000)
    train, test = split(generate_dataset(grid, seed=2), (0.7, 0.3), seed=2)
    with pytest.warns(UserWarning):
        rep = benchmark(["linear", "bernstein", "implicit:N=12,max_iter=50"], train, test)
    assert (rep.row("linear").params, rep.row("linear").params_weights_only) == (5, 4)
    assert rep.row("bernstein(K=32)").params == 33
    assert rep.row("implicit(N=12,alpha=1e-05)").params == 24
    assert "5 (4)" in rep.format_table()


def test_benchmark_failure_row(chains):
    train, test = split(chains, (0.7, 0.3), seed=3)
    tiny = Dataset(train.links[:2])
    rep = benchmark(["exp-poly:degree=8", "exp-poly:degree=1"], tiny, test)
    assert rep.rows[-1].error is not None and rep.rows[-1].mape is None
    assert rep.rows[0].error is None
    assert "FAILED" in rep.format_table()


def test_benchmark_external_rows(chains, tmp_path):
    train, test = split(chains, (0.7, 0.3), seed=4)
    exact = ExternalPredictions("oracle", {l.link_id: l.observed_occupancy for l in test.links},
                                parameter_count=0)
    partial = ExternalPredictions("partial", {test.links[0].link_id: 1.0})
    rep = benchmark(["exp-poly:degree=2"], train, test, external=[exact, partial])
    assert rep.rows[0].model == "oracle" and rep.rows[0].mape == 0.0
    assert rep.row("partial").error.startswith("no prediction")
    path = rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(path.open()))
    assert [r["model"] for r in rows] == [r.model for r in rep.rows]
    assert float(rows[1]["mape"]) == rep.rows[1].mape


def test_benchmark_rejects_bad_inputs(chains):
    train, test = split(chains, (0.7, 0.3), seed=4)
    with pytest.raises(ValueError, match="no models"):
        benchmark([], train, test)
    with pytest.raises(ValueError, match="non-empty"):
        benchmark(["mm1k"], train, Dataset([]))
    with pytest.raises(ValueError, match="positive"):
        benchmark(["mm1k"], train, Dataset([_link(0, occ=0.0)]))


def test_plot_data(chains, tmp_path):
    m = ExpPolyModel((0.0, 1.0))
    out = plot_data(m, chains, tmp_path / "p.csv")
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == len(chains.links)
    rho = link_features(chains.links).rho_e
    assert float(rows[0]["rho_e"]) == rho[0]
    assert float(rows[0]["y_hat"]) == pytest.approx(np.exp(rho[0]))
