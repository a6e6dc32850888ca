"""Error metrics, path-delay assembly and benchmark reports."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Dataset, PathSample
from .estimators import fit_spec, parse_model_spec
from .queueing import FeatureBatch, featurize_arrays, occupancy_to_delay

__all__ = [
    "mape",
    "mse",
    "link_features",
    "predict_link_delays",
    "predict_path_delay",
    "predict_path_delays",
    "ExternalPredictions",
    "ReportRow",
    "EvalReport",
    "benchmark",
    "plot_data",
]


def _pair(y_hat, y):
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.size} predictions for {y.size} targets")
    if y.size == 0:
        raise ValueError("empty inputs")
    return y_hat, y


def mape(y_hat, y) -> float:
    """Mean absolute percentage error, in percent."""
    y_hat, y = _pair(y_hat, y)
    if np.any(y == 0):
        raise ValueError("MAPE is undefined for zero targets; filter them first "
                         "(see linklat.data.drop_zero_labels)")
    return float(100.0 * np.mean(np.abs(y_hat - y) / np.abs(y)))


def mse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.mean((y_hat - y) ** 2))


def link_features(links: Sequence) -> FeatureBatch:
    lam = np.array([l.lam for l in links], dtype=float)
    mu = np.array([l.mu for l in links], dtype=float)
    K = np.array([l.K for l in links], dtype=np.int64)
    return featurize_arrays(lam, mu, K)


def predict_link_delays(model, links: Sequence) -> np.ndarray:
    """Predicted per-link delays (seconds) for a sequence of link samples."""
    for l in links:
        if l.capacity is None or l.avg_packet_size is None:
            raise ValueError(f"link {l.link_id!r} lacks capacity or avg_packet_size")
    occ = np.atleast_1d(model.predict(link_features(links)))
    size = np.array([l.avg_packet_size for l in links], dtype=float)
    cap = np.array([l.capacity for l in links], dtype=float)
    # a fitted curve can dip below zero far from its data; delay is floored at 0
    return np.atleast_1d(occupancy_to_delay(np.maximum(occ, 0.0), size, cap))


def predict_path_delay(model, dataset: Dataset, flow) -> float:
    """Predicted end-to-end delay: the sum of the path's predicted link delays."""
    if not isinstance(flow, PathSample):
        matches = [p for p in dataset.paths if p.flow_id == flow]
        if not matches:
            raise KeyError(f"unknown flow {flow!r}")
        flow = matches[0]
    index = dataset.link_index()
    missing = [lid for lid in flow.link_ids if lid not in index]
    if missing:
        raise ValueError(f"flow {flow.flow_id!r}: missing link metadata for {missing}")
    links = [index[lid] for lid in flow.link_ids]
    return float(np.sum(predict_link_delays(model, links)))


def predict_path_delays(model, dataset: Dataset, paths: Optional[Sequence[PathSample]] = None):
    """Vectorised :func:`predict_path_delay` over ``paths`` (default: all)."""
    paths = dataset.paths if paths is None else paths
    index = dataset.link_index()
    used = sorted({lid for p in paths for lid in p.link_ids})
    missing = [lid for lid in used if lid not in index]
    if missing:
        raise ValueError(f"missing link metadata for {missing[:5]}")
    if not used:
        return np.zeros(0)
    per_link = dict(zip(used, predict_link_delays(model, [index[lid] for lid in used])))
    return np.array([sum(per_link[lid] for lid in p.link_ids) for p in paths])


@dataclass
class ExternalPredictions:
    """Occupancy predictions produced outside this library (e.g. a baseline)."""

    name: str
    predictions: Mapping[str, float]  # link_id -> predicted occupancy
    parameter_count: Optional[int] = None
    input_features: str = "external"


@dataclass
class ReportRow:
    model: str
    input_features: str
    params: Optional[int] = None
    params_weights_only: Optional[int] = None
    mape: Optional[float] = None
    mse: Optional[float] = None
    path_mape: Optional[float] = None
    path_mse: Optional[float] = None
    fit_seconds: Optional[float] = None
    inference_seconds: Optional[float] = None
    path_inference_seconds: Optional[float] = None
    n_train: int = 0
    n_test: int = 0
    n_test_paths: int = 0
    error: Optional[str] = None

    TIMING = ("fit_seconds", "inference_seconds", "path_inference_seconds")

    def metrics(self) -> dict:
        """All fields except wall-clock timings."""
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in self.TIMING}


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    COLUMNS = tuple(f.name for f in fields(ReportRow))

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.model == name:
                return r
        raise KeyError(name)

    def write_csv(self, path) -> Path:
        out = Path(path)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow(["" if getattr(r, c) is None else
                            repr(getattr(r, c)) if isinstance(getattr(r, c), float)
                            else getattr(r, c) for c in self.COLUMNS])
        return out

    def format_table(self) -> str:
        head = ("model", "inputs", "params", "MAPE %", "MSE", "path MAPE %",
                "fit s", "infer s", "status")
        body = []
        for r in self.rows:
            body.append((
                r.model,
                r.input_features,
                "-" if r.params is None else (
                    str(r.params) if r.params == r.params_weights_only or
                    r.params_weights_only is None else
                    f"{r.params} ({r.params_weights_only})"),
                "-" if r.mape is None else f"{r.mape:.3f}",
                "-" if r.mse is None else f"{r.mse:.3e}",
                "-" if r.path_mape is None else f"{r.path_mape:.3f}",
                "-" if r.fit_seconds is None else f"{r.fit_seconds:.3f}",
                "-" if r.inference_seconds is None else f"{r.inference_seconds:.3f}",
                "ok" if r.error is None else f"FAILED: {r.error}",
            ))
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
                  for i, h in enumerate(head)]
        line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [line(head), line(tuple("-" * w for w in widths))]
        out += [line(b) for b in body]
        return "\n".join(out) + "\n"


def _targets(ds: Dataset) -> np.ndarray:
    return np.array([l.observed_occupancy for l in ds.links], dtype=float)


def _eval_one(spec, train: Dataset, test: Dataset, f_train, f_test, y_train, y_test,
              paths, path_y, seed) -> ReportRow:
    row = ReportRow(model=spec.name, input_features=",".join(spec.input_features),
                    n_train=len(y_train), n_test=len(y_test), n_test_paths=len(paths))
    try:
        rep = fit_spec(spec, f_train, y_train, seed=seed)
    except Exception as exc:  # reported, not raised
        row.error = f"{type(exc).__name__}: {exc}"
        return row
    model = rep.model
    row.fit_seconds = rep.fit_seconds
    row.params = model.parameter_count
    row.params_weights_only = getattr(model, "parameter_count_weights", model.parameter_count)
    try:
        t0 = time.perf_counter()
        pred = np.asarray(model.predict(f_test), dtype=float)
        row.inference_seconds = time.perf_counter() - t0
        row.mape = mape(pred, y_test)
        row.mse = mse(pred, y_test)
        if paths:
            t0 = time.perf_counter()
            d_hat = predict_path_delays(model, test, paths)
            row.path_inference_seconds = time.perf_counter() - t0
            row.path_mape = mape(d_hat, path_y)
            row.path_mse = mse(d_hat, path_y)
    except Exception as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def _eval_external(ext: ExternalPredictions, test: Dataset, y_test) -> ReportRow:
    row = ReportRow(model=ext.name, input_features=ext.input_features,
                    params=ext.parameter_count, params_weights_only=ext.parameter_count,
                    n_test=len(y_test))
    missing = [l.link_id for l in test.links if l.link_id not in ext.predictions]
    if missing:
        row.error = f"no prediction for {len(missing)} test link(s), e.g. {missing[0]!r}"
        return row
    pred = np.array([ext.predictions[l.link_id] for l in test.links], dtype=float)
    row.mape = mape(pred, y_test)
    row.mse = mse(pred, y_test)
    return row


def benchmark(models: Sequence, train: Dataset, test: Dataset, seed: int = 0,
              external: Sequence[ExternalPredictions] = (), threads: int = 1) -> EvalReport:
    """Fit every model on ``train`` and score it on ``test``.

    ``models`` holds :class:`ModelSpec` objects or spec strings.  Occupancy
    metrics use the labelled test links; when test flows carry delay labels,
    end-to-end delay metrics are reported too.  A model that fails to fit or
    predict yields a row with ``error`` set.  Rows are sorted by MAPE, failed
    rows last.
    """
    specs = [parse_model_spec(m) if isinstance(m, str) else m for m in models]
    if not specs and not external:
        raise ValueError("no models to evaluate")
    if not train.links or not test.links:
        raise ValueError("train and test splits must be non-empty")
    y_train, y_test = _targets(train), _targets(test)
    if np.any(y_train <= 0) or np.any(y_test <= 0):
        raise ValueError("occupancy targets must be positive; "
                         "filter with linklat.data.drop_zero_labels")
    f_train, f_test = link_features(train.links), link_features(test.links)
    paths = [p for p in test.paths if p.observed_end_to_end_delay]
    path_y = np.array([p.observed_end_to_end_delay for p in paths], dtype=float)
    job = lambda spec: _eval_one(spec, train, test, f_train, f_test, y_train, y_test,
                                 paths, path_y, seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, specs))
    else:
        rows = [job(s) for s in specs]
    rows += [_eval_external(e, test, y_test) for e in external]
    rows.sort(key=lambda r: (r.error is not None,
                             math.inf if r.mape is None else r.mape, r.model))
    return EvalReport(rows)


def plot_data(model, dataset: Dataset, path) -> Path:
    """Write ``rho_e, y, y_hat`` triples for a scatter of the fitted curve."""
    feats = link_features(dataset.links)
    y = _targets(dataset)
    y_hat = np.atleast_1d(model.predict(feats))
    out = Path(path)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("link_id", "rho_e", "y", "y_hat"))
        for l, r, a, b in zip(dataset.links, feats.rho_e, y, y_hat):
            w.writerow((l.link_id, repr(float(r)), repr(float(a)), repr(float(b))))
    return out
