"""On-disk formats for labelled link/path samples and fitted models.

A dataset is a directory holding

``links.csv``
    one row per link sample, header ``LINK_COLUMNS``;
``paths.csv``
    one row per flow, header ``PATH_COLUMNS``, the ``link_ids`` cell lists the
    traversed links in order separated by ``;``;
``meta.json``
    a small key/value sidecar with at least ``schema_version`` and ``source``.

Units are fixed: bits, bits/second, packets/second and seconds.  Floats are
written with ``repr`` (shortest round-trip form) so a save/load cycle is
bit-exact; optional values are empty cells.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .queueing import LinkTraffic

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
MODEL_FORMAT = "linklat-model"

LINK_COLUMNS = (
    "link_id",
    "network_id",
    "role",
    "lambda",
    "mu",
    "K",
    "capacity",
    "avg_packet_size",
    "observed_occupancy",
    "observed_delay",
    "observed_loss",
)
PATH_COLUMNS = ("flow_id", "network_id", "link_ids", "observed_end_to_end_delay")


class DatasetError(ValueError):
    """Malformed, inconsistent or incompatible dataset content."""


class SchemaVersionError(DatasetError):
    pass


@dataclass(frozen=True)
class LinkSample:
    link_id: str
    lam: float
    K: int
    observed_occupancy: float
    mu: Optional[float] = None
    capacity: Optional[float] = None
    avg_packet_size: Optional[float] = None
    observed_delay: Optional[float] = None
    observed_loss: Optional[float] = None
    network_id: str = ""

    def __post_init__(self):
        try:
            traffic = self.traffic()
        except ValueError as exc:
            raise DatasetError(f"link {self.link_id!r}: {exc}") from None
        if self.mu is None:
            object.__setattr__(self, "mu", traffic.mu)
        for name in ("observed_occupancy", "observed_delay", "observed_loss"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise DatasetError(f"link {self.link_id!r}: {name} must be finite and >= 0, got {v!r}")
        if self.observed_occupancy > self.K:
            raise DatasetError(f"link {self.link_id!r}: observed_occupancy "
                               f"{self.observed_occupancy!r} exceeds K={self.K}")
        if self.observed_loss is not None and self.observed_loss > 1:
            raise DatasetError(f"link {self.link_id!r}: observed_loss above 1")

    def traffic(self) -> LinkTraffic:
        return LinkTraffic(lam=self.lam, K=self.K, mu=self.mu, capacity=self.capacity,
                           avg_packet_size=self.avg_packet_size)


@dataclass(frozen=True)
class PathSample:
    flow_id: str
    link_ids: tuple
    observed_end_to_end_delay: Optional[float] = None
    network_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "link_ids", tuple(self.link_ids))
        if not self.link_ids:
            raise DatasetError(f"flow {self.flow_id!r}: empty link list")
        d = self.observed_end_to_end_delay
        if d is not None and not (math.isfinite(d) and d >= 0):
            raise DatasetError(f"flow {self.flow_id!r}: invalid delay {d!r}")


@dataclass
class Dataset:
    """Labelled link samples plus flows over them.

    ``context_links`` only exists on split datasets: links referenced by this
    split's flows whose labelled sample belongs to the other split.  They are
    used for path-delay prediction (inputs only) and never for link metrics.
    """

    links: list
    paths: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    context_links: list = field(default_factory=list)

    def __post_init__(self):
        self.meta.setdefault("schema_version", SCHEMA_VERSION)
        self.meta.setdefault("source", "simulated")
        self.validate()

    def validate(self) -> None:
        if "schema_version" not in self.meta:
            raise DatasetError("meta.schema_version is missing")
        ids = set()
        for l in list(self.links) + list(self.context_links):
            if l.link_id in ids:
                raise DatasetError(f"duplicate link_id {l.link_id!r}")
            ids.add(l.link_id)
        seen = set()
        for p in self.paths:
            if p.flow_id in seen:
                raise DatasetError(f"duplicate flow_id {p.flow_id!r}")
            seen.add(p.flow_id)
            for lid in p.link_ids:
                if lid not in ids:
                    raise DatasetError(f"flow {p.flow_id!r} references unknown link {lid!r}")

    def link_index(self) -> dict:
        out = {l.link_id: l for l in self.context_links}
        out.update((l.link_id, l) for l in self.links)
        return out

    def arrays(self) -> dict:
        """Columns of the labelled links as float arrays (None -> NaN)."""
        def col(attr):
            return np.array([np.nan if getattr(l, attr) is None else getattr(l, attr)
                             for l in self.links], dtype=float)
        return {
            "lam": col("lam"),
            "mu": col("mu"),
            "K": col("K"),
            "capacity": col("capacity"),
            "avg_packet_size": col("avg_packet_size"),
            "occupancy": col("observed_occupancy"),
            "delay": col("observed_delay"),
        }


# ---------------------------------------------------------------------------
# text encoding


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_float(s: str, name: str, where: str, optional: bool = True) -> Optional[float]:
    s = s.strip()
    if s == "":
        if optional:
            return None
        raise DatasetError(f"{where}: missing value for {name!r}")
    try:
        return float(s)
    except ValueError:
        raise DatasetError(f"{where}: {name!r} is not a number: {s!r}") from None


def _parse_int(s: str, name: str, where: str) -> int:
    v = _parse_float(s, name, where, optional=False)
    if not v.is_integer():
        raise DatasetError(f"{where}: {name!r} must be an integer, got {s!r}")
    return int(v)


def _link_row(l: LinkSample, role: str) -> list:
    return [l.link_id, l.network_id, role, _fmt(l.lam), _fmt(l.mu), str(l.K),
            _fmt(l.capacity), _fmt(l.avg_packet_size), _fmt(l.observed_occupancy),
            _fmt(l.observed_delay), _fmt(l.observed_loss)]


def save(dataset: Dataset, path) -> Path:
    """Write ``dataset`` into directory ``path`` (created if needed)."""
    dataset.validate()
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "links.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINK_COLUMNS)
        for l in dataset.links:
            w.writerow(_link_row(l, "sample"))
        for l in dataset.context_links:
            w.writerow(_link_row(l, "context"))
    with open(out / "paths.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for p in dataset.paths:
            w.writerow([p.flow_id, p.network_id, ";".join(p.link_ids),
                        _fmt(p.observed_end_to_end_delay)])
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(dataset.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _check_header(header: Sequence[str], expected: Sequence[str], fname: str) -> None:
    if list(header) != list(expected):
        raise DatasetError(f"{fname}: unexpected header {header!r}, expected {list(expected)!r}")


def load(path) -> Dataset:
    src = Path(path)
    try:
        with open(src / "meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{src}: meta.json not found") from None
    version = str(meta.get("schema_version"))
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{src}: schema_version {version!r} is not supported "
            f"(this library reads schema_version {SCHEMA_VERSION!r})")
    links, context = [], []
    with open(src / "links.csv", newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        _check_header(next(rows, []), LINK_COLUMNS, "links.csv")
        for lineno, row in enumerate(rows, start=2):
            where = f"links.csv line {lineno}"
            if len(row) != len(LINK_COLUMNS):
                raise DatasetError(f"{where}: expected {len(LINK_COLUMNS)} fields, got {len(row)}")
            rec = dict(zip(LINK_COLUMNS, row))
            occ = _parse_float(rec["observed_occupancy"], "observed_occupancy", where, optional=False)
            try:
                sample = LinkSample(
                    link_id=rec["link_id"],
                    network_id=rec["network_id"],
                    lam=_parse_float(rec["lambda"], "lambda", where, optional=False),
                    mu=_parse_float(rec["mu"], "mu", where),
                    K=_parse_int(rec["K"], "K", where),
                    capacity=_parse_float(rec["capacity"], "capacity", where),
                    avg_packet_size=_parse_float(rec["avg_packet_size"], "avg_packet_size", where),
                    observed_occupancy=occ,
                    observed_delay=_parse_float(rec["observed_delay"], "observed_delay", where),
                    observed_loss=_parse_float(rec["observed_loss"], "observed_loss", where),
                )
            except DatasetError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            if rec["role"] == "sample":
                links.append(sample)
            elif rec["role"] == "context":
                context.append(sample)
            else:
                raise DatasetError(f"{where}: unknown role {rec['role']!r}")
    paths = []
    paths_file = src / "paths.csv"
    if paths_file.exists():
        with open(paths_file, newline="", encoding="utf-8") as fh:
            rows = csv.reader(fh)
            _check_header(next(rows, []), PATH_COLUMNS, "paths.csv")
            for lineno, row in enumerate(rows, start=2):
                where = f"paths.csv line {lineno}"
                if len(row) != len(PATH_COLUMNS):
                    raise DatasetError(f"{where}: expected {len(PATH_COLUMNS)} fields, got {len(row)}")
                rec = dict(zip(PATH_COLUMNS, row))
                try:
                    paths.append(PathSample(
                        flow_id=rec["flow_id"],
                        network_id=rec["network_id"],
                        link_ids=tuple(x for x in rec["link_ids"].split(";") if x),
                        observed_end_to_end_delay=_parse_float(
                            rec["observed_end_to_end_delay"], "observed_end_to_end_delay", where),
                    ))
                except DatasetError as exc:
                    raise DatasetError(f"{where}: {exc}") from None
    return Dataset(links=links, paths=paths, meta=meta, context_links=context)


# ---------------------------------------------------------------------------
# splits


def _check_fractions(fractions) -> tuple[float, float]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 2 or any(not (0 < f < 1) for f in fr) or abs(sum(fr) - 1) > 1e-9:
        raise ValueError(f"fractions must be two values in (0, 1) summing to 1, got {fractions!r}")
    return fr


def _with_context(links, paths, all_links, meta) -> Dataset:
    own = {l.link_id for l in links}
    needed = []
    for p in paths:
        for lid in p.link_ids:
            if lid not in own:
                own.add(lid)
                needed.append(all_links[lid])
    return Dataset(links=list(links), paths=list(paths), meta=meta, context_links=needed)


def split(dataset: Dataset, fractions=(0.8, 0.2), seed: int = 0, mode: str = "iid"):
    """Partition ``dataset`` into ``(train, test)``.

    ``mode="iid"`` shuffles links and flows independently.  ``mode="by-size"``
    (alias ``"by-topology"``) keeps every network whole and sends the largest
    networks to the test side until its share is reached, reproducing a
    train/test shift in topology size.
    """
    f_train, _ = _check_fractions(fractions)
    all_links = dataset.link_index()
    base_meta = dict(dataset.meta)
    n = len(dataset.links)
    if mode == "iid":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        n_train = int(round(f_train * n))
        perm = rng.permutation(n)
        in_train = np.zeros(n, dtype=bool)
        in_train[perm[:n_train]] = True
        m = len(dataset.paths)
        m_train = int(round(f_train * m))
        pperm = rng.permutation(m)
        p_train = np.zeros(m, dtype=bool)
        p_train[pperm[:m_train]] = True
        parts = []
        for side, lmask, pmask in (("train", in_train, p_train), ("test", ~in_train, ~p_train)):
            links = [l for l, keep in zip(dataset.links, lmask) if keep]
            paths = [p for p, keep in zip(dataset.paths, pmask) if keep]
            parts.append(_with_context(links, paths, all_links,
                                       {**base_meta, "split": side, "split_seed": seed,
                                        "split_mode": mode}))
        return parts[0], parts[1]
    if mode not in ("by-size", "by-topology"):
        raise ValueError(f"unknown split mode {mode!r}")
    sizes: dict = {}
    for l in dataset.links:
        sizes[l.network_id] = sizes.get(l.network_id, 0) + 1
    first_seen = {nid: i for i, nid in reversed(list(enumerate(l.network_id for l in dataset.links)))}
    ordered = sorted(sizes, key=lambda nid: (sizes[nid], first_seen[nid]))
    target = f_train * n
    train_nets, count = set(), 0
    for nid in ordered:
        if count + sizes[nid] > target + 1e-9 and count > 0:
            break
        train_nets.add(nid)
        count += sizes[nid]
    if len(train_nets) == len(sizes):
        raise ValueError("by-size split put every network in train; use more networks")
    parts = []
    for side, pick in (("train", lambda nid: nid in train_nets),
                       ("test", lambda nid: nid not in train_nets)):
        links = [l for l in dataset.links if pick(l.network_id)]
        paths = [p for p in dataset.paths if pick(p.network_id)]
        parts.append(_with_context(links, paths, all_links,
                                   {**base_meta, "split": side, "split_seed": seed,
                                    "split_mode": mode}))
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# flat-file import


REQUIRED_FIELDS = ("lambda", "K", "observed_occupancy")
OPTIONAL_FIELDS = ("link_id", "network_id", "mu", "capacity", "avg_packet_size",
                   "observed_delay", "observed_loss")


def import_flat(path, column_map: Optional[Mapping[str, str]] = None,
                delimiter: Optional[str] = None, paths_file=None) -> Dataset:
    """Build a dataset from a delimited text export with a header row.

    ``column_map`` maps canonical field names (``lambda``, ``mu``, ``K``, ...)
    to the file's column names; unmapped fields are looked up under their
    canonical name.  Rows violating the link invariants are skipped; the
    number skipped lands in ``meta["rejected_rows"]`` and the first ten
    reasons are logged.  ``paths_file`` optionally supplies flows with
    columns ``flow_id``, ``link_ids`` and ``observed_end_to_end_delay``.
    """
    column_map = dict(column_map or {})
    src = Path(path)
    with open(src, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t|").delimiter
        except (csv.Error, IndexError):
            delimiter = ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    header = [h.strip() for h in next(reader, [])]
    col = {}
    for name in REQUIRED_FIELDS + OPTIONAL_FIELDS:
        src_name = column_map.get(name, name)
        if src_name in header:
            col[name] = header.index(src_name)
        elif name in REQUIRED_FIELDS or name in column_map:
            raise DatasetError(f"{src.name}: required column {name!r} "
                               f"(mapped to {src_name!r}) is missing")
    if "mu" not in col and not ("capacity" in col and "avg_packet_size" in col):
        raise DatasetError(f"{src.name}: need column 'mu' or both 'capacity' and 'avg_packet_size'")

    links, rejected = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{src.name} line {lineno}"
        try:
            if len(row) < len(header):
                raise DatasetError(f"expected {len(header)} fields, got {len(row)}")
            get = lambda name: row[col[name]] if name in col else ""
            links.append(LinkSample(
                link_id=get("link_id").strip() or f"row{lineno}",
                network_id=get("network_id").strip(),
                lam=_parse_float(get("lambda"), "lambda", where, optional=False),
                mu=_parse_float(get("mu"), "mu", where),
                K=_parse_int(get("K"), "K", where),
                capacity=_parse_float(get("capacity"), "capacity", where),
                avg_packet_size=_parse_float(get("avg_packet_size"), "avg_packet_size", where),
                observed_occupancy=_parse_float(get("observed_occupancy"), "observed_occupancy",
                                                where, optional=False),
                observed_delay=_parse_float(get("observed_delay"), "observed_delay", where),
                observed_loss=_parse_float(get("observed_loss"), "observed_loss", where),
            ))
        except DatasetError as exc:
            rejected.append(f"{where}: {exc}")
    if rejected:
        log.warning("%s: rejected %d row(s); first %d: %s", src.name, len(rejected),
                    min(10, len(rejected)), "; ".join(rejected[:10]))
    if not links:
        raise DatasetError(f"{src.name}: no valid rows ({len(rejected)} rejected)")
    paths = []
    if paths_file is not None:
        with open(paths_file, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh, delimiter=delimiter):
                d = rec.get("observed_end_to_end_delay", "")
                paths.append(PathSample(
                    flow_id=rec["flow_id"], network_id=rec.get("network_id", "") or "",
                    link_ids=tuple(x for x in rec["link_ids"].split(";") if x),
                    observed_end_to_end_delay=float(d) if d.strip() else None))
    meta = {"schema_version": SCHEMA_VERSION, "source": "imported",
            "origin": src.name, "rejected_rows": len(rejected)}
    return Dataset(links=links, paths=paths, meta=meta)


def concat(datasets: Sequence[Dataset], meta: Optional[dict] = None) -> Dataset:
    """Union of datasets with disjoint ids; ``meta`` defaults to a list of the parts' metas."""
    if not datasets:
        raise ValueError("nothing to concatenate")
    links = [l for d in datasets for l in d.links]
    paths = [p for d in datasets for p in d.paths]
    if meta is None:
        sources = {d.meta.get("source") for d in datasets}
        if len(sources) != 1:
            raise ValueError(f"cannot concatenate datasets from sources {sorted(sources)}")
        meta = {"schema_version": SCHEMA_VERSION, "source": sources.pop(),
                "parts": [d.meta for d in datasets]}
    return Dataset(links=links, paths=paths, meta=meta)


def drop_zero_labels(dataset: Dataset) -> tuple[Dataset, int]:
    """Remove links whose occupancy label is 0 (MAPE is undefined there).

    Flows through a removed link are dropped too.  Returns the filtered
    dataset and the number of links removed.
    """
    keep = [l for l in dataset.links if l.observed_occupancy > 0]
    gone = {l.link_id for l in dataset.links} - {l.link_id for l in keep}
    paths = [p for p in dataset.paths if not gone.intersection(p.link_ids)]
    kept_ctx = [l for l in dataset.context_links]
    meta = {**dataset.meta, "dropped_zero_labels": len(gone)}
    out = Dataset(links=keep, paths=paths, meta=meta, context_links=kept_ctx)
    return out, len(gone)


# ---------------------------------------------------------------------------
# model documents


def model_to_document(model, training: Optional[dict] = None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "parameter_count": model.parameter_count,
        "parameters": model.to_dict(),
    }
    if training:
        doc["training"] = training
    return doc


def save_model(model, path, training: Optional[dict] = None) -> Path:
    out = Path(path)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(model_to_document(model, training), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_model(path):
    from .estimators import model_from_dict

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise DatasetError(f"{path}: not a model document")
    version = str(doc.get("schema_version"))
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: model schema_version {version!r} is not supported "
            f"(this library reads schema_version {SCHEMA_VERSION!r})")
    return model_from_dict(doc["kind"], doc["parameters"])
