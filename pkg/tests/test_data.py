import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from linklat.data import (LINK_COLUMNS, PATH_COLUMNS, Dataset, DatasetError, LinkSample,
                          PathSample, SchemaVersionError, drop_zero_labels, import_flat, load,
                          load_model, save, save_model, split)
from linklat.estimators import BasisModel, ExpPolyModel, ImplicitModel, LinearModel
from linklat.generate import GridSpec, generate_dataset


def _link(i, net="n0", occ=1.0, K=8, lam=0.5):
    return LinkSample(link_id=f"{net}/l{i}", network_id=net, lam=lam, mu=1.0, K=K,
                      capacity=1e6, avg_packet_size=1e3, observed_occupancy=occ)


def _small_dataset():
    links = [_link(i) for i in range(3)]
    paths = [PathSample("n0/f0", ("n0/l0", "n0/l1"), 0.01, "n0"),
             PathSample("n0/f1", ("n0/l2",), None, "n0")]
    return Dataset(links, paths, {"seed": 3})


@pytest.fixture(scope="module")
def generated():
    grid = GridSpec(topologies=("single",), loads=tuple(0.1 * i for i in range(1, 11)))
    return generate_dataset(grid, seed=42)


def test_documented_headers():
    assert LINK_COLUMNS == ("link_id", "network_id", "role", "lambda", "mu", "K", "capacity",
                            "avg_packet_size", "observed_occupancy", "observed_delay",
                            "observed_loss")
    assert PATH_COLUMNS == ("flow_id", "network_id", "link_ids", "observed_end_to_end_delay")


def test_roundtrip_generated(tmp_path, generated):
    assert len(generated.links) == 10
    save(generated, tmp_path / "ds")
    back = load(tmp_path / "ds")
    assert back.links == generated.links
    assert back.paths == generated.paths
    assert back.meta == generated.meta


finite = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 6))
    links = []
    for i in range(n):
        K = draw(st.integers(1, 64))
        links.append(LinkSample(
            link_id=f"l{i}", network_id=draw(st.sampled_from(["a", "b"])),
            lam=draw(finite), mu=draw(finite), K=K,
            capacity=draw(st.one_of(st.none(), finite)),
            avg_packet_size=draw(st.one_of(st.none(), finite)),
            observed_occupancy=draw(st.floats(0, K)),
            observed_delay=draw(st.one_of(st.none(), finite)),
            observed_loss=draw(st.one_of(st.none(), st.floats(0, 1)))))
    ids = [l.link_id for l in links]
    paths = [PathSample(f"f{j}", tuple(draw(st.lists(st.sampled_from(ids), min_size=1,
                                                      max_size=3))),
                        draw(st.one_of(st.none(), finite)))
             for j in range(draw(st.integers(0, 4)))]
    return Dataset(links, paths, {"seed": draw(st.integers(0, 2 ** 32))})


@given(ds=datasets())
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(tmp_path_factory, ds):
    out = tmp_path_factory.mktemp("rt")
    save(ds, out)
    back = load(out)
    assert back.links == ds.links and back.paths == ds.paths and back.meta == ds.meta
    save(back, out)
    assert load(out).links == ds.links


def test_schema_version_mismatch(tmp_path):
    save(_small_dataset(), tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["schema_version"] = "99"
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(SchemaVersionError, match="'99'.*'1'"):
        load(tmp_path)


def test_occupancy_above_K_names_link(tmp_path):
    save(_small_dataset(), tmp_path)
    text = (tmp_path / "links.csv").read_text().replace("n0/l1,n0,sample,0.5,1.0,8,1000000.0,"
                                                         "1000.0,1.0", "n0/l1,n0,sample,0.5,1.0,8,"
                                                         "1000000.0,1000.0,9.5")
    (tmp_path / "links.csv").write_text(text)
    with pytest.raises(DatasetError, match="n0/l1.*exceeds K"):
        load(tmp_path)


def test_malformed_row_reports_line(tmp_path):
    save(_small_dataset(), tmp_path)
    lines = (tmp_path / "links.csv").read_text().splitlines()
    lines[3] = lines[3].replace("0.5", "half", 1)
    (tmp_path / "links.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="line 4"):
        load(tmp_path)


def test_referential_integrity():
    with pytest.raises(DatasetError, match="unknown link"):
        Dataset([_link(0)], [PathSample("f", ("n0/l0", "ghost"))])
    with pytest.raises(DatasetError):
        Dataset([_link(0), _link(0)])


def test_iid_split_sizes_and_partition(generated):
    links = [_link(i, occ=0.5) for i in range(100)]
    ds = Dataset(links)
    tr, te = split(ds, (0.8, 0.2), seed=7)
    assert (len(tr.links), len(te.links)) == (80, 20)
    ids_tr = {l.link_id for l in tr.links}
    ids_te = {l.link_id for l in te.links}
    assert not ids_tr & ids_te and ids_tr | ids_te == {l.link_id for l in links}
    tr2, te2 = split(ds, (0.8, 0.2), seed=7)
    assert tr2.links == tr.links and te2.links == te.links
    assert split(ds, (0.8, 0.2), seed=8)[0].links != tr.links


def test_iid_split_carries_context_links():
    ds = Dataset([_link(i) for i in range(10)],
                 [PathSample(f"f{i}", (f"n0/l{i}", f"n0/l{(i + 1) % 10}")) for i in range(10)])
    tr, te = split(ds, (0.5, 0.5), seed=1)
    for part in (tr, te):
        index = part.link_index()
        assert all(lid in index for p in part.paths for lid in p.link_ids)
        assert not {l.link_id for l in part.context_links} & {l.link_id for l in part.links}


def test_by_size_split_sends_large_topologies_to_test():
    links = [_link(i, net=f"s{j}") for j in range(8) for i in range(2)]
    links += [_link(i, net=f"L{j}") for j in range(2) for i in range(4)]
    paths = [PathSample(f"L{j}/f", tuple(f"L{j}/l{i}" for i in range(4))) for j in range(2)]
    tr, te = split(Dataset(links, paths), (0.67, 0.33), seed=0, mode="by-size")
    assert {l.network_id for l in te.links} == {"L0", "L1"}
    assert all(p.network_id == "" or p.link_ids[0].startswith("L") for p in te.paths)
    assert len(te.paths) == 2 and not tr.paths


@pytest.mark.parametrize("fractions", [(0.5, 0.6), (1.0, 0.0), (0.2,)])
def test_degenerate_fractions(fractions):
    with pytest.raises(ValueError):
        split(_small_dataset(), fractions)


def test_import_flat_minimal(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("lambda,mu,K,observed_occupancy\n1.0,2.0,2,0.6\n0.5,1.0,4,0.9\n")
    ds = import_flat(f)
    assert len(ds.links) == 2
    assert ds.meta["source"] == "imported"


def test_import_flat_missing_column_names_field(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("lambda,mu,observed_occupancy\n1.0,2.0,0.6\n")
    with pytest.raises(DatasetError, match="'K'"):
        import_flat(f)


def test_import_flat_rejects_invalid_rows(tmp_path, caplog):
    f = tmp_path / "x.tsv"
    f.write_text("rate\tsrv\tbuf\tocc\n1.0\t2.0\t2\t0.6\n1.0\t0\t2\t0.6\n0.3\t1.0\t3\t0.4\n")
    ds = import_flat(f, {"lambda": "rate", "mu": "srv", "K": "buf",
                         "observed_occupancy": "occ"})
    assert len(ds.links) == 2
    assert ds.meta["rejected_rows"] == 1
    assert "line 3" in caplog.text


def test_import_flat_all_rows_invalid(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("lambda,mu,K,observed_occupancy\n1.0,0,2,0.6\n")
    with pytest.raises(DatasetError, match="no valid rows"):
        import_flat(f)


def test_drop_zero_labels():
    ds = Dataset([_link(0, occ=0.0), _link(1), _link(2)],
                 [PathSample("f", ("n0/l0", "n0/l1")), PathSample("g", ("n0/l2",))])
    out, n = drop_zero_labels(ds)
    assert n == 1
    assert [l.link_id for l in out.links] == ["n0/l1", "n0/l2"]
    assert [p.flow_id for p in out.paths] == ["g"]


@pytest.mark.parametrize("model", [
    LinearModel(("pi0", "L"), (0.25, -1.5), 0.125),
    ExpPolyModel((0.1, 2.0, -0.3)),
    BasisModel("bernstein", 3, (0.0, 0.5, 1.0, 3.0)),
    ImplicitModel((0.0, 0.4, 1.0), (0.1, 0.3, 1.0), 0.0, 0.9, 0.0, 12.0, 1e-5, True, 17),
])
def test_model_document_roundtrip(tmp_path, model):
    path = save_model(model, tmp_path / "m.json", {"n_samples": 3})
    doc = json.loads(path.read_text())
    assert doc["kind"] == model.kind and doc["parameter_count"] == model.parameter_count
    back = load_model(path)
    assert back == model


def test_model_document_version_check(tmp_path):
    path = save_model(ExpPolyModel((0.0, 1.0)), tmp_path / "m.json")
    doc = json.loads(path.read_text())
    doc["schema_version"] = "7"
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionError, match="'7'"):
        load_model(path)


def test_nan_never_written(tmp_path, generated):
    save(generated, tmp_path)
    assert "nan" not in (tmp_path / "links.csv").read_text().lower()
    assert all(math.isfinite(l.observed_occupancy) for l in load(tmp_path).links)
