import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scifit.ingest import (
    DocumentRecord, FosEntry, FosRegistry, GeoEntry, GeoRegistry, IngestReport, PanelAccumulator,
    PanelCube, aggregate_geo, fractional_aggregate, iter_documents, lift_fos, parse_documents,
    parse_record, record_to_json,
)


@pytest.fixture
def geo():
    return GeoRegistry({
        "N1": GeoEntry("nation one", "TL1", None),
        "N2": GeoEntry("nation two", "TL1", None),
        "g1": GeoEntry("g1", "TL2", "N1"),
        "g2": GeoEntry("g2", "TL2", "N1"),
        "g3": GeoEntry("g3", "TL2", "N2"),
    })


@pytest.fixture
def fos():
    return FosRegistry({
        "r1": FosEntry("Physics", 0, frozenset()),
        "r2": FosEntry("Sociology", 0, frozenset()),
        "s1": FosEntry("optics", 1, frozenset({"r1"})),
        "s2": FosEntry("social physics", 1, frozenset({"r1", "r2"})),
        "s3": FosEntry("demography", 1, frozenset({"r2"})),
        "t1": FosEntry("lasers", 2, frozenset({"s1", "s2"})),
        "t2": FosEntry("networks", 2, frozenset({"s2"})),
    })


def _line(**kw):
    obj = {"id": "d", "year": 2010, "n_citation": 4, "geo": [{"id": "g1"}], "fos": [{"id": "s1"}]}
    obj.update(kw)
    return json.dumps(obj)


def _write(tmp_path, lines):
    path = tmp_path / "docs.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# parsing


def test_author_count_weights():
    record, renorm = parse_record(json.loads(_line(
        geo=[{"id": "g1"}, {"id": "g1"}, {"id": "g2"}], fos=[{"id": "s1"}, {"id": "s2"}])))
    assert dict(record.geo) == {"g1": 2 / 3, "g2": 1 / 3}
    assert dict(record.fos) == {"s1": 0.5, "s2": 0.5}
    assert not renorm


def test_single_assignment():
    record, _ = parse_record(json.loads(_line()))
    assert record.geo == (("g1", 1.0),)
    assert record.fos == (("s1", 1.0),)


def test_explicit_weights_and_renormalization(tmp_path, caplog):
    path = _write(tmp_path, [
        _line(id="a", geo=[{"id": "g1", "weight": 0.25}, {"id": "g2", "weight": 0.75}]),
        _line(id="b", geo=[{"id": "g1", "weight": 0.3}, {"id": "g2", "weight": 0.6}]),
        _line(id="c", geo=[{"id": "g1", "weight": 0.5}, {"id": "g2", "weight": 0.5 + 1e-8}]),
    ])
    with caplog.at_level(logging.WARNING):
        records, report = parse_documents(path)
    assert dict(records[1].geo) == pytest.approx({"g1": 1 / 3, "g2": 2 / 3})
    assert report.renormalized == 1
    assert "renormalized" in caplog.text
    assert all(abs(sum(w for _, w in r.geo) - 1) < 1e-12 for r in records)


@pytest.mark.parametrize("change, reason", [
    ({"year": None}, "missing_year"),
    ({"year": "20x"}, "bad_year"),
    ({"id": ""}, "missing_id"),
    ({"n_citation": -1}, "negative_citations"),
    ({"n_citation": None}, "missing_citations"),
    ({"n_citation": 1.5}, "bad_citations"),
    ({"geo": []}, "missing_geo"),
    ({"fos": None}, "missing_fos"),
    ({"geo": [{"id": "g1", "weight": -0.5}, {"id": "g2", "weight": 1.5}]}, "bad_weight"),
    ({"geo": [{"id": "g1", "weight": 0.5}, {"id": "g2"}]}, "bad_weight"),
    ({"fos": [{"id": "s1", "weight": 0}]}, "bad_weight"),
])
def test_rejection_reasons(tmp_path, change, reason):
    path = _write(tmp_path, [_line(id="ok"), _line(**change)])
    records, report = parse_documents(path)
    assert [r.doc_id for r in records] == ["ok"]
    assert report.rejected == {reason: 1}
    assert report.accepted == 1 and report.lines == 2


def test_corrupt_line_among_ten(tmp_path):
    lines = [_line(id=f"d{i}") for i in range(10)]
    lines[4] = lines[4][:-7]
    records, report = parse_documents(_write(tmp_path, lines))
    assert len(records) == 9
    assert report.rejected == {"malformed": 1}
    assert "rejected: 1" in report.to_text()


def test_invalid_utf8_is_malformed(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_bytes(_line().encode() + b"\n" + b'{"id": "\xff\xfe"}\n')
    _, report = parse_documents(path)
    assert report.accepted == 1 and report.rejected == {"malformed": 1}


def test_unreadable_file_is_fatal(tmp_path):
    with pytest.raises(OSError):
        list(iter_documents(tmp_path / "missing.jsonl"))


def test_record_json_round_trip():
    record = DocumentRecord("x", 2001, 7, (("g1", 0.25), ("g2", 0.75)), (("s1", 1.0),))
    assert parse_record(json.loads(record_to_json(record)))[0] == record


def test_record_invariants():
    with pytest.raises(ValueError):
        DocumentRecord("x", 2000, 1, (("g", 0.5),), (("s", 1.0),))
    with pytest.raises(ValueError):
        DocumentRecord("x", 2000, -1, (("g", 1.0),), (("s", 1.0),))


# ---------------------------------------------------------------------------
# registries


def test_geo_registry_rules(tmp_path, geo):
    with pytest.raises(ValueError, match="TL1 parent"):
        GeoRegistry({"r": GeoEntry("r", "TL2", None)})
    with pytest.raises(ValueError, match="no parent"):
        GeoRegistry({"n": GeoEntry("n", "TL1", "x"), "x": GeoEntry("x", "TL1", None)})
    path = tmp_path / "geo.csv"
    geo.to_csv(path)
    again = GeoRegistry.from_csv(path)
    assert again.entries == geo.entries
    assert again.resolve("g1", "TL1") == "N1"
    assert again.resolve("N1", "TL2") is None
    assert again.resolve("zz", "TL2") is None
    assert again.children("N1") == ["g1", "g2"]


def test_fos_registry_drops_orphans_and_round_trips(tmp_path, fos):
    broken = dict(fos.entries)
    broken["s9"] = FosEntry("orphan", 1, frozenset({"nope"}))
    broken["t9"] = FosEntry("child of orphan", 2, frozenset({"s9"}))
    reg = FosRegistry(broken)
    assert set(reg.removed) == {"s9", "t9"}
    path = tmp_path / "fos.csv"
    fos.to_csv(path)
    assert FosRegistry.from_csv(path).entries == fos.entries
    assert fos.by_name("sociology") == "r2"
    assert fos.ancestors("t1") == {"s1", "s2", "r1", "r2"}


def test_lift_equal_split(fos):
    assert fos.lift("t1", 1) == {"s1": 0.5, "s2": 0.5}
    assert fos.lift("t1", 0) == {"r1": 0.75, "r2": 0.25}
    assert fos.lift("s1", 2) == {}
    assert fos.lift("unknown", 0) == {}


# ---------------------------------------------------------------------------
# aggregation


def test_footnote_citation_split(geo, fos):
    record = DocumentRecord("x", 2015, 10, (("g1", 2 / 3), ("g2", 1 / 3)), (("s1", 0.5), ("s3", 0.5)))
    cit, docs = fractional_aggregate([record], geo, fos)
    assert cit.cell("g1", "s1", 2015) == pytest.approx(10 / 3, rel=1e-15)
    assert cit.cell("g2", "s3", 2015) == pytest.approx(5 / 3, rel=1e-15)
    assert docs.total() == pytest.approx(1.0)


def test_multi_parent_lift_splits_document(geo, fos):
    record = DocumentRecord("x", 2015, 0, (("g3", 1.0),), (("t1", 1.0),))
    _, docs = fractional_aggregate([record], geo, fos, fos_layer=1)
    assert docs.cell("g3", "s1", 2015) == 0.5
    assert docs.cell("g3", "s2", 2015) == 0.5


def test_hundred_records_mass(geo, fos):
    rng = np.random.default_rng(0)
    records = [
        DocumentRecord(f"d{i}", 2000 + i % 3, int(rng.integers(50)),
                       ((str(rng.choice(["g1", "g2", "g3"])), 1.0),),
                       ((str(rng.choice(["s1", "s2", "s3"])), 1.0),))
        for i in range(100)
    ]
    _, docs = fractional_aggregate(records, geo, fos)
    assert docs.total() == 100.0


def test_empty_records_give_empty_cube(geo, fos):
    cit, docs = fractional_aggregate([], geo, fos)
    assert cit.values.size == 0 and docs.total() == 0.0


def test_unresolvable_assignments_dropped_and_counted(geo, fos, caplog):
    report = IngestReport()
    records = [
        DocumentRecord("a", 2000, 3, (("g1", 0.5), ("XX", 0.5)), (("s1", 1.0),)),
        DocumentRecord("b", 2000, 3, (("XX", 1.0),), (("s1", 1.0),)),
    ]
    with caplog.at_level(logging.WARNING):
        cit, docs = fractional_aggregate(records, geo, fos, report=report)
    assert docs.total() == 0.5
    assert report.unresolved_records == 1
    assert report.unresolved_ids["geo:XX"] == 2
    assert report.dropped_weight == 1.5
    assert "could not be resolved" in caplog.text


def test_national_level_counts(geo, fos):
    records = [DocumentRecord("a", 2000, 3, (("g1", 0.5), ("g2", 0.5)), (("s1", 1.0),))]
    cit, docs = fractional_aggregate(records, geo, fos, geo_level="TL1")
    assert docs.geos == ("N1",)
    assert docs.cell("N1", "s1", 2000) == 1.0
    assert cit.cell("N1", "s1", 2000) == 3.0


def test_aggregate_geo_additivity_and_identity(geo):
    cube = PanelCube.from_cells({("g1", "s", 2000): 3.0, ("g2", "s", 2000): 5.0}, "citations",
                                geo_level="TL2")
    nat = aggregate_geo(cube, geo)
    assert nat.cell("N1", "s", 2000) == 8.0 and nat.geo_level == "TL1"
    assert aggregate_geo(nat, geo) is nat
    with pytest.raises(ValueError):
        aggregate_geo(PanelCube.from_cells({("zz", "s", 2000): 1.0}, "citations"), geo)


def test_aggregate_geo_random_mass(geo):
    rng = np.random.default_rng(5)
    cells = {(g, s, y): float(rng.random() * 100)
             for g in ("g1", "g2", "g3") for s in ("a", "b") for y in (1, 2)}
    cube = PanelCube.from_cells(cells, "citations")
    nat = aggregate_geo(cube, geo)
    for s in ("a", "b"):
        for y in (1, 2):
            direct = cells["g1", s, y] + cells["g2", s, y]
            assert nat.cell("N1", s, y) == pytest.approx(direct, abs=1e-9)
    assert nat.total() == pytest.approx(cube.total(), abs=1e-9)


def test_cube_validation_and_csv_round_trip(tmp_path):
    with pytest.raises(ValueError):
        PanelCube(("g",), ("s",), (1,), np.array([[[-1.0]]]), "citations")
    with pytest.raises(ValueError):
        PanelCube(("g",), ("s",), (1,), np.zeros((1, 1, 2)), "citations")
    with pytest.raises(ValueError):
        PanelCube(("g",), ("s",), (1,), np.zeros((1, 1, 1)), "votes")
    cube = PanelCube.from_cells({("g", "s", 1): 0.1, ("h", "t", 2): 1 / 3}, "documents",
                                geo_level="TL2", fos_layer=1)
    path = tmp_path / "cube.csv"
    cube.to_csv(path, meta={"config_hash": "abc"})
    assert "# config_hash=abc" in path.read_text()
    again = PanelCube.from_csv(path)
    assert np.array_equal(again.values, cube.values)
    assert (again.measure, again.geo_level, again.fos_layer) == ("documents", "TL2", 1)


# ---------------------------------------------------------------------------
# properties

REGIONS = ["g1", "g2", "g3"]
FIELDS = ["s1", "s2", "s3", "t1", "t2"]


@st.composite
def records(draw):
    n = draw(st.integers(1, 25))
    out = []
    for i in range(n):
        gs = draw(st.lists(st.sampled_from(REGIONS), min_size=1, max_size=3))
        fs = draw(st.lists(st.sampled_from(FIELDS), min_size=1, max_size=3))
        obj = {"id": f"d{i}", "year": draw(st.integers(2000, 2002)),
               "n_citation": draw(st.integers(0, 1000)),
               "geo": [{"id": g} for g in gs], "fos": [{"id": f} for f in fs]}
        out.append(parse_record(obj)[0])
    return out


def _registries():
    geo = GeoRegistry({
        "N1": GeoEntry("n1", "TL1", None), "N2": GeoEntry("n2", "TL1", None),
        "g1": GeoEntry("g1", "TL2", "N1"), "g2": GeoEntry("g2", "TL2", "N1"),
        "g3": GeoEntry("g3", "TL2", "N2"),
    })
    fos = FosRegistry({
        "r1": FosEntry("a", 0, frozenset()), "r2": FosEntry("b", 0, frozenset()),
        "s1": FosEntry("s1", 1, frozenset({"r1"})), "s2": FosEntry("s2", 1, frozenset({"r1", "r2"})),
        "s3": FosEntry("s3", 1, frozenset({"r2"})),
        "t1": FosEntry("t1", 2, frozenset({"s1", "s2"})), "t2": FosEntry("t2", 2, frozenset({"s2"})),
    })
    return geo, fos


def _t_records(recs):
    # layer-2 aggregation needs every label at layer 2
    return [DocumentRecord(r.doc_id, r.year, r.citations, r.geo,
                           tuple((f if f.startswith("t") else "t1", w) for f, w in r.fos))
            for r in recs]


@settings(max_examples=60, deadline=None)
@given(records(), st.randoms(use_true_random=False))
def test_order_independence_and_sharding(recs, rnd):
    geo, fos = _registries()
    cit, docs = fractional_aggregate(recs, geo, fos)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    cit2, docs2 = fractional_aggregate(shuffled, geo, fos)
    np.testing.assert_allclose(cit2.values, cit.values, atol=1e-9)
    split = len(recs) // 2
    a = PanelAccumulator(geo, fos).extend(shuffled[:split])
    b = PanelAccumulator(geo, fos).extend(shuffled[split:])
    cit3, docs3 = a.merge(b).cubes()
    np.testing.assert_allclose(docs3.values, docs.values, atol=1e-9)
    years = {r.year for r in recs}
    for y in years:
        expected = sum(1 for r in recs if r.year == y)
        assert abs(docs.year_slice(y).sum() - expected) <= 1e-9 * len(recs)


@settings(max_examples=60, deadline=None)
@given(records())
def test_lift_consistency(recs):
    geo, fos = _registries()
    recs = _t_records(recs)
    direct, _ = fractional_aggregate(recs, geo, fos, fos_layer=0)
    fine, _ = fractional_aggregate(recs, geo, fos, fos_layer=2)
    lifted = lift_fos(fine, fos, 0)
    for g in direct.geos:
        for s in direct.sectors:
            for y in direct.years:
                assert lifted.cell(g, s, y) == pytest.approx(direct.cell(g, s, y), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(records())
def test_tl1_equals_aggregated_tl2(recs):
    geo, fos = _registries()
    regional, _ = fractional_aggregate(recs, geo, fos, "TL2")
    national, _ = fractional_aggregate(recs, geo, fos, "TL1")
    summed = aggregate_geo(regional, geo)
    np.testing.assert_allclose(summed.values, national.values, atol=1e-9)
