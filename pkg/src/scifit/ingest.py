"""Document records, geography/FoS registries and fractional aggregation.

A document is split across geographic areas in proportion to its authors and
across Fields of Study in equal parts per label.  Its unit weight (documents
measure) and its citation count (citations measure) are distributed with the
same ratios, so the documents cube sums to one per accepted record.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .tables import read_table, write_table

log = logging.getLogger(__name__)

TL1, TL2 = "TL1", "TL2"
GEO_LEVELS = (TL1, TL2)
FOS_LAYERS = (0, 1, 2)
MEASURES = ("citations", "documents")

WEIGHT_TOL = 1e-9
RENORMALIZE_WARN = 1e-6


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    year: int
    citations: int
    geo: tuple[tuple[str, float], ...]
    fos: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if self.citations < 0:
            raise ValueError(f"{self.doc_id}: negative citation count")
        for name, assignments in (("geo", self.geo), ("fos", self.fos)):
            if not assignments:
                raise ValueError(f"{self.doc_id}: no {name} assignment")
            if any(w < 0 for _, w in assignments):
                raise ValueError(f"{self.doc_id}: negative {name} weight")
            total = math.fsum(w for _, w in assignments)
            if abs(total - 1.0) > WEIGHT_TOL:
                raise ValueError(f"{self.doc_id}: {name} weights sum to {total!r}, not 1")


@dataclass
class IngestReport:
    """Tallies of a parse/aggregation run.  Rendered into the rejection report."""

    lines: int = 0
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)
    renormalized: int = 0
    unresolved_ids: Counter = field(default_factory=Counter)
    unresolved_records: int = 0
    dropped_weight: float = 0.0

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    def to_text(self) -> str:
        out = [
            f"lines_read: {self.lines}",
            f"accepted: {self.accepted}",
            f"rejected: {self.n_rejected}",
        ]
        for reason in sorted(self.rejected):
            out.append(f"  {reason}: {self.rejected[reason]}")
        out.append(f"renormalized_weights: {self.renormalized}")
        out.append(f"unresolvable_records: {self.unresolved_records}")
        out.append(f"dropped_assignment_weight: {self.dropped_weight!r}")
        out.append(f"unresolvable_ids: {len(self.unresolved_ids)}")
        for key in sorted(self.unresolved_ids):
            out.append(f"  {key}: {self.unresolved_ids[key]}")
        return "\n".join(out) + "\n"


class RecordError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def _as_int(value, reason: str) -> int:
    if isinstance(value, bool) or value is None:
        raise RecordError(reason)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
    raise RecordError(reason, repr(value))


def _assignments(raw, name: str) -> tuple[tuple[tuple[str, float], ...], bool]:
    """Normalize a list of ``{id, weight}`` entries.

    Entries without a weight count one unit each (one per author or label),
    which yields the author-share weights; duplicate ids are merged.  Returns
    the assignments and whether an explicit weight vector had to be rescaled
    by more than ``RENORMALIZE_WARN``.
    """
    missing = f"missing_{name}"
    if not isinstance(raw, list) or not raw:
        raise RecordError(missing)
    explicit = None
    merged: dict[str, float] = {}
    for entry in raw:
        if isinstance(entry, str):
            key, weight = entry, None
        elif isinstance(entry, dict) and entry.get("id") not in (None, ""):
            key, weight = str(entry["id"]), entry.get("weight")
        else:
            raise RecordError(missing, "entry without id")
        has_weight = weight is not None
        if explicit is None:
            explicit = has_weight
        elif explicit != has_weight:
            raise RecordError("bad_weight", "mixed explicit and implicit weights")
        if has_weight:
            if isinstance(weight, bool) or not isinstance(weight, (int, float)):
                raise RecordError("bad_weight", repr(weight))
            weight = float(weight)
            if not math.isfinite(weight) or weight < 0:
                raise RecordError("bad_weight", repr(weight))
        else:
            weight = 1.0
        merged[key] = merged.get(key, 0.0) + weight
    total = math.fsum(merged.values())
    if total <= 0:
        raise RecordError("bad_weight", "zero total weight")
    renormalized = bool(explicit) and abs(total - 1.0) > RENORMALIZE_WARN
    out = tuple((k, w / total) for k, w in merged.items() if w > 0)
    return out, renormalized


def parse_record(obj) -> tuple[DocumentRecord, bool]:
    """Validate one decoded JSON object.  Raises RecordError with a reason tag."""
    if not isinstance(obj, dict):
        raise RecordError("malformed", "not an object")
    doc_id = obj.get("id")
    if doc_id in (None, ""):
        raise RecordError("missing_id")
    if obj.get("year") is None:
        raise RecordError("missing_year")
    year = _as_int(obj["year"], "bad_year")
    if obj.get("n_citation") is None:
        raise RecordError("missing_citations")
    citations = _as_int(obj["n_citation"], "bad_citations")
    if citations < 0:
        raise RecordError("negative_citations")
    geo, geo_renorm = _assignments(obj.get("geo"), "geo")
    fos, fos_renorm = _assignments(obj.get("fos"), "fos")
    record = DocumentRecord(str(doc_id), year, citations, geo, fos)
    return record, geo_renorm or fos_renorm


def iter_documents(path, report: IngestReport | None = None) -> Iterator[DocumentRecord]:
    """Stream validated records from a JSON-lines file.

    Bad lines are skipped and tallied in ``report``; an unreadable file
    raises ``OSError``.
    """
    report = report if report is not None else IngestReport()
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            report.lines += 1
            try:
                obj = json.loads(raw.decode("utf-8"))
                record, renorm = parse_record(obj)
            except (UnicodeDecodeError, json.JSONDecodeError):
                report.rejected["malformed"] += 1
                continue
            except RecordError as exc:
                report.rejected[exc.reason] += 1
                continue
            if renorm:
                report.renormalized += 1
                log.warning("line %d (%s): weights renormalized", lineno, record.doc_id)
            report.accepted += 1
            yield record


def parse_documents(path) -> tuple[list[DocumentRecord], IngestReport]:
    report = IngestReport()
    records = list(iter_documents(path, report))
    return records, report


def record_to_json(record: DocumentRecord) -> str:
    obj = {
        "id": record.doc_id,
        "year": record.year,
        "n_citation": record.citations,
        "geo": [{"id": g, "weight": w} for g, w in record.geo],
        "fos": [{"id": s, "weight": w} for s, w in record.fos],
    }
    return json.dumps(obj, separators=(",", ":"))


# ---------------------------------------------------------------------------
# registries


def _split_parents(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in (text or "").split(";") if p.strip())


@dataclass(frozen=True)
class GeoEntry:
    name: str
    level: str
    parent: str | None


class GeoRegistry:
    """TL1 nations and TL2 regions; each region has exactly one nation."""

    def __init__(self, entries: Mapping[str, GeoEntry]):
        self.entries = dict(entries)
        for gid, e in self.entries.items():
            if e.level not in GEO_LEVELS:
                raise ValueError(f"geo {gid!r}: unknown level {e.level!r}")
            if e.level == TL1 and e.parent is not None:
                raise ValueError(f"geo {gid!r}: TL1 entries take no parent")
            if e.level == TL2:
                parent = self.entries.get(e.parent) if e.parent else None
                if parent is None or parent.level != TL1:
                    raise ValueError(f"geo {gid!r}: TL2 entry needs exactly one TL1 parent")
        self._children: dict[str, list[str]] = defaultdict(list)
        for gid in sorted(self.entries):
            e = self.entries[gid]
            if e.parent:
                self._children[e.parent].append(gid)

    @classmethod
    def from_csv(cls, path) -> "GeoRegistry":
        _, rows = read_table(path)
        entries = {}
        for row in rows:
            gid = row["id"]
            if gid in entries:
                raise ValueError(f"duplicate geo id {gid!r}")
            level = row["level_or_layer"].upper()
            level = {"1": TL1, "2": TL2}.get(level, level)
            parents = _split_parents(row.get("parent_ids", ""))
            if len(parents) > 1:
                raise ValueError(f"geo {gid!r}: more than one parent")
            entries[gid] = GeoEntry(row.get("name", gid), level, parents[0] if parents else None)
        return cls(entries)

    def to_csv(self, path) -> None:
        rows = [(g, e.name, e.level, e.parent or "") for g, e in sorted(self.entries.items())]
        write_table(path, ["id", "name", "level_or_layer", "parent_ids"], rows)

    def __contains__(self, gid) -> bool:
        return gid in self.entries

    def level(self, gid: str) -> str:
        return self.entries[gid].level

    def parent(self, gid: str) -> str | None:
        return self.entries[gid].parent

    def children(self, gid: str) -> list[str]:
        return list(self._children.get(gid, ()))

    def ids(self, level: str) -> list[str]:
        return sorted(g for g, e in self.entries.items() if e.level == level)

    def resolve(self, gid: str, level: str) -> str | None:
        """Map ``gid`` to its area at ``level``; ``None`` if it is coarser or unknown."""
        e = self.entries.get(gid)
        if e is None:
            return None
        if e.level == level:
            return gid
        if level == TL1 and e.level == TL2:
            return e.parent
        return None


@dataclass(frozen=True)
class FosEntry:
    name: str
    layer: int
    parents: frozenset


class FosRegistry:
    """Multi-parent Field-of-Study hierarchy (layers 0, 1, 2).

    Entries whose parents are not all-missing but none lies in the layer
    directly above are dropped, repeatedly, until the hierarchy is closed.
    """

    def __init__(self, entries: Mapping[str, FosEntry]):
        entries = dict(entries)
        self.removed: list[str] = []
        changed = True
        while changed:
            changed = False
            for fid in sorted(entries):
                e = entries[fid]
                if e.layer not in FOS_LAYERS:
                    raise ValueError(f"fos {fid!r}: unknown layer {e.layer!r}")
                if e.layer == 0:
                    if e.parents:
                        raise ValueError(f"fos {fid!r}: layer-0 codes take no parents")
                    continue
                valid = frozenset(
                    p for p in e.parents if p in entries and entries[p].layer == e.layer - 1
                )
                if not valid:
                    log.warning("fos %r dropped: no parent in layer %d", fid, e.layer - 1)
                    del entries[fid]
                    self.removed.append(fid)
                    changed = True
                elif valid != e.parents:
                    entries[fid] = FosEntry(e.name, e.layer, valid)
                    changed = True
        self.entries = entries
        self._children: dict[str, list[str]] = defaultdict(list)
        for fid in sorted(entries):
            for p in entries[fid].parents:
                self._children[p].append(fid)
        self._lift_cache: dict[tuple[str, int], dict[str, float]] = {}
        self._ancestor_cache: dict[str, frozenset] = {}

    @classmethod
    def from_csv(cls, path) -> "FosRegistry":
        _, rows = read_table(path)
        entries = {}
        for row in rows:
            fid = row["id"]
            if fid in entries:
                raise ValueError(f"duplicate fos id {fid!r}")
            entries[fid] = FosEntry(
                row.get("name", fid),
                int(row["level_or_layer"]),
                frozenset(_split_parents(row.get("parent_ids", ""))),
            )
        return cls(entries)

    def to_csv(self, path) -> None:
        rows = [
            (f, e.name, e.layer, ";".join(sorted(e.parents)))
            for f, e in sorted(self.entries.items())
        ]
        write_table(path, ["id", "name", "level_or_layer", "parent_ids"], rows)

    def __contains__(self, fid) -> bool:
        return fid in self.entries

    def layer(self, fid: str) -> int:
        return self.entries[fid].layer

    def parents(self, fid: str) -> list[str]:
        return sorted(self.entries[fid].parents)

    def children(self, fid: str) -> list[str]:
        return list(self._children.get(fid, ()))

    def ids(self, layer: int) -> list[str]:
        return sorted(f for f, e in self.entries.items() if e.layer == layer)

    def by_name(self, name: str) -> str | None:
        for fid in sorted(self.entries):
            if self.entries[fid].name.lower() == name.lower():
                return fid
        return None

    def ancestors(self, fid: str) -> frozenset:
        """All transitive parents of ``fid`` (not including itself)."""
        if fid not in self._ancestor_cache:
            out = set()
            for p in self.entries[fid].parents:
                out.add(p)
                out |= self.ancestors(p)
            self._ancestor_cache[fid] = frozenset(out)
        return self._ancestor_cache[fid]

    def lift(self, fid: str, layer: int) -> dict[str, float]:
        """Distribute a unit weight on ``fid`` over its ancestors at ``layer``.

        The weight is split equally among the parents at each step up.  Returns
        ``{}`` if ``fid`` is unknown or sits above ``layer``.
        """
        key = (fid, layer)
        if key in self._lift_cache:
            return self._lift_cache[key]
        e = self.entries.get(fid)
        if e is None or e.layer < layer:
            out = {}
        elif e.layer == layer:
            out = {fid: 1.0}
        else:
            out = defaultdict(float)
            parents = sorted(e.parents)
            share = 1.0 / len(parents)
            for p in parents:
                for anc, w in self.lift(p, layer).items():
                    out[anc] += share * w
            out = dict(out)
        self._lift_cache[key] = out
        return out


# ---------------------------------------------------------------------------
# panel cubes


@dataclass(frozen=True)
class PanelCube:
    """Non-negative counts indexed by (geography, sector, year)."""

    geos: tuple[str, ...]
    sectors: tuple[str, ...]
    years: tuple[int, ...]
    values: np.ndarray
    measure: str
    geo_level: str | None = None
    fos_layer: int | None = None

    def __post_init__(self):
        shape = (len(self.geos), len(self.sectors), len(self.years))
        if self.values.shape != shape:
            raise ValueError(f"cube values have shape {self.values.shape}, axes imply {shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("cube values must be finite and non-negative")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")

    def year_slice(self, year: int) -> np.ndarray:
        return self.values[:, :, self.years.index(year)]

    def total(self) -> float:
        return float(self.values.sum())

    def cell(self, geo: str, sector: str, year: int) -> float:
        try:
            return float(
                self.values[self.geos.index(geo), self.sectors.index(sector), self.years.index(year)]
            )
        except ValueError:
            return 0.0

    def replace_values(self, values, **changes) -> "PanelCube":
        kw = dict(
            geos=self.geos, sectors=self.sectors, years=self.years, measure=self.measure,
            geo_level=self.geo_level, fos_layer=self.fos_layer,
        )
        kw.update(changes)
        return PanelCube(values=values, **kw)

    @classmethod
    def from_cells(cls, cells: Mapping[tuple[str, str, int], float], measure: str,
                   geos=None, sectors=None, years=None, **kw) -> "PanelCube":
        geos = tuple(sorted({g for g, _, _ in cells})) if geos is None else tuple(geos)
        sectors = tuple(sorted({s for _, s, _ in cells})) if sectors is None else tuple(sectors)
        years = tuple(sorted({y for _, _, y in cells})) if years is None else tuple(years)
        gi = {g: i for i, g in enumerate(geos)}
        si = {s: i for i, s in enumerate(sectors)}
        yi = {y: i for i, y in enumerate(years)}
        values = np.zeros((len(geos), len(sectors), len(years)))
        for (g, s, y), v in cells.items():
            values[gi[g], si[s], yi[y]] += v
        return cls(geos, sectors, years, values, measure, **kw)

    def to_csv(self, path, meta: dict | None = None) -> None:
        """Write the non-zero cells as ``geo, sector, year, value`` rows."""
        header = {"measure": self.measure}
        if self.geo_level:
            header["geo_level"] = self.geo_level
        if self.fos_layer is not None:
            header["fos_layer"] = self.fos_layer
        header.update(meta or {})
        gi, si, yi = np.nonzero(self.values)
        rows = (
            (self.geos[g], self.sectors[s], self.years[y], float(self.values[g, s, y]))
            for g, s, y in zip(gi, si, yi)
        )
        write_table(path, ["geo", "sector", "year", "value"], rows, meta=header)

    @classmethod
    def from_csv(cls, path) -> "PanelCube":
        meta, rows = read_table(path)
        cells = {(r["geo"], r["sector"], int(r["year"])): float(r["value"]) for r in rows}
        layer = meta.get("fos_layer")
        return cls.from_cells(
            cells, meta.get("measure", "citations"),
            geo_level=meta.get("geo_level") or None,
            fos_layer=int(layer) if layer not in (None, "") else None,
        )


class PanelAccumulator:
    """Incremental fractional counting into sparse cells.

    Feed records with :meth:`add`; shards built in parallel can be combined
    with :meth:`merge`.  Assignments that cannot be resolved at the requested
    level/layer are dropped (their weight is lost and tallied); a record with
    no resolvable geography or FoS is skipped entirely.
    """

    def __init__(self, geo: GeoRegistry, fos: FosRegistry, geo_level: str = TL2,
                 fos_layer: int = 1, report: IngestReport | None = None):
        if geo_level not in GEO_LEVELS:
            raise ValueError(f"geo_level must be one of {GEO_LEVELS}")
        if fos_layer not in FOS_LAYERS:
            raise ValueError(f"fos_layer must be one of {FOS_LAYERS}")
        self.geo, self.fos = geo, fos
        self.geo_level, self.fos_layer = geo_level, fos_layer
        self.report = report if report is not None else IngestReport()
        self.citations: dict[tuple[str, str, int], float] = defaultdict(float)
        self.documents: dict[tuple[str, str, int], float] = defaultdict(float)
        self.records_per_year: Counter = Counter()

    def _resolve_geo(self, assignments):
        out: dict[str, float] = {}
        for gid, w in assignments:
            target = self.geo.resolve(gid, self.geo_level)
            if target is None:
                self.report.unresolved_ids[f"geo:{gid}"] += 1
                self.report.dropped_weight += w
                continue
            out[target] = out.get(target, 0.0) + w
        return out

    def _resolve_fos(self, assignments):
        out: dict[str, float] = {}
        for fid, w in assignments:
            lifted = self.fos.lift(fid, self.fos_layer)
            if not lifted:
                self.report.unresolved_ids[f"fos:{fid}"] += 1
                self.report.dropped_weight += w
                continue
            for anc, share in lifted.items():
                out[anc] = out.get(anc, 0.0) + w * share
        return out

    def add(self, record: DocumentRecord) -> bool:
        geo = self._resolve_geo(record.geo)
        fos = self._resolve_fos(record.fos)
        if not geo or not fos:
            self.report.unresolved_records += 1
            return False
        y = record.year
        c = float(record.citations)
        for g, wg in geo.items():
            for s, ws in fos.items():
                w = wg * ws
                self.documents[g, s, y] += w
                self.citations[g, s, y] += w * c
        self.records_per_year[y] += 1
        return True

    def extend(self, records: Iterable[DocumentRecord]) -> "PanelAccumulator":
        for r in records:
            self.add(r)
        return self

    def merge(self, other: "PanelAccumulator") -> "PanelAccumulator":
        for key, v in other.documents.items():
            self.documents[key] += v
        for key, v in other.citations.items():
            self.citations[key] += v
        self.records_per_year.update(other.records_per_year)
        return self

    def cubes(self) -> tuple[PanelCube, PanelCube]:
        geos = tuple(sorted({g for g, _, _ in self.documents}))
        sectors = tuple(sorted({s for _, s, _ in self.documents}))
        years = tuple(sorted({y for _, _, y in self.documents}))
        kw = dict(geos=geos, sectors=sectors, years=years,
                  geo_level=self.geo_level, fos_layer=self.fos_layer)
        return (
            PanelCube.from_cells(self.citations, "citations", **kw),
            PanelCube.from_cells(self.documents, "documents", **kw),
        )


def fractional_aggregate(records: Iterable[DocumentRecord], geo: GeoRegistry, fos: FosRegistry,
                         geo_level: str = TL2, fos_layer: int = 1,
                         report: IngestReport | None = None) -> tuple[PanelCube, PanelCube]:
    """Aggregate records into (citations, documents) cubes."""
    acc = PanelAccumulator(geo, fos, geo_level, fos_layer, report).extend(records)
    if acc.report.unresolved_ids:
        log.warning("%d assignment ids could not be resolved at %s/layer %d",
                    len(acc.report.unresolved_ids), geo_level, fos_layer)
    return acc.cubes()


def aggregate_geo(cube: PanelCube, geo: GeoRegistry, to_level: str = TL1) -> PanelCube:
    """Sum TL2 regions into their TL1 nations."""
    if to_level != TL1:
        raise ValueError("regions can only be aggregated to TL1")
    levels = {geo.level(g) if g in geo else None for g in cube.geos}
    if None in levels:
        unknown = [g for g in cube.geos if g not in geo]
        raise ValueError(f"geos not in registry: {unknown[:5]}")
    if levels <= {TL1}:
        return cube
    targets = []
    for g in cube.geos:
        if geo.level(g) == TL1:
            targets.append(g)
            continue
        parent = geo.parent(g)
        if parent is None:
            raise ValueError(f"TL2 geo {g!r} has no TL1 parent")
        targets.append(parent)
    nations = tuple(sorted(set(targets)))
    index = {n: i for i, n in enumerate(nations)}
    values = np.zeros((len(nations),) + cube.values.shape[1:])
    for i, t in enumerate(targets):
        values[index[t]] += cube.values[i]
    return cube.replace_values(values, geos=nations, geo_level=TL1)


def lift_fos(cube: PanelCube, fos: FosRegistry, to_layer: int) -> PanelCube:
    """Move a cube's sectors up the FoS hierarchy with equal parent splits."""
    lifts = []
    for s in cube.sectors:
        lifted = fos.lift(s, to_layer)
        if not lifted:
            raise ValueError(f"sector {s!r} cannot be lifted to layer {to_layer}")
        lifts.append(lifted)
    sectors = tuple(sorted({a for lifted in lifts for a in lifted}))
    index = {a: i for i, a in enumerate(sectors)}
    lift = np.zeros((len(cube.sectors), len(sectors)))
    for j, lifted in enumerate(lifts):
        for anc, share in lifted.items():
            lift[j, index[anc]] = share
    values = np.einsum("gsy,st->gty", cube.values, lift)
    return cube.replace_values(values, sectors=sectors, fos_layer=to_layer)
