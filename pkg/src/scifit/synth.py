"""Synthetic corpora with a planted nested structure and a known ranking.

Region ``i`` in planted order is active in the ``k_i`` most ubiquitous
sectors, with ``k`` falling linearly from the number of sectors down to one.
Active cells receive a base number of citations, perturbed by multiplicative
log-normal noise of scale ``noise``; inactive cells receive nothing.  The
planted order is shuffled over region ids and the ubiquity order over sector
ids, so nothing downstream can lean on id order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import (
    TL1, TL2, DocumentRecord, FosEntry, FosRegistry, GeoEntry, GeoRegistry, record_to_json,
)
from .tables import atomic_write_text, write_table

NATIONS = ("US", "DE", "FR", "IT", "JP", "GB", "ES", "NL", "SE", "CA", "KR", "AU")
ROOTS = (
    "Physics", "Chemistry", "Biology", "Medicine", "Computer Science", "Mathematics",
    "Engineering", "Materials Science", "Geology", "Geography", "Environmental Science",
    "Economics", "Psychology", "Sociology", "Political Science", "Art", "Business",
    "Philosophy", "History",
)
BASE_CITATIONS = 100


@dataclass
class SynthCorpus:
    geo: GeoRegistry
    fos: FosRegistry
    records: list[DocumentRecord]
    capabilities: dict[str, int]
    ranking: list[str]
    years: list[int]
    expenditure: list[tuple[str, int, str, float]] = field(default_factory=list)
    population: list[tuple[str, int, float]] = field(default_factory=list)
    headcount: list[tuple[str, int, float]] = field(default_factory=list)

    @property
    def top_region(self) -> str:
        return self.ranking[0]


def _registries(n_geos, n_nations, n_sectors, n_roots, rng):
    if not 1 <= n_nations <= len(NATIONS):
        raise ValueError(f"n_nations must be between 1 and {len(NATIONS)}")
    if not 1 <= n_roots <= len(ROOTS):
        raise ValueError(f"n_roots must be between 1 and {len(ROOTS)}")
    if n_geos < n_nations:
        raise ValueError("need at least one region per nation")
    nations = NATIONS[:n_nations]
    geo_entries = {n: GeoEntry(n, TL1, None) for n in nations}
    regions = []
    for i in range(n_geos):
        nation = nations[i % n_nations]
        rid = f"{nation}{i // n_nations + 1:02d}"
        geo_entries[rid] = GeoEntry(f"{nation} region {i // n_nations + 1}", TL2, nation)
        regions.append(rid)

    # roots include the soft sectors so the hard/soft split is exercised
    soft_first = [r for r in ROOTS if r in ("Sociology", "Art")]
    roots = (soft_first + [r for r in ROOTS if r not in soft_first])[:n_roots]
    root_ids = [f"F0_{i:02d}" for i in range(n_roots)]
    fos_entries = {rid: FosEntry(name, 0, frozenset()) for rid, name in zip(root_ids, roots)}
    sectors = []
    for j in range(n_sectors):
        parents = {root_ids[j % n_roots]}
        if n_roots > 1 and j % 5 == 4:
            parents.add(root_ids[int(rng.integers(n_roots))])
        sid = f"F1_{j:03d}"
        fos_entries[sid] = FosEntry(f"{roots[j % n_roots]} topic {j}", 1, frozenset(parents))
        sectors.append(sid)
    return GeoRegistry(geo_entries), FosRegistry(fos_entries), regions, sectors


def generate(
    n_geos: int = 30,
    n_sectors: int = 40,
    n_years: int = 5,
    first_year: int = 2010,
    n_nations: int = 6,
    n_roots: int = 8,
    noise: float = 0.0,
    seed: int = 0,
    capabilities: dict[str, int] | None = None,
) -> SynthCorpus:
    """Build a corpus in memory.

    ``capabilities`` overrides the planted number of active sectors per
    region id; the ranking then follows those sizes.
    """
    if n_geos < 2 or n_sectors < 2 or n_years < 1:
        raise ValueError("need at least 2 geos, 2 sectors and 1 year")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    geo, fos, regions, sectors = _registries(n_geos, n_nations, n_sectors, n_roots, rng)

    planted = rng.permutation(n_geos)
    sizes = np.round(np.linspace(n_sectors, 1, n_geos)).astype(int)
    if capabilities is None:
        capabilities = {regions[planted[r]]: int(sizes[r]) for r in range(n_geos)}
    else:
        unknown = set(capabilities) - set(regions)
        if unknown:
            raise ValueError(f"capabilities for unknown regions: {sorted(unknown)}")
        capabilities = {r: int(capabilities.get(r, 0)) for r in regions}
    ubiquity = [sectors[j] for j in rng.permutation(n_sectors)]
    ranking = sorted(regions, key=lambda r: (-capabilities[r], r))

    years = list(range(first_year, first_year + n_years))
    records = []
    for year in years:
        for region in regions:
            for sector in ubiquity[: capabilities[region]]:
                c = BASE_CITATIONS * np.exp(noise * rng.standard_normal()) if noise else BASE_CITATIONS
                total = int(round(c))
                n_docs = int(rng.integers(1, 4))
                parts = rng.multinomial(total, np.full(n_docs, 1.0 / n_docs))
                for part in parts:
                    doc_id = f"D{len(records):07d}"
                    records.append(DocumentRecord(
                        doc_id, year, int(part), ((region, 1.0),), ((sector, 1.0),)
                    ))

    corpus = SynthCorpus(geo, fos, records, capabilities, ranking, years)
    _auxiliary(corpus, rng)
    return corpus


def _auxiliary(corpus: SynthCorpus, rng) -> None:
    """Expenditure (with gaps), population and researcher headcount."""
    nations = corpus.geo.ids(TL1)
    for nation in nations:
        regions = corpus.geo.children(nation)
        strength = sum(corpus.capabilities[r] for r in regions)
        pop = float(10 + 5 * len(regions))
        for i, year in enumerate(corpus.years):
            corpus.population.append((nation, year, pop))
            interior = 0 < i < len(corpus.years) - 1
            if interior and rng.random() < 0.3:
                continue
            value = strength * (1.0 + 0.03 * i) * float(np.exp(0.05 * rng.standard_normal()))
            corpus.expenditure.append((nation, year, "HERD", round(value, 6)))
        for r in regions:
            for year in corpus.years:
                corpus.headcount.append((r, year, float(1 + corpus.capabilities[r])))


def write_corpus(corpus: SynthCorpus, directory: str | Path, extra_config: dict | None = None) -> Path:
    """Write the corpus, registries, auxiliary tables and a ready-to-run config.

    Returns the path of the config file.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "documents.jsonl",
                      "".join(record_to_json(r) + "\n" for r in corpus.records))
    corpus.geo.to_csv(out / "geo.csv")
    corpus.fos.to_csv(out / "fos.csv")
    write_table(out / "expenditure.csv", ["geo", "year", "measure", "value"], corpus.expenditure)
    write_table(out / "population.csv", ["geo", "year", "value"], corpus.population)
    write_table(out / "headcount.csv", ["geo", "year", "value"], corpus.headcount)
    write_table(
        out / "ground_truth.csv", ["geo", "rank", "capabilities"],
        [(g, i + 1, corpus.capabilities[g]) for i, g in enumerate(corpus.ranking)],
    )
    top = corpus.top_region
    settings = {
        "documents": "documents.jsonl",
        "geo_registry": "geo.csv",
        "fos_registry": "fos.csv",
        "expenditure": "expenditure.csv",
        "population": "population.csv",
        "headcount": "headcount.csv",
        "reference_tl2": top,
        "reference_tl1": corpus.geo.parent(top),
        "output_dir": "out",
    }
    settings.update(extra_config or {})
    cfg = out / "pipeline.cfg"
    atomic_write_text(cfg, "".join(f"{k} = {v}\n" for k, v in settings.items()))
    return cfg
