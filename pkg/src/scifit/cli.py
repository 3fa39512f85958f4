"""Command-line entry point: ``scifit <subcommand> [--config FILE] [--flag value ...]``.

Subcommands run one stage each and communicate through delimited tables in
the output directory:

    synth          write a synthetic corpus plus a ready-to-run config
    ingest         documents -> citation/document cubes (TL2 and TL1)
    fitness        cubes -> Fitness/Complexity tables with a convergence sidecar
    sector-fitness Fitness restricted to each layer-0 sector
    metrics        Gini, expenditure cross-correlation and diagnostics
    export         smoothed RCA and binary M tables

Exit codes: 0 success, 1 fatal input error, 2 partial analytic failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import metrics
from .config import PipelineConfig
from .efc import (
    DegenerateNetworkError, fitness_complexity, fitness_series, sector_complexity_order,
    sector_fitness,
)
from .ingest import (
    MEASURES, TL1, TL2, FosRegistry, GeoRegistry, IngestReport, PanelAccumulator, PanelCube,
    iter_documents, lift_fos,
)
from .synth import generate, write_corpus
from .tables import atomic_write_text, read_table, write_table
from .transform import competitiveness_series

log = logging.getLogger("scifit")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class FatalError(Exception):
    pass


# ---------------------------------------------------------------------------
# paths and shared loading


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.meta = {"config_hash": cfg.config_hash()}

    def cube(self, measure: str, level: str) -> Path:
        return self.root / f"cube_{measure}_{level}.csv"

    def fitness(self, level: str, measure: str) -> Path:
        return self.root / f"fitness_{level}_{measure}.csv"

    def complexity(self, level: str, measure: str) -> Path:
        return self.root / f"complexity_{level}_{measure}.csv"

    def convergence(self, level: str, measure: str) -> Path:
        return self.root / f"convergence_{level}_{measure}.csv"

    def write(self, name: str, header, rows, **meta) -> None:
        write_table(self.root / name, header, rows, meta={**self.meta, **meta})

    def load_cube(self, measure: str, level: str) -> PanelCube:
        path = self.cube(measure, level)
        if not path.exists():
            raise FatalError(f"missing cube {path.name}: run ingest first")
        return PanelCube.from_csv(path)


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise FatalError(f"no {what} configured")
    p = Path(path)
    if not p.is_file():
        raise FatalError(f"{what} not found: {p}")
    return p


def _registries(cfg: PipelineConfig) -> tuple[GeoRegistry, FosRegistry]:
    geo = GeoRegistry.from_csv(_require(cfg.geo_registry, "geo registry"))
    fos = FosRegistry.from_csv(_require(cfg.fos_registry, "fos registry"))
    return geo, fos


def _years(cfg: PipelineConfig, cube: PanelCube) -> list[int]:
    return cfg.year_filter(cube.years)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: PipelineConfig) -> int:
    corpus = generate(
        n_geos=cfg.synth_geos, n_sectors=cfg.synth_sectors, n_years=cfg.synth_years,
        first_year=cfg.synth_first_year, n_nations=cfg.synth_nations, n_roots=cfg.synth_roots,
        noise=cfg.synth_noise, seed=cfg.seed,
    )
    path = write_corpus(corpus, cfg.output_dir, {"seed": cfg.seed})
    print(f"wrote {len(corpus.records)} documents; config at {path}")
    return EXIT_OK


def cmd_ingest(cfg: PipelineConfig) -> int:
    ws = Workspace(cfg)
    geo, fos = _registries(cfg)
    documents = _require(cfg.documents, "documents file")
    report = IngestReport()
    regional = PanelAccumulator(geo, fos, TL2, cfg.fos_layer, report)
    national = PanelAccumulator(geo, fos, TL1, cfg.fos_layer, IngestReport())
    for record in iter_documents(documents, report):
        regional.add(record)
        national.add(record)
    if report.accepted == 0:
        raise FatalError("no valid document records")
    for level, acc in ((TL2, regional), (TL1, national)):
        for cube in acc.cubes():
            cube.to_csv(ws.cube(cube.measure, level), meta=ws.meta)
    text = f"# config_hash={ws.meta['config_hash']}\n" + report.to_text()
    if fos.removed:
        text += f"fos_dropped_from_registry: {len(fos.removed)}\n"
    atomic_write_text(ws.root / "ingest_report.txt", text)
    print(f"accepted {report.accepted} of {report.lines} records; {report.n_rejected} rejected")
    return EXIT_OK


def cmd_fitness(cfg: PipelineConfig) -> int:
    ws = Workspace(cfg)
    cubes = {(m, lv): ws.load_cube(m, lv) for lv in (TL2, TL1) for m in MEASURES}
    for (measure, level), cube in cubes.items():
        series = fitness_series(
            cube, cfg.half_life, cfg.rca_threshold, cfg.reference_for(level),
            cfg.max_iter, cfg.tol, cfg.rank_window, years=_years(cfg, cube), skip_degenerate=True,
        )
        ws.write(
            ws.fitness(level, measure).name, ["geo", "year", "fitness"],
            [(g, y, f) for y, r in series.results.items() for g, f in sorted(r.fitness.items())],
            level=level, measure=measure,
        )
        ws.write(
            ws.complexity(level, measure).name, ["sector", "year", "complexity"],
            [(s, y, q) for y, r in series.results.items() for s, q in sorted(r.complexity.items())],
            level=level, measure=measure,
        )
        rows = []
        for y, r in series.results.items():
            rows.append((y, "ok", r.iterations, r.converged, r.criterion, r.reference_geo,
                         r.floor_events, ";".join(sorted(r.dropped_geos)), ""))
        for y, reason in series.skipped.items():
            rows.append((y, "skipped", 0, False, "", "", 0, "", reason))
        rows.sort()
        ws.write(
            ws.convergence(level, measure).name,
            ["year", "status", "iterations", "converged", "criterion", "reference_geo",
             "floor_events", "dropped_geos", "reason"],
            rows, level=level, measure=measure,
        )
        for y, reason in series.skipped.items():
            log.warning("%s/%s year %s skipped: %s", level, measure, y, reason)
    return EXIT_OK


def cmd_sector_fitness(cfg: PipelineConfig) -> int:
    ws = Workspace(cfg)
    _, fos = _registries(cfg)
    if cfg.fos_layer == 0:
        raise FatalError("sector Fitness needs cubes at FoS layer 1 or finer")
    level = cfg.geo_level
    cube = ws.load_cube("citations", level)
    ms, _, skipped = competitiveness_series(
        cube, cfg.half_life, cfg.rca_threshold, years=_years(cfg, cube), skip_empty=True
    )
    fitness_rows, order_rows, status_rows = [], [], []
    failures = 0
    for year, m in ms.items():
        for root in fos.ids(0):
            try:
                res = sector_fitness(m, fos, root, reference_geo=cfg.reference_for(level),
                                     max_iter=cfg.max_iter, tol=cfg.tol, rank_window=cfg.rank_window)
            except (DegenerateNetworkError, ValueError) as exc:
                status_rows.append((root, year, "skipped", str(exc)))
                continue
            status_rows.append((root, year, "ok", res.criterion))
            fitness_rows.extend((root, g, year, f) for g, f in sorted(res.fitness.items()))
        try:
            full = fitness_complexity(m, max_iter=cfg.max_iter, tol=cfg.tol, rank_window=cfg.rank_window)
        except DegenerateNetworkError as exc:
            failures += 1
            log.warning("year %s: no complexity order: %s", year, exc)
            continue
        order_rows.extend(
            (year, rank, root, q)
            for rank, (root, q) in enumerate(sector_complexity_order(full, fos), 1)
        )
    for year, reason in skipped.items():
        status_rows.append(("*", year, "skipped", reason))
    ws.write(f"sector_fitness_{level}.csv", ["root", "geo", "year", "fitness"], fitness_rows, level=level)
    ws.write(f"sector_complexity_order_{level}.csv", ["year", "rank", "root", "mean_complexity"],
             order_rows, level=level)
    ws.write(f"sector_status_{level}.csv", ["root", "year", "status", "detail"], sorted(status_rows),
             level=level)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_export(cfg: PipelineConfig) -> int:
    ws = Workspace(cfg)
    for level in (TL2, TL1):
        cube = ws.load_cube("citations", level)
        ms, rcas, _ = competitiveness_series(
            cube, cfg.half_life, cfg.rca_threshold, years=_years(cfg, cube), skip_empty=True
        )
        rca_rows, m_rows = [], []
        for year, r in rcas.items():
            m = ms[year]
            for i, g in enumerate(r.geos):
                for j, s in enumerate(r.sectors):
                    if r.mask[i, j]:
                        rca_rows.append((g, s, year, float(r.values[i, j])))
                        m_rows.append((g, s, year, int(m.values[i, j])))
        ws.write(f"rca_{level}.csv", ["geo", "sector", "year", "rca"], rca_rows, level=level)
        ws.write(f"m_{level}.csv", ["geo", "sector", "year", "m"], m_rows, level=level)
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


def _read_fitness(ws: Workspace, level: str, measure: str = "citations") -> dict[int, dict[str, float]]:
    path = ws.fitness(level, measure)
    if not path.exists():
        raise FatalError(f"missing {path.name}: run fitness first")
    _, rows = read_table(path)
    out: dict[int, dict[str, float]] = {}
    for row in rows:
        out.setdefault(int(row["year"]), {})[row["geo"]] = float(row["fitness"])
    return out


def _by_geo(by_year: dict[int, dict[str, float]]) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    for year, values in by_year.items():
        for g, f in values.items():
            out.setdefault(g, {})[year] = f
    return out


def _read_keyed(path: Path) -> dict[tuple[str, int], float]:
    _, rows = read_table(path)
    return {(r["geo"], int(r["year"])): float(r["value"]) for r in rows if r["value"]}


def _expenditure(cfg: PipelineConfig, geo: GeoRegistry):
    """National series (interpolated, per capita if population is given) and inherited regional ones."""
    _, rows = read_table(_require(cfg.expenditure, "expenditure file"))
    raw: dict[str, dict[int, float]] = {}
    for r in rows:
        if r["measure"] == cfg.expenditure_measure and r["value"]:
            raw.setdefault(r["geo"], {})[int(r["year"])] = float(r["value"])
    if not raw:
        raise ValueError(f"no {cfg.expenditure_measure} rows in the expenditure file")
    population = _read_keyed(Path(cfg.population)) if cfg.population else None
    national, regional = {}, {}
    for g in sorted(raw):
        pop = None
        if population is not None:
            pop = {y: v for (pg, y), v in population.items() if pg == g}
        series = metrics.interpolate_expenditure(raw[g], pop, geo=g, measure=cfg.expenditure_measure)
        national[g] = series
        if g in geo and geo.level(g) == TL1:
            regional.update(metrics.inherit_national(series, geo.children(g)))
    return national, regional


def cmd_metrics(cfg: PipelineConfig) -> int:
    ws = Workspace(cfg)
    geo, fos = _registries(cfg)
    cit_tl2 = ws.load_cube("citations", TL2)
    fit_tl1 = _read_fitness(ws, TL1)
    fit_tl2 = _read_fitness(ws, TL2)
    status: dict[str, str] = {}

    def run(name, fn):
        try:
            fn()
            status[name] = "ok"
        except (ValueError, KeyError, OSError, FatalError) as exc:
            log.warning("%s failed: %s", name, exc)
            status[name] = f"failed: {exc}"

    def gini_country():
        plain = metrics.country_gini(cit_tl2, geo, cfg.min_regions)
        weighted = {}
        if cfg.headcount:
            weighted = metrics.country_gini(cit_tl2, geo, cfg.min_regions,
                                            headcount=_read_keyed(_require(cfg.headcount, "headcount file")))
        ws.write("gini_country.csv", ["nation", "year", "gini", "weighted_gini"],
                 [(n, y, g, weighted.get((n, y))) for (n, y), g in sorted(plain.items())])

    def gini_world():
        series = metrics.world_gini_series(cit_tl2)
        ws.write("gini_world.csv", ["year", "gini"], sorted(series.items()))

    def national_regional():
        p_max, p_mean, n = metrics.national_vs_regional(fit_tl1, fit_tl2, geo)
        ws.write("national_vs_regional.csv", ["pearson_with_max", "pearson_with_mean", "n_pairs"],
                 [(p_max, p_mean, n)])

    def hard_soft():
        docs = ws.load_cube("documents", TL2)
        layer0 = lift_fos(docs, fos, 0) if docs.fos_layer != 0 else docs
        soft = metrics.soft_sector_ids(fos, cfg.soft_sector_names)
        ratios = metrics.hard_soft_ratio(layer0, soft, fos, years=cfg.year_filter(layer0.years))
        ws.write("hard_soft_ratio.csv", ["geo", "ratio"], sorted(ratios.items()))

    def expenditure_analytics():
        national, regional = _expenditure(cfg, geo)
        rows = [
            (s.geo, y, s.measure, v, y in s.interpolated, s.reconstructed)
            for s in list(national.values()) + [regional[r] for r in sorted(regional)]
            for y, v in sorted(s.values.items())
        ]
        ws.write("expenditure_interpolated.csv",
                 ["geo", "year", "measure", "value", "interpolated", "reconstructed"], rows)
        for level, fit, exp in ((TL1, fit_tl1, national), (TL2, fit_tl2, regional)):
            result = metrics.lagged_xcorr(
                _by_geo(fit), exp, cfg.lag_list, cfg.replicates, cfg.seed
            )
            ws.write(f"xcorr_{level}.csv", ["lag", "mean", "low", "high", "replicates", "n_years"],
                     [(c.lag, c.mean, c.low, c.high, c.replicates, c.n_years) for c in result],
                     level=level)
            if not result:
                raise ValueError(f"no lag had enough overlapping {level} geos")

    run("gini_country", gini_country)
    run("gini_world", gini_world)
    run("national_vs_regional", national_regional)
    run("hard_soft_ratio", hard_soft)
    if cfg.expenditure:
        run("xcorr", expenditure_analytics)
    else:
        status["xcorr"] = "skipped: no expenditure input"

    report = [
        f"# config_hash={ws.meta['config_hash']}",
        f"seed: {cfg.seed}",
        f"bootstrap_replicates: {cfg.replicates}",
        "bootstrap_unit: geo (resampled with replacement)",
        "xcorr_band: 25%-75% quantiles",
        f"lags: {cfg.lags}",
        f"expenditure_measure: {cfg.expenditure_measure}{'_pc' if cfg.population else ''}",
        "expenditure_gaps: linear interpolation, no extrapolation (see interpolated column)",
        "regional_expenditure: inherited from national value (reconstructed column)",
        "gini_population_share: 1/n, or normalized headcount when weighted",
        f"soft_sectors: {cfg.soft_sectors}",
        "",
        "analytics:",
    ] + [f"  {name}: {state}" for name, state in status.items()]
    atomic_write_text(ws.root / "methods.txt", "\n".join(report) + "\n")
    failed = [n for n, s in status.items() if s.startswith("failed")]
    return EXIT_PARTIAL if failed else EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "fitness": cmd_fitness,
    "sector-fitness": cmd_sector_fitness,
    "metrics": cmd_metrics,
    "export": cmd_export,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scifit", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    flags = parser.add_argument_group("configuration overrides")
    for f in fields(PipelineConfig):
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        caster = int if kind.startswith("int") else float if kind.startswith("float") else str
        flags.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=caster, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {f.name: getattr(args, f.name) for f in fields(PipelineConfig)}
    try:
        cfg = PipelineConfig.load(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (FatalError, OSError, ValueError) as exc:
        print(f"scifit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
