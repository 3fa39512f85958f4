"""Pipeline configuration: a flat ``key = value`` file plus CLI overrides.

Example::

    documents = data/docs.jsonl
    geo_registry = data/geo.csv
    fos_registry = data/fos.csv
    geo_level = TL2
    fos_layer = 1
    half_life = 3
    output_dir = out
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .ingest import FOS_LAYERS, GEO_LEVELS

SECTION = "pipeline"
PATH_KEYS = ("documents", "geo_registry", "fos_registry", "expenditure", "population",
             "headcount", "output_dir")


def _parse_bool(text: str) -> bool:
    return text.strip().lower() in {"1", "true", "yes", "on"}


def parse_lags(text: str) -> list[int]:
    """``"-5:5"`` -> [-5, ..., 5]; ``"0,1,3"`` -> [0, 1, 3]."""
    text = text.strip()
    if ":" in text:
        lo, hi = (int(p) for p in text.split(":"))
        return list(range(lo, hi + 1))
    return [int(p) for p in text.split(",") if p.strip()]


@dataclass
class PipelineConfig:
    documents: str | None = None
    geo_registry: str | None = None
    fos_registry: str | None = None
    expenditure: str | None = None
    population: str | None = None
    headcount: str | None = None
    geo_level: str = "TL2"
    fos_layer: int = 1
    half_life: float = 3.0
    rca_threshold: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-9
    rank_window: int = 50
    reference_tl1: str = "US"
    reference_tl2: str = "US06"
    year_min: int | None = None
    year_max: int | None = None
    output_dir: str = "out"
    seed: int = 0
    lags: str = "-5:5"
    replicates: int = 1000
    expenditure_measure: str = "HERD"
    soft_sectors: str = "Sociology;Political Science;Art;Business;Philosophy;History"
    min_regions: int = 2
    # synth
    synth_geos: int = 30
    synth_sectors: int = 40
    synth_years: int = 5
    synth_first_year: int = 2010
    synth_nations: int = 6
    synth_roots: int = 8
    synth_noise: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.geo_level not in GEO_LEVELS:
            raise ValueError(f"geo_level must be one of {GEO_LEVELS}")
        if self.fos_layer not in FOS_LAYERS:
            raise ValueError(f"fos_layer must be one of {FOS_LAYERS}")
        if not self.half_life > 0:
            raise ValueError("half_life must be positive")
        if not self.rca_threshold > 0:
            raise ValueError("rca_threshold must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol >= 0:
            raise ValueError("tol must be non-negative")
        if self.rank_window < 1:
            raise ValueError("rank_window must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.min_regions < 2:
            raise ValueError("min_regions must be >= 2")
        if self.synth_noise < 0:
            raise ValueError("synth_noise must be non-negative")
        if (self.year_min is not None and self.year_max is not None
                and self.year_min > self.year_max):
            raise ValueError("year_min exceeds year_max")
        parse_lags(self.lags)

    @classmethod
    def _coerce(cls, key: str, text: str):
        field = {f.name: f for f in fields(cls)}.get(key)
        if field is None:
            raise ValueError(f"unknown configuration key {key!r}")
        kind = field.type if isinstance(field.type, str) else field.type.__name__
        text = text.strip()
        if "None" in kind and text.lower() in ("", "none"):
            return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        if kind.startswith("bool"):
            return _parse_bool(text)
        return text

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "PipelineConfig":
        return cls(**{k: cls._coerce(k, v) for k, v in values.items()})

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "PipelineConfig":
        raw: dict[str, str] = {}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                               inline_comment_prefixes=("#",))
            parser.optionxform = str
            text = Path(path).read_text(encoding="utf-8")
            parser.read_string(f"[{SECTION}]\n{text}")
            raw.update(parser[SECTION])
            base = Path(path).parent
            for key in PATH_KEYS:
                if raw.get(key) and not Path(raw[key]).is_absolute():
                    raw[key] = str(base / raw[key])
        cfg = cls.from_mapping(raw)
        if overrides:
            cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Digest of the analysis parameters; file locations are left out."""
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in PATH_KEYS}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def soft_sector_names(self) -> list[str]:
        return [s.strip() for s in self.soft_sectors.split(";") if s.strip()]

    @property
    def lag_list(self) -> list[int]:
        return parse_lags(self.lags)

    def reference_for(self, level: str) -> str:
        return self.reference_tl1 if level == "TL1" else self.reference_tl2

    def year_filter(self, years):
        return [y for y in years
                if (self.year_min is None or y >= self.year_min)
                and (self.year_max is None or y <= self.year_max)]
