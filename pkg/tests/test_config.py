import pytest

from scifit.config import PipelineConfig, parse_lags


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.half_life, cfg.rca_threshold, cfg.reference_tl1, cfg.reference_tl2) == (
        3.0, 1.0, "US", "US06")
    assert cfg.lag_list == list(range(-5, 6))
    assert cfg.reference_for("TL1") == "US" and cfg.reference_for("TL2") == "US06"


def test_load_resolves_paths_and_applies_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment\n"
        "documents = docs.jsonl\n"
        "half_life = 2.5   # inline comment\n"
        "fos_layer = 2\n"
        "year_min = 2001\n"
        "output_dir = /abs/out\n",
        encoding="utf-8",
    )
    cfg = PipelineConfig.load(path, {"max_iter": 50, "seed": None})
    assert cfg.documents == str(tmp_path / "docs.jsonl")
    assert cfg.output_dir == "/abs/out"
    assert cfg.half_life == 2.5 and cfg.fos_layer == 2 and cfg.year_min == 2001
    assert cfg.max_iter == 50 and cfg.seed == 0
    assert cfg.year_filter([2000, 2001, 2002]) == [2001, 2002]


def test_text_round_trip(tmp_path):
    cfg = PipelineConfig(half_life=4.0, year_max=2010, soft_sectors="Art;History")
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text(), encoding="utf-8")
    again = PipelineConfig.load(path)
    again.output_dir = cfg.output_dir
    assert again == cfg
    assert again.soft_sector_names == ["Art", "History"]


@pytest.mark.parametrize("field, value", [
    ("geo_level", "TL3"), ("fos_layer", 5), ("half_life", 0.0), ("rca_threshold", -1.0),
    ("max_iter", 0), ("tol", -1e-3), ("rank_window", 0), ("replicates", 0), ("min_regions", 1),
    ("lags", "a:b"), ("synth_noise", -0.1),
])
def test_validation(field, value):
    with pytest.raises(ValueError):
        PipelineConfig(**{field: value})


def test_year_range_and_unknown_keys(tmp_path):
    with pytest.raises(ValueError):
        PipelineConfig(year_min=2010, year_max=2000)
    path = tmp_path / "bad.cfg"
    path.write_text("colour = blue\n", encoding="utf-8")
    with pytest.raises(ValueError, match="colour"):
        PipelineConfig.load(path)


def test_hash_ignores_locations_only():
    a = PipelineConfig(documents="/x/docs.jsonl", output_dir="a")
    b = PipelineConfig(documents="docs.jsonl", output_dir="b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != PipelineConfig(half_life=2.0).config_hash()


def test_parse_lags():
    assert parse_lags("-2:1") == [-2, -1, 0, 1]
    assert parse_lags("0, 3,5") == [0, 3, 5]
