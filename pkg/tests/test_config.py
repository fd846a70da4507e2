import pytest

from autocw.config import ConfigError, ExperimentConfig, build_config, load_config, parse_overrides


def write(path, text):
    path.write_text(text)
    return path


def test_defaults_round_trip_through_text(tmp_path):
    cfg = ExperimentConfig()
    again = load_config(write(tmp_path / "c.cfg", cfg.to_text()))
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_file_then_overrides(tmp_path):
    path = write(tmp_path / "c.cfg", "[acoustics]\nt60_sweep = 0.0, 0.5, 1.0\n[search]\ncw_max = 9\n")
    cfg = load_config(path, ["search.cw_max=13", "run.seed=4", "search.run_grid=yes"])
    assert cfg.acoustics.t60_sweep == (0.0, 0.5, 1.0)
    assert cfg.search.cw_max == 13 and cfg.search.run_grid is True
    assert cfg.run.seed == 4


def test_include_relative_and_overridable(tmp_path):
    (tmp_path / "sub").mkdir()
    write(tmp_path / "sub" / "base.cfg", "[nn]\nhidden_dims = 16 16\n[run]\nseed = 1\n")
    path = write(tmp_path / "sub" / "top.cfg", "include = base.cfg\n[run]\nseed = 2\n")
    cfg = load_config(path)
    assert cfg.nn.hidden_dims == (16, 16) and cfg.run.seed == 2


def test_include_cycle(tmp_path):
    write(tmp_path / "a.cfg", "include = b.cfg\n")
    write(tmp_path / "b.cfg", "include = a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.cfg")


def test_optional_blank_is_none():
    cfg = build_config({"acoustics": {"snr_db": "20"}, "search": {"max_side": ""}})
    assert cfg.acoustics.snr_db == 20.0 and cfg.search.max_side is None
    assert build_config({"acoustics": {"snr_db": ""}}).acoustics.snr_db is None


@pytest.mark.parametrize("values", [
    {"bogus": {"a": "1"}},
    {"run": {"nope": "1"}},
    {"corpus": {"seed": "3"}},                # seeds come from run.seed
    {"features": {"hop_ms": "5"}},            # framing is owned by [corpus]
    {"search": {"cw_max": "10"}},
    {"search": {"grid_max": "12"}},
    {"search": {"probe_mode": "max"}},
    {"search": {"baseline": "maybe"}},
    {"run": {"seed": "x"}},
    {"acoustics": {"t60_sweep": "0.5, 0.5"}},
    {"acoustics": {"ir_kind": "measured"}},
    {"train": {"batch_size": "0"}},
    {"corpus": {"n_classes": "1"}},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path / "c.cfg", "[run\nseed=1\n"))
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.cfg")


def test_override_syntax():
    assert parse_overrides(["a.b=1", "a.c= x y"]) == {"a": {"b": "1", "c": " x y"}}
    for bad in ("a=1", "a.b", ".b=1"):
        with pytest.raises(ConfigError):
            parse_overrides([bad])


def test_digest_sections():
    a = ExperimentConfig()
    b = build_config({"search": {"cw_max": "13"}})
    assert a.digest() != b.digest()
    assert a.digest("corpus", "acoustics") == b.digest("corpus", "acoustics")
    assert a.digest("search") != b.digest("search")


def test_grid_range_defaults_to_search_range():
    cfg = build_config({"search": {"cw_min": "5", "cw_max": "9"}})
    assert cfg.search.grid_range == (5, 9)
    cfg = build_config({"search": {"grid_min": "1", "grid_max": "3"}})
    assert cfg.search.grid_range == (1, 3)
