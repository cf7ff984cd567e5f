import pytest

from wil.config import SCHEMA, ConfigError, MissingConfig, load_config, parse_config


def test_defaults_cover_every_key():
    cfg = parse_config("")
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["grid.status_cells"] == 400 and cfg["grid.status_cap"] is None


def test_comments_lists_and_auto_values():
    cfg = parse_config("# header\npreset.kind = power_law  # trailing\n\nsim.stamps = 1, 2.5,4\n"
                       "grid.status_cap = auto\nsim.horizon = 4\n")
    assert cfg["preset.kind"] == "power_law"
    assert cfg["sim.stamps"] == (1.0, 2.5, 4.0)
    assert cfg["grid.status_cap"] is None
    assert cfg.explicit == {"preset.kind", "sim.stamps", "grid.status_cap", "sim.horizon"}


@pytest.mark.parametrize("text, fragment", [
    ("preset.flavour = x\n", "unknown key"),
    ("sim.n = 3\nsim.n = 4\n", "duplicate key"),
    ("just words\n", "expected 'key = value'"),
    ("sim.n = many\n", "bad value"),
    ("sim.n = 0\n", "sim.n must be >= 1"),
    ("solver.tol = 0\n", "solver.tol must be > 0"),
    ("sim.stamps = 3, 1\n", "sorted"),
    ("sim.horizon = 2\nsim.stamps = 1, 3\n", "must not exceed"),
    ("sim.seed = 18446744073709551616\n", "64-bit"),
    ("evolve.start = middle\n", "evolve.start"),
])
def test_rejections(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text, "run.cfg")


def test_error_names_file_and_line():
    with pytest.raises(ConfigError, match=r"run.cfg:2:"):
        parse_config("sim.n = 5\nbogus = 1\n", "run.cfg")


def test_digest_tracks_text():
    assert parse_config("sim.n = 5\n").digest != parse_config("sim.n = 6\n").digest
    assert parse_config("sim.n = 5\n").digest == parse_config("sim.n = 5\n").digest


def test_missing_file(tmp_path):
    with pytest.raises(MissingConfig):
        load_config(tmp_path / "absent.cfg")


def test_preset_params_profiles():
    p = parse_config("preset.kind = seasonal\n").preset_params()
    assert p.n_profile is not None
    p = parse_config("preset.kind = seasonal\npreset.n_profile = tabulated\npreset.n_edges = 0, 0.5, 1\n"
                     "preset.n_values = 1, 2\n").preset_params()
    assert p.n_profile is not None
    with pytest.raises(ConfigError):
        parse_config("preset.n_profile = wiggly\n").preset_params()
