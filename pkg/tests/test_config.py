import configparser

import pytest
from hypothesis import given, strategies as st

from voxinpaint.config import ConfigError, RunConfig, dump_config, load_config, parse_config, with_overrides


def test_golden_defaults():
    """Every published hyperparameter survives a dump of the default config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(dump_config(RunConfig()))
    golden = {
        ("stage1", "epochs"): "50", ("stage1", "lr"): "0.0001", ("stage1", "batch"): "8",
        ("stage1", "beta1"): "0.9", ("stage1", "beta2"): "0.999", ("stage1", "levels"): "4",
        ("stage1", "threshold"): "0.5",
        ("stage2", "epochs"): "100", ("stage2", "lr"): "0.001", ("stage2", "batch"): "4",
        ("stage2", "timesteps"): "1000", ("stage2", "beta_start"): "0.0001", ("stage2", "beta_end"): "0.02",
        ("stage2", "scheduler_factor"): "0.5", ("stage2", "scheduler_patience"): "5",
        ("loss", "w_bce"): "1.0", ("loss", "w_color"): "20.0", ("loss", "w_perceptual"): "0.1",
        ("loss", "w_prior"): "0.1",
        ("damage", "holes_per_slice_min"): "1", ("damage", "holes_per_slice_max"): "3",
        ("damage", "hole_radius_min"): "5.0", ("damage", "hole_radius_max"): "10.0",
        ("damage", "erosion_radius"): "2",
        ("general", "resolution"): "32",
    }
    for (section, key), value in golden.items():
        assert parser.get(section, key) == value, (section, key)


def test_dump_parse_round_trip():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


def test_non_default_round_trip():
    text = dump_config(RunConfig()).replace("widths = 32, 64, 96, 128", "widths = 8, 16") \
        .replace("seed = 0", "seed = 42").replace("mode = single_step", "mode = ddpm_loop") \
        .replace("hole_shapes = circle, polygon", "hole_shapes = polygon")
    cfg = parse_config(text)
    assert cfg.stage2.net.widths == (8, 16) and cfg.seed == 42
    assert cfg.inference.mode == "ddpm_loop" and cfg.damage.hole_shapes == ("polygon",)
    assert parse_config(dump_config(cfg)) == cfg


@given(st.integers(0, 2**31), st.integers(1, 200), st.floats(1e-6, 1e-1), st.sampled_from(["gt", "predicted"]))
def test_round_trip_property(seed, epochs, lr, source):
    text = f"[general]\nseed = {seed}\n[stage1]\nepochs = {epochs}\nlr = {lr!r}\n[inference]\nmask_source = {source}\n"
    cfg = parse_config(text)
    assert cfg.seed == seed and cfg.stage1.epochs == epochs and cfg.stage1.lr == lr
    assert parse_config(dump_config(cfg)) == cfg


def test_partial_config_keeps_defaults():
    cfg = parse_config("[stage2]\nepochs = 3  # short run\n")
    assert cfg.stage2.epochs == 3 and cfg.stage1 == RunConfig().stage1


@pytest.mark.parametrize("text,match", [
    ("[stage3]\nepochs = 1\n", "unknown section"),
    ("[stage1]\nepoch = 1\n", "unknown key"),
    ("[stage1]\nEpochs = 1\n", "unknown key"),
    ("[stage1]\nepochs = ten\n", "bad value"),
    ("[general]\nresolution = 64\n", "resolution"),
    ("[stage1]\nlr = 0\n", "lr"),
    ("[stage1]\nbeta1 = 1.0\n", "betas"),
    ("[stage2]\nbatch = 0\n", "batch"),
    ("[stage2]\nmirror_p = 1.5\n", "mirror_p"),
    ("[stage2]\nemb_dim = 7\n", "emb_dim"),
    ("[stage2]\nwidths = 8\n", "widths"),
    ("[stage2]\nmask_source = oracle\n", "mask_source"),
    ("[stage2]\nbeta_end = 0.001\n", "schedule"),
    ("[stage2]\npalette_mean = 0.5, 0.5\n", "palette"),
    ("[inference]\nmode = sampling\n", "mode"),
    ("[inference]\nsingle_step_t = 1000\n", "single_step_t"),
    ("[damage]\nhole_shapes = star\n", "hole_shapes"),
    ("[damage]\nholes_per_slice_min = 4\n", "holes_per_slice"),
    ("no section header\n", "config"),
])
def test_schema_violations_are_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_load_config(tmp_path):
    assert load_config(None) == RunConfig()
    path = tmp_path / "run.cfg"
    path.write_text("[general]\nseed = 5\n")
    assert load_config(path).seed == 5
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.cfg")


def test_with_overrides():
    assert with_overrides(RunConfig(), seed=3).seed == 3
    with pytest.raises(ConfigError):
        with_overrides(RunConfig(), sed=3)
