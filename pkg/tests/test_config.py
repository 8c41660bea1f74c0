import pytest

from mekd.config import ConfigError, RunConfig


def test_defaults_cover_every_key():
    cfg = RunConfig.defaults()
    assert cfg.get("run", "seed") == 0
    assert cfg.get("data", "kind") == "blobs"
    assert cfg.get("data", "num_classes") == 4
    assert cfg.get("distill", "p_norm") == 1
    assert cfg.get("gan", "variant") == "wgan-gp"


def test_empty_ini_equals_defaults():
    assert RunConfig.from_ini("") == RunConfig.defaults()


def test_partial_ini_overrides_only_named_keys():
    cfg = RunConfig.from_ini("[run]\nseed = 9\n\n[distill]\nalpha = 0.5\n")
    assert cfg.get("run", "seed") == 9
    assert cfg.get("distill", "alpha") == 0.5
    assert cfg.get("distill", "beta") == RunConfig.defaults().get("distill", "beta")


def test_serialize_round_trip():
    cfg = RunConfig.from_ini("[gan]\nepochs = 7\nmilestones = 3,5\n")
    again = RunConfig.from_ini(cfg.serialize())
    assert again == cfg
    assert again.serialize() == cfg.serialize()


def test_serialization_is_canonical():
    a = RunConfig.from_ini("[run]\nseed = 3\n\n[data]\nn = 16\n")
    b = RunConfig.from_ini("[data]\nn = 16\n\n[run]\nseed = 3\n")
    assert a.serialize() == b.serialize()
    assert a.hash() == b.hash()


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="section"):
        RunConfig.from_ini("[experiments]\nx = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="key"):
        RunConfig.from_ini("[run]\nseeed = 1\n")


def test_unparseable_value_rejected():
    with pytest.raises(ConfigError, match="parse"):
        RunConfig.from_ini("[run]\nseed = banana\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[teacher]\nhflip = maybe\n")


def test_malformed_ini_rejected():
    with pytest.raises(ConfigError, match="malformed"):
        RunConfig.from_ini("seed = 1\n")  # key before any section header


def test_bool_and_ints_parsing():
    cfg = RunConfig.from_ini(
        "[teacher]\nhflip = true\nmilestones = 1,2,3\n\n[distill]\ncache_teacher = no\n")
    assert cfg.get("teacher", "hflip") is True
    assert cfg.get("teacher", "milestones") == (1, 2, 3)
    assert cfg.get("distill", "cache_teacher") is False


def test_empty_ints_value():
    cfg = RunConfig.from_ini("[gan]\nmilestones =\n")
    assert cfg.get("gan", "milestones") == ()


def test_replace_returns_new_config():
    base = RunConfig.defaults()
    changed = base.replace("run", "seed", 42)
    assert base.get("run", "seed") == 0
    assert changed.get("run", "seed") == 42
    with pytest.raises(ConfigError):
        base.replace("run", "nonexistent", 1)


def test_hash_stable_and_sensitive():
    base = RunConfig.defaults()
    assert base.hash() == RunConfig.defaults().hash()
    assert len(base.hash()) == 16
    assert base.hash() != base.replace("run", "seed", 1).hash()


def test_hash_ignores_out_dir():
    base = RunConfig.defaults()
    moved = base.replace("run", "out_dir", "elsewhere/run9")
    assert base.hash() == moved.hash()
    assert base != moved  # equality still sees the difference


def test_from_file_missing_path(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.from_file(tmp_path / "nope.ini")


def test_from_file_round_trip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseed = 5\n")
    assert RunConfig.from_file(path).get("run", "seed") == 5


def test_get_unknown_entry_raises():
    with pytest.raises(KeyError):
        RunConfig.defaults().get("run", "bogus")
