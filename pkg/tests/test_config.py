from pathlib import Path

import pytest

from waveguide_stability.config import DEFAULTS, ConfigError, load_config, parse_config

GOLDEN = Path(__file__).resolve().parents[1] / "configs" / "golden.yaml"


def _violations(text):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    return exc.value.violations


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg["weights"]["r"] == DEFAULTS["weights"]["r"]
    assert cfg.n == 3 and cfg.N == 1


def test_r_one_rejected():
    v = _violations("weights: {r: 1}")
    assert v == ["weights.r: requires r > 1, got 1"]


def test_d0_at_open_endpoint_rejected():
    v = _violations("potential: {d: 1.5}\ninitial: {d0: 1.0}")
    assert len(v) == 1 and v[0].startswith("initial.d0: requires 0 < d0 < 2d/3")


def test_all_violations_reported():
    v = _violations("weights: {r: 0.5}\nsweep: {eps: 0.5, delta: 2.0}\nfbi: {mu: 1.0}")
    keys = sorted(x.split(":")[0] for x in v)
    assert keys == ["fbi.mu", "sweep.delta", "sweep.eps", "weights.r"]


def test_parameter_chain_and_unknown_section():
    assert any(x.startswith("parabolic.a_w/b_w") for x in _violations("parabolic: {a_w: 1.0, b_w: 2.5}"))
    assert any("give both" in x for x in _violations("parabolic: {a_w: 1.0}"))
    assert _violations("solver: {}") == ["solver: unknown section"]


def test_malformed_yaml():
    assert _violations("a: [1,")[0].startswith("malformed YAML")


def test_golden_parses_with_stable_hash():
    a, b = load_config(GOLDEN), load_config(GOLDEN)
    assert a.digest == b.digest and len(a.digest) == 64
    assert a["geometry"]["shape"] == "disk" and len(a["sweep"]["amplitudes"]) == 4


def test_hash_tracks_content():
    assert parse_config("seed: 1").digest != parse_config("seed: 2").digest
    # key order is irrelevant
    assert parse_config("weights: {r: 2.5, lambda: 0.1}").digest == \
        parse_config("weights: {lambda: 0.1, r: 2.5}").digest


def test_include_overrides(tmp_path):
    (tmp_path / "base.yaml").write_text("weights: {r: 3.0, lambda: 0.1}\nseed: 4\n")
    (tmp_path / "child.yaml").write_text("include: base.yaml\nweights: {r: 2.5}\n")
    cfg = load_config(tmp_path / "child.yaml")
    assert cfg["weights"]["r"] == 2.5 and cfg["weights"]["lambda"] == 0.1 and cfg["seed"] == 4


def test_include_cycle(tmp_path):
    (tmp_path / "a.yaml").write_text("include: b.yaml\n")
    (tmp_path / "b.yaml").write_text("include: a.yaml\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.yaml")
