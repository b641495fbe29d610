import csv
import json
import math
from pathlib import Path

import pytest

from waveguide_stability.cli import SUBCOMMANDS, main, run
from waveguide_stability.config import load_config, parse_config

GOLDEN = Path(__file__).resolve().parents[1] / "configs" / "golden.yaml"


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    assert main(["stability-sweep", "--config", str(GOLDEN), "--out", str(out)]) == 0
    return out


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    assert "invalid choice" in capsys.readouterr().err
    with pytest.raises(ValueError):
        run("bogus", parse_config(""), "unused")


def test_forward_zero_potential_unitary(tmp_path):
    rec = run("forward", load_config(GOLDEN), tmp_path)
    v = {x.name: x for x in rec.verdicts}["unitarity_drift_below_1e-10"]
    assert v.hard and v.passed and v.value < 1e-10
    rows = _read(tmp_path / "forward.csv")
    assert float(rows[0]["t"]) == 0.0 and float(rows[0]["l2_drift"]) == 0.0


def _shape_norm(cfg):
    # lattice sum of the bump profile times the axial decay, node by node
    g, pot = cfg["geometry"], cfg["potential"]
    h, a, hz, R = g["spacing"], g["params"], g["axial_spacing"], g["R"]
    k = math.ceil(a / h) + 1
    nz = round(2 * R / hz) + 1
    axial = sum(math.exp(-4 * pot["b"] * math.sqrt(1 + (-R + j * hz) ** 2) ** pot["d"])
                for j in range(nz))
    total = 0.0
    for i in range(-k, k + 1):
        for j in range(-k, k + 1):
            r2 = ((i * h) ** 2 + (j * h) ** 2) / pot["width"] ** 2
            if r2 < 1:
                total += math.exp(2 * (1 - 1 / (1 - r2)))
    return math.sqrt(total * axial * h * h * hz)


def test_sweep_golden_rows(sweep_dir):
    cfg = load_config(GOLDEN)
    rows = _read(sweep_dir / "stability.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["pair_id", "amplitude", "l2_diff", "gap", "bound", "ratio",
                             "branch", "y", "theta"]
    unit = _shape_norm(cfg)
    eps = cfg["sweep"]["eps"]
    for r in rows:
        A, gap = float(r["amplitude"]), float(r["gap"])
        assert float(r["l2_diff"]) == pytest.approx(A * unit, rel=1e-12)
        assert float(r["bound"]) == pytest.approx((gap + 1 / abs(math.log(gap))) ** eps, rel=1e-12)
        assert float(r["theta"]) == pytest.approx(1 / 3, rel=1e-15)
    for col in ("l2_diff", "gap", "bound"):
        vals = [float(r[col]) for r in rows]
        assert all(a > b for a, b in zip(vals, vals[1:])), col


def test_schema_and_manifest(sweep_dir):
    schema = json.loads((sweep_dir / "stability.schema.json").read_text())
    header = list(_read(sweep_dir / "stability.csv")[0])
    assert [c["name"] for c in schema["columns"]] == header
    assert all(c["description"] for c in schema["columns"])
    man = json.loads((sweep_dir / "manifest.json").read_text())
    assert man["subcommand"] == "stability-sweep"
    assert man["config_hash"] == load_config(GOLDEN).digest
    assert man["files"] and all((sweep_dir / f).exists() for f in man["files"])
    assert (sweep_dir / "stability_sweep.svg").read_text().lstrip().startswith("<?xml")


def test_deterministic_with_threads(sweep_dir, tmp_path):
    assert main(["stability-sweep", "--config", str(GOLDEN), "--out", str(tmp_path), "--jobs", "2"]) == 0
    for name in ("stability.csv", "stability.schema.json", "stability_sweep.svg"):
        assert (tmp_path / name).read_bytes() == (sweep_dir / name).read_bytes()


def test_seed_override_changes_hash(tmp_path):
    main(["forward", "--config", str(GOLDEN), "--out", str(tmp_path), "--seed", "7"])
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 7 and man["config_hash"] != load_config(GOLDEN).digest


def test_strict_fails_on_soft_verdict(tmp_path):
    # a near-zero admissibility budget skips every nonzero pair
    cfg = tmp_path / "tight.yaml"
    cfg.write_text(f"include: {GOLDEN}\npotential: {{M: 1.0e-6}}\n")
    assert main(["stability-sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["stability-sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--strict"]) == 1


def test_config_error_exit(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("weights: {r: 1}\nsweep: {eps: 0.6}\n")
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "requires r > 1" in err and "requires 0 < eps" in err


def test_module_error_has_context(tmp_path, capsys):
    cfg = tmp_path / "inside.yaml"
    cfg.write_text(f"include: {GOLDEN}\nweights: {{x0: [0.5, 0.0]}}\n")
    assert main(["carleman-check", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "carleman-check:" in capsys.readouterr().err


@pytest.mark.parametrize("sub", [s for s in SUBCOMMANDS if s != "stability-sweep"])
def test_golden_subcommands_pass_strict(sub, tmp_path):
    assert main([sub, "--config", str(GOLDEN), "--out", str(tmp_path), "--strict"]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert all(v["passed"] for v in man["verdicts"].values())
