import csv
import io
import json
import math

import numpy as np
import pytest

from feynslice.harness import cli
from feynslice.harness.checks import load_expectations
from feynslice.harness.config import loads
from feynslice.harness.experiments import run_convergence
from feynslice.harness.report import fmt, to_csv
from feynslice.propagator import load_kernel

SMALL = """\
resolution = 64
t = 0.5
L = [2, 4, 8]
seed = 3
battery_modes = 3
battery_random = 2
[manifold]
kind = "circle"
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows(text, record="row"):
    return [r for r in csv.DictReader(io.StringIO(text)) if r["record"] == record]


def test_fmt_round_trips_doubles():
    for x in (0.1, 1 / 3, 2.0**-40, 123456.789):
        s = fmt(x)
        assert float(s) == x
    assert fmt(1 / 3) == "0.33333333333333331"
    assert fmt(math.nan) == "nan" and fmt(True) == "true" and fmt(7) == "7"


def test_converge_csv_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["converge", cfg, "--out", str(a), "--deterministic"]) == 0
    assert cli.main(["converge", cfg, "--out", str(b), "--deterministic"]) == 0
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    head = text.splitlines()[0].split(",")
    assert head[:3] == ["hbar", "L", "mesh"]
    assert head[-4:] == ["record", "config_hash", "slope", "message"]
    data = rows(text)
    assert [int(r["L"]) for r in data] == [2, 4, 8]
    assert all(r["runtime_seconds"] == "0" for r in data)
    assert len({r["config_hash"] for r in data}) == 1
    fit = rows(text, "fit")[0]
    assert math.isfinite(float(fit["slope"]))
    # stdout when --out is absent
    assert cli.main(["converge", cfg, "--deterministic"]) == 0
    assert capsys.readouterr().out == text


def test_single_L_gives_nan_slope(tmp_path):
    cfg = write(tmp_path, SMALL.replace("L = [2, 4, 8]", "L = [4]"))
    out = tmp_path / "o.csv"
    assert cli.main(["converge", cfg, "--out", str(out), "--deterministic"]) == 0
    assert rows(out.read_text(), "fit")[0]["slope"] == "nan"


def test_self_difference_control_is_zero():
    cfg = loads(SMALL.replace("seed = 3", "seed = 3\nself_difference = true"))
    rep = run_convergence(cfg, deterministic=True)
    assert max(r["err_op"] for r in rep.rows) <= 1e-10


def test_check_failure_exits_4(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    strict = tmp_path / "strict.toml"
    exp = load_expectations()
    exp["converge"]["slope_margin"] = -100.0
    # minimal TOML writer for a two-level table of numbers
    lines = []
    for tab, body in exp.items():
        lines.append(f"[{tab}]")
        lines += [f"{k} = {json.dumps(v)}" for k, v in body.items()]
    strict.write_text("\n".join(lines) + "\n")
    out = tmp_path / "o.csv"
    assert cli.main(["converge", cfg, "--check", "--expectations", str(strict), "--out", str(out)]) == 4
    assert "check failed" in capsys.readouterr().err
    checks = rows(out.read_text(), "check")
    assert any(r["message"].startswith("FAIL convergence slope") for r in checks)


def test_config_error_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + "bogus = 1\n")
    assert cli.main(["converge", cfg]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:9:" in err and "bogus" in err


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + '[potential]\nkind = "cosine"\namplitude = 400.0\nwavevector = [3.0]\n')
    assert cli.main(["kernel-dump", cfg, "--t", "0.5", "--out", str(tmp_path / "k.bin")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_kernel_dump(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "k.bin"
    assert cli.main(["kernel-dump", cfg, "--t", "0.1", "--out", str(out)]) == 0
    K, head = load_kernel(out)
    assert K.shape == (64, 64) and head["t"] == 0.1 and head["hbar"] == 1.0
    # a V = 0 circle kernel is circulant
    np.testing.assert_allclose(np.roll(K[0], 5), K[5], atol=1e-13)
    assert cli.main(["kernel-dump", cfg, "--t", "-1", "--out", str(out)]) == 2


def test_warning_rows_are_emitted():
    cfg = loads(SMALL.replace("resolution = 64", "resolution = 16"))
    rep = run_convergence(cfg, deterministic=True)
    text = to_csv(rep)
    warn = rows(text, "warning")
    assert warn and any("phase sampling" in r["message"] for r in warn)


def test_stability_and_consistency_run(tmp_path):
    cfg = write(tmp_path, "times = [0.05, 0.1]\n" + SMALL)
    for cmd in ("stability", "consistency"):
        out = tmp_path / f"{cmd}.csv"
        assert cli.main([cmd, cfg, "--out", str(out), "--deterministic"]) == 0
        assert len(rows(out.read_text())) >= 2


def test_curvature_check_on_torus(tmp_path):
    cfg = write(tmp_path, 'resolution = 12\nn_points = 3\nab_comparison = false\n'
                '[manifold]\nkind = "torus"\n')
    out = tmp_path / "c.csv"
    assert cli.main(["curvature-check", cfg, "--out", str(out), "--check"]) == 0
    assert len(rows(out.read_text())) == 3
