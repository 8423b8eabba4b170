from importlib import resources

import numpy as np
import pytest

from feynslice.harness.config import ConfigError, loads, parse_config

CIRCLE = '[manifold]\nkind = "circle"\n'


def test_minimal_circle_defaults():
    cfg = loads(CIRCLE)
    assert cfg.resolution == (512,)
    assert cfg.cutoff.r_out == pytest.approx(0.9 * np.pi)
    assert cfg.cutoff.r_in == pytest.approx(0.45 * np.pi)
    assert cfg.K is None and cfg.epsilon == 0.5 and cfg.hbar == (1.0,)
    assert [len(p) for p in cfg.schedule] == [4, 8, 16, 32]
    assert cfg.potential.is_zero


def test_hash_tracks_content_not_layout():
    a = loads(CIRCLE + "\n# a comment\n")
    b = loads("t = 0.5\n" + CIRCLE)
    c = loads("t = 0.25\n" + CIRCLE)
    assert a.config_hash == b.config_hash != c.config_hash
    assert len(a.config_hash) == 16


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError) as e:
        loads("t = 0.5\nresoluton = 64\n" + CIRCLE)
    assert e.value.line == 2 and "resoluton" in str(e.value)
    with pytest.raises(ConfigError) as e:
        loads(CIRCLE + "radius = 2.0\ncolour = 1\n")
    assert e.value.line == 4


def test_parse_error_line_and_path(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(CIRCLE + "t = = 1\n")
    with pytest.raises(ConfigError) as e:
        parse_config(p)
    assert e.value.line == 3
    assert str(e.value).startswith(f"{p}:3:")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.toml")


@pytest.mark.parametrize("text,line,fragment", [
    ("epsilon = 0.7\n" + CIRCLE, 1, "epsilon must lie in (0, 1/2]"),
    ("partition = [[0.25, -0.25, 0.5]]\n" + CIRCLE, 1, "positive"),
    ("t = 0.5\npartition = [[0.2, 0.2]]\n" + CIRCLE, 2, "sum"),
    ("L = [8, 4]\n" + CIRCLE, 1, "ascending"),
    ("resolution = 64\nK = 65\n" + CIRCLE, 2, "exceeds"),
    ("slice_bound = 0.01\n" + CIRCLE, 1, "slice_bound"),
    ("r_out = 3.5\n" + CIRCLE, 1, ""),
    ("seed = 1.5\n" + CIRCLE, 1, "wrong type"),
    ("steps = true\n" + CIRCLE, 1, "wrong type"),
    ("L = [4]\npartition = [[0.5]]\n" + CIRCLE, 2, "either"),
    ('[manifold]\nkind = "torus"\nperiods = [1.0, 2.0]\n\nresolution = [8, 8, 8]\n', None, ""),
    ('[manifold]\nkind = "klein"\n', 2, "kind"),
    (CIRCLE + '[potential]\nkind = "cosine"\namplitude = 1.0\nwavevector = [1.0, 2.0]\n', None, ""),
    ("fd_step = 0.3\n" + CIRCLE, 1, "fd_step"),
])
def test_rejections(text, line, fragment):
    with pytest.raises(ConfigError) as e:
        loads(text)
    if line is not None:
        assert e.value.line == line
    assert fragment in str(e.value)


def test_missing_manifold():
    with pytest.raises(ConfigError, match="manifold"):
        loads("t = 0.5\n")


def test_torus_resolution_broadcast_and_hbar_scaling():
    cfg = loads('resolution = 32\nhbar = [1.0, 0.5]\n[manifold]\nkind = "torus"\n')
    assert cfg.resolution == (32, 32)
    assert cfg.resolution_for(0.5) == (64, 64)
    cfg = loads('resolution = [16, 24]\nhbar_scaled_resolution = false\nhbar = 0.5\n'
                '[manifold]\nkind = "torus"\nperiods = [1.0, 1.5]\n')
    assert cfg.resolution_for(0.5) == (16, 24)


def test_tabulated_potential():
    cfg = loads(CIRCLE + '[potential]\nkind = "tabulated"\nterms = [\n'
                '  {amplitude = 1.0, wavevector = [1.0]},\n'
                '  {amplitude = 0.5, wavevector = [2.0], phase = 0.3},\n]\n')
    x = np.array([[0.7]])
    assert cfg.potential(cfg.manifold, x)[0] == pytest.approx(np.cos(0.7) + 0.5 * np.cos(1.4 + 0.3))


def test_packaged_examples_parse():
    folder = resources.files("feynslice.harness").joinpath("configs")
    names = [p.name for p in folder.iterdir() if p.name.endswith(".toml")]
    assert len(names) >= 10
    for name in names:
        loads(folder.joinpath(name).read_text(), name)
