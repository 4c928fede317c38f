import json
import math
import os

import pytest

from logconf import cli
from logconf.config import ConfigError, parse_config, preset_config
from logconf.geometry import gen_channel
from logconf.mesh import load_mesh, save_mesh

CHANNEL = """\
[geometry]
kind = channel
h_target = 0.5
length = 3
half_width = 1

[ramp]
We_end = 0.3
T_step = 1
t_final = 1.5

[run]
backend = superlu
"""


def test_defaults_filled_from_preset():
    cfg = parse_config("[geometry]\nkind = cylinder\n")
    assert cfg["model.beta"] == 0.59
    assert cfg["geometry.h_target"] == 0.14
    assert cfg["ramp.T_step"] == "auto"
    assert cfg.T_step() == pytest.approx(4000.0)
    assert cfg.t_final() == pytest.approx(5000.0)
    cs = parse_config("[geometry]\nkind = crossslot\n")
    assert (cs["model.kind"], cs["model.beta"], cs["model.a_max_sq"]) == ("fene-cr", 0.2, 100.0)
    ts = parse_config("[geometry]\nkind = trislot\ntheta = pi/3.5\n")
    assert ts["geometry.theta"] == pytest.approx(math.pi / 3.5)
    assert ts["model.beta"] == 0.1


@pytest.mark.parametrize("text,key", [
    ("[geometry]\nkind = cylinder\nradius = 2\n", "geometry.radius"),
    ("[solver]\nx = 1\n", "solver"),
    ("[model]\nbeta = 1.5\n", "model.beta"),
    ("[model]\nbeta = abc\n", "model.beta"),
    ("[model]\nkind = maxwell\n", "model.kind"),
    ("[run]\nmode = fast\n", "run.mode"),
    ("[output]\nobservers = drag,lift\n", "output.observers"),
    ("[geometry]\nkind = sphere\n", "geometry.kind"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.key == key
    assert key in str(e.value)


def test_beta_message():
    with pytest.raises(ConfigError, match=r"beta out of range \[0,1\]"):
        parse_config("[model]\nbeta = 1.5\n")


@pytest.mark.parametrize("name", ["cylinder", "crossslot", "trislot", "channel"])
def test_manifest_round_trip(name):
    cfg = preset_config(name, ramp__We_end=0.45, run__seed=3)
    again = parse_config(cfg.to_text())
    assert again.values == cfg.values


def _write(tmp_path, text, name="case.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, CHANNEL)
    assert cli.main(["run", cfg, "-o", str(tmp_path / "a")]) == 0
    assert cli.main(["run", cfg, "-o", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(os.listdir(a))
    assert names == ["final.vtk", "final_fields.csv", "manifest.ini", "mesh.txt", "run.csv"]
    assert (a / "run.csv").read_bytes() == (b / "run.csv").read_bytes()
    rows = (a / "run.csv").read_text().splitlines()
    assert rows[0].split(",")[:3] == ["step", "t", "We"]
    assert float(rows[-1].split(",")[2]) == 0.3
    manifest = parse_config((a / "manifest.ini").read_text())
    assert manifest.values == parse_config(CHANNEL).values
    mesh = load_mesh((a / "mesh.txt").read_text())
    assert mesh.n_triangles > 0


def test_output_root_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path, CHANNEL.replace("[run]", "[output]\ndirectory = rel/out\nvtk = no\n\n[run]"))
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert cli.main(["run", cfg]) == 0
    assert (tmp_path / "root" / "rel" / "out" / "run.csv").exists()
    assert not (tmp_path / "root" / "rel" / "out" / "final.vtk").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, CHANNEL + "\n[model]\nbeta = 1.5\n")
    assert cli.main(["run", cfg, "-o", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "model.beta" in err and "beta out of range [0,1]" in err
    assert not (tmp_path / "x").exists()
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, capsys):
    text = CHANNEL.replace("[run]", "[newton]\nmax_iter = 1\n\n[run]\nmode = continuation\nWe_values = 0.5")
    cfg = _write(tmp_path, text)
    assert cli.main(["run", cfg, "-o", str(tmp_path / "x")]) == cli.EXIT_SOLVER
    err = capsys.readouterr().err
    assert "stage 'continuation'" in err


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "run.csv"
    cli.write_atomic(target, "old\n")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(target, "new\n")
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["run.csv"]


def test_mesh_command(tmp_path):
    cfg = _write(tmp_path, CHANNEL)
    assert cli.main(["mesh", cfg, "-o", str(tmp_path / "m")]) == 0
    q = json.loads((tmp_path / "m" / "mesh_quality.json").read_text())
    assert q["min_angle_deg"] > 20
    assert sum(q["h_histogram"]["counts"]) == q["triangles"]
    load_mesh((tmp_path / "m" / "mesh.txt").read_text())


def test_file_geometry(tmp_path):
    (tmp_path / "chan.txt").write_text(save_mesh(gen_channel(0.5, 3.0, 1.0)))
    text = CHANNEL.replace("kind = channel", "kind = file:chan.txt")
    cfg = _write(tmp_path, text)
    assert cli.main(["run", cfg, "-o", str(tmp_path / "f")]) == 0
    ref = tmp_path / "ref"
    assert cli.main(["run", _write(tmp_path, CHANNEL, "c.ini"), "-o", str(ref)]) == 0
    # the fitted inlet reproduces the built-in channel inlet except for the inlet stress
    last = (tmp_path / "f" / "run.csv").read_text().splitlines()[-1].split(",")
    assert float(last[2]) == 0.3


def test_sweep_rows(tmp_path):
    text = CHANNEL.replace("[run]", "[run]\nmode = continuation\nWe_values = 0.1,0.2")
    cfg = _write(tmp_path, text)
    assert cli.main(["sweep", cfg, "--param", "model.beta", "--values", "0.5,0.7",
                     "-o", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("model.beta,We,newton_iters")
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["0.5", "0.1"], ["0.5", "0.2"],
                                                      ["0.7", "0.1"], ["0.7", "0.2"]]
    assert (tmp_path / "s" / "model.beta=0.7" / "manifest.ini").exists()
    assert cli.main(["sweep", cfg, "--param", "model.nope", "--values", "1"]) == cli.EXIT_CONFIG


def test_bench_rejects_unknown_name(capsys):
    assert cli.main(["bench", "pipe"]) == cli.EXIT_CONFIG
