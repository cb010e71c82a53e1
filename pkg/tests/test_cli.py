import os
import subprocess
import sys

import numpy as np
import pytest

from msgn.cli import ConfigError, main, parse_config
from msgn.models import TELEGRAPH
from msgn.paths import read_path_csv

BLOWUP = "species continuous: X\nreaction r class=C h=[+1] rate = X*X\n"


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tel.net").write_text(TELEGRAPH)
    return tmp_path


def write_cfg(d, text, name="run.cfg"):
    p = d / name
    p.write_text(text)
    return str(p)


BASE = "network = tel.net\nz0 = 1.0 | 1\nT = 2\nN = 64\nseed = 3\nworkers = 1\n"


def test_validate_prints_summary(workdir, capsys):
    cfg = write_cfg(workdir, BASE)
    assert main(["validate", "--config", cfg, "--out", str(workdir / "v")]) == 0
    out = capsys.readouterr().out
    assert "n = 1" in out and "d = 1" in out
    assert (workdir / "v" / "summary.txt").read_text().startswith("# msgn ")


@pytest.mark.parametrize("text,code", [
    (BASE.replace("T = 2", "T = -1"), 2),
    (BASE + "colour = blue\n", 2),
    (BASE + "seed = 4\n", 2),
    (BASE.replace("N = 64", "N = 64, 16"), 2),
    (BASE.replace("z0 = 1.0 | 1", "z0 = 1.0, 2.0 | 1"), 2),
    (BASE.replace("tel.net", "broken.net"), 3),
    (BASE.replace("tel.net", "missing.net"), 5),
])
def test_exit_codes(workdir, text, code):
    (workdir / "broken.net").write_text("species continuous: P\nreaction r class=C h=[+1] rate = Q\n")
    cfg = write_cfg(workdir, text)
    assert main(["simulate", "--config", cfg, "--out", str(workdir / "o")]) == code


def test_missing_config_file(workdir):
    assert main(["validate", "--config", str(workdir / "nope.cfg")]) == 5


def test_simulation_failure_exit_code(workdir):
    (workdir / "blow.net").write_text(BLOWUP)
    cfg = write_cfg(workdir, "network = blow.net\nz0 = 1.0 |\nT = 2\nN = 8\nworkers = 1\n")
    assert main(["pdmp", "--config", cfg, "--out", str(workdir / "o")]) == 4


def test_command_specific_checks(workdir):
    cfg = write_cfg(workdir, BASE)
    assert main(["converge", "--config", cfg, "--out", str(workdir / "o")]) == 2
    two = write_cfg(workdir, BASE.replace("N = 64", "N = 16, 64"), "two.cfg")
    assert main(["simulate", "--config", two, "--out", str(workdir / "o")]) == 2


def test_simulate_deterministic(workdir):
    cfg = write_cfg(workdir, BASE + "decomposition = true\n")
    outs = []
    for tag in ("a", "b"):
        out = workdir / tag
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        outs.append(out)
    for name in ("path.csv", "events.csv", "summary.txt", "decomposition.csv"):
        a = [l for l in (outs[0] / name).read_text().splitlines() if not l.startswith("# out =")]
        b = [l for l in (outs[1] / name).read_text().splitlines() if not l.startswith("# out =")]
        assert a == b, name
    text = (outs[0] / "path.csv").read_text()
    assert text.startswith("# msgn 0.1.0 simulate\n") and "# seed = 3\n" in text
    header, cols = read_path_csv(outs[0] / "path.csv")
    assert header[0] == "t" and len(cols["t"]) == 257
    summary = (outs[0] / "summary.txt").read_text()
    assert "max identity residual" in summary


def test_seed_override_changes_path(workdir):
    cfg = write_cfg(workdir, BASE)
    main(["simulate", "--config", cfg, "--out", str(workdir / "a")])
    main(["simulate", "--config", cfg, "--out", str(workdir / "b"), "--seed", "4"])
    assert (workdir / "a" / "events.csv").read_text() != (workdir / "b" / "events.csv").read_text()
    assert "# seed = 4" in (workdir / "b" / "events.csv").read_text()


def test_converge_report(workdir):
    cfg = write_cfg(workdir, BASE.replace("N = 64", "N = 16, 64, 256, 1024") + "M = 4\n")
    assert main(["converge", "--config", cfg, "--out", str(workdir / "c")]) == 0
    lines = [l for l in (workdir / "c" / "report.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 5
    slope = float(lines[1].split(",")[18])
    assert np.isfinite(slope)
    assert "fit error: slope" in (workdir / "c" / "summary.txt").read_text()
    assert (workdir / "c" / "plot.script").exists()


def test_clt_outputs(workdir):
    cfg = write_cfg(workdir, BASE + "M = 20\nM_sde = 20\nsde_steps = 16\n")
    assert main(["clt", "--config", cfg, "--out", str(workdir / "k")]) == 0
    text = (workdir / "k" / "report.csv").read_text()
    assert "species,N,T,M_N,M_sde" in text and "\nP," in text


def test_parse_config_values(tmp_path):
    cfg = parse_config(BASE + "tol = 1e-9\ndecomposition = yes\n# comment\n\n", str(tmp_path))
    assert cfg.N == (64.0,) and cfg.T == 2.0 and cfg.tol == 1e-9 and cfg.decomposition
    assert cfg.network == os.path.join(str(tmp_path), "tel.net")
    assert list(cfg.z0.x) == [1.0] and list(cfg.z0.y) == [1]
    with pytest.raises(ConfigError):
        parse_config("T = 2\nT = 3\n")
    with pytest.raises(ConfigError):
        parse_config("no equals sign\n")


def test_console_entry_point(workdir):
    cfg = write_cfg(workdir, BASE)
    r = subprocess.run([sys.executable, "-m", "msgn.cli", "validate", "--config", cfg, "--out", str(workdir / "v")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "rate_bound" in r.stdout
