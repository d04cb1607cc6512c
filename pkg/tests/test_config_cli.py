import math
import subprocess
import sys

import numpy as np
import pytest

from qfeedback import __version__
from qfeedback.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_OK, EXIT_TRUNCATION, main
from qfeedback.config import parse_number, parse_text, validate
from qfeedback.errors import ConfigError

STEADY = """
model.scheme = simple
sys.lam = 0.5
sys.chi = pi/2
sys.n_max = 12
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    return [ln for ln in lines if ln.startswith("#")], body[0].split(","), [r.split(",") for r in body[1:]]


def test_parse_number():
    assert parse_number("pi/2") == pytest.approx(math.pi / 2)
    assert parse_number("2*sqrt(2)") == pytest.approx(2 * math.sqrt(2))
    assert parse_number("-1e-3") == -1e-3
    for bad in ("__import__('os')", "x + 1", "1/0", "sqrt(1, 2)"):
        with pytest.raises(ValueError):
            parse_number(bad)


def test_parse_text_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_text("sys.lamda = 1")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("sys.lam = 1\nsys.lam = 2")
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("# c\nsys.n_max = 2.5")
    with pytest.raises(ConfigError):
        parse_text("just words")
    vals = parse_text("run.gammas = 1, 2, 5  # comment\nrun.schemes = simple, none")
    assert vals == {"run.gammas": [1.0, 2.0, 5.0], "run.schemes": ["simple", "none"]}


@pytest.mark.parametrize("extra,kind,msg", [
    ("anc.eps = 3", "steady", "anc.eps"),
    ("", "sweep", "compound"),
    ("model.scheme = eo_mode_adiabatic\nanc.gamma = 1", "steady", "anc.eps"),
    ("model.scheme = ao_tla_compound", "steady", "anc.gamma"),
    ("model.scheme = jc_compound\nanc.gamma = 1", "steady", "detuning"),
    ("model.scheme = kerr", "traj", "trajectory"),
    ("model.scheme = warp", "steady", "unknown scheme"),
])
def test_validate_rejects(extra, kind, msg):
    text = STEADY
    if "model.scheme" in extra:
        text = text.replace("model.scheme = simple\n", "")
    with pytest.raises(ConfigError, match=msg):
        validate(parse_text(text + extra), kind)


def test_defaults_filled():
    cfg = validate(parse_text(STEADY), "steady")
    assert cfg["run.seed"] == 12345
    assert cfg["run.workers"] == 1
    assert "run.workers = 1" not in cfg.lines()
    assert "sys.chi = 1.5707963267948966" in cfg.lines()


def test_steady_outputs_and_header(tmp_path):
    cfg = write(tmp_path, STEADY)
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    head, cols, rows = read_csv(tmp_path / "o" / "steady_rho.csv")
    assert head[0] == f"# qfeedback {__version__}"
    assert "# run.kind = steady" in head
    assert cols[:4] == ["re_0", "im_0", "re_1", "im_1"]
    m = np.array([[float(x) for x in r] for r in rows])
    rho = m[:, 0::2] + 1j * m[:, 1::2]
    assert rho.shape == (13, 13)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    _, cols, rows = read_csv(tmp_path / "o" / "steady_summary.csv")
    summary = dict(rows)
    assert cols == ["quantity", "value"]
    assert float(summary["parity_violation"]) < 1e-10
    assert summary["method"] == "direct-lu"


def test_identical_config_gives_identical_bytes(tmp_path):
    cfg = write(tmp_path, STEADY)
    for out in ("a", "b"):
        assert main(["wigner", "--config", str(cfg), "--out", str(tmp_path / out)]) == EXIT_OK
    for name in ("wigner.csv", "wigner_axes.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trajectory_output_independent_of_workers(tmp_path):
    text = STEADY.replace("n_max = 12", "n_max = 8") + "run.T = 1.0\nrun.n_traj = 16\nrun.samples = 0.5\n"
    cfg = write(tmp_path, text)
    assert main(["traj", "--config", str(cfg), "--out", str(tmp_path / "w1"), "--seed", "7"]) == EXIT_OK
    assert main(["traj", "--config", str(cfg), "--out", str(tmp_path / "w2"), "--seed", "7",
                 "--workers", "2"]) == EXIT_OK
    for name in ("traj_observables.csv", "traj_rho.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()
    head, cols, rows = read_csv(tmp_path / "w1" / "traj_observables.csv")
    assert "# run.seed = 7" in head
    assert [float(r[0]) for r in rows] == [0.5, 1.0]
    assert cols == ["t", "n", "n_se", "X1sq", "X1sq_se", "X2sq", "X2sq_se"]


def test_wigner_axes_file(tmp_path):
    cfg = write(tmp_path, STEADY + "wigner.limit = 5\nwigner.points = 11\n")
    assert main(["wigner", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "wigner_axes.csv")
    assert cols == ["axis", "index", "value"]
    assert len(rows) == 22 and rows[0] == ["X1", "0", "-5.0"]
    grid = [ln for ln in (tmp_path / "wigner.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(grid) == 11 and all(len(r.split(",")) == 11 for r in grid)


def test_compare(tmp_path):
    text = STEADY.replace("model.scheme = simple\n", "") + "run.schemes = simple, eo_tla_adiabatic, ao_adiabatic\n"
    cfg = write(tmp_path, text)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "compare.csv")
    assert cols == ["scheme_a", "scheme_b", "bures", "trace_term"]
    assert len(rows) == 3
    assert all(0 <= float(r[2]) <= math.sqrt(2) for r in rows)


def test_sweep_columns(tmp_path):
    text = STEADY.replace("simple", "eo_tla_compound").replace("n_max = 12", "n_max = 8") + "run.gammas = 2, 20\n"
    cfg = write(tmp_path, text)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    _, cols, rows = read_csv(tmp_path / "sweep.csv")
    assert cols[:3] == ["gamma", "bures", "bures_se"]
    assert float(rows[1][1]) < float(rows[0][1])


def test_exit_code_config(tmp_path, capsys):
    cfg = write(tmp_path, STEADY + "anc.eps = 2\n")
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["steady", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["steady", "--config", str(write(tmp_path, STEADY, "ok.cfg")), "--seed", "-1"]) == EXIT_CONFIG


def test_exit_code_convergence(tmp_path):
    cfg = write(tmp_path, STEADY + "run.tol = 1e-40\n")
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONVERGENCE


def test_exit_code_truncation(tmp_path):
    text = STEADY.replace("simple", "none").replace("lam = 0.5", "lam = 1.2").replace("n_max = 12", "n_max = 20")
    cfg = write(tmp_path, text)
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_TRUNCATION


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, STEADY)
    proc = subprocess.run([sys.executable, "-m", "qfeedback.cli", "steady", "--config", str(cfg),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("steady_summary.csv")
