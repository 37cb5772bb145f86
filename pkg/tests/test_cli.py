import math
import xml.etree.ElementTree as ET

import pytest

from response_forecast import cli, experiments, files
from response_forecast.correlators import CorrelatorSet
from response_forecast.errors import ConfigError

SVG_NS = "{http://www.w3.org/2000/svg}"

SMALL_OU = """\
[experiment]
name = ou
epsilon = 0.1
t_grid = 0, 0.5, 1.0

[sim]
dt = 0.01
t_max = 2.0
burn_in = 5.0
n_traj = 4
sample_every = 5
seed = 1
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_OU)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def svg_root(path):
    root = ET.parse(path).getroot()
    assert root.tag == SVG_NS + "svg" and root.get("version") == "1.1"
    return root


def labels(root):
    return {t.get("class") for t in root.iter(SVG_NS + "text")} & {"xlabel", "ylabel"}


# -- exit codes ----------------------------------------------------------------------

def test_usage_errors_exit_with_config_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["nope"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["spectral", "--seed", "x"])
    assert exc.value.code == 2


def test_missing_config_file(tmp_path, capsys):
    assert run("spectral", "--config", tmp_path / "absent.ini", "--out", tmp_path) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_unknown_key_is_named(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sim]\nstep = 3\n")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2
    assert "step" in capsys.readouterr().err


def test_bad_value_is_named(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[ou]\nr = fast\n")
    assert run("simulate", "--config", bad) == 2
    assert "r" in capsys.readouterr().err


def test_divergence_exits_with_numeric_code(tmp_path, capsys):
    cfg = tmp_path / "blowup.ini"
    cfg.write_text("[sim]\ndt = 2.0\nt_max = 4.0\nburn_in = 400\nn_traj = 1\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 3
    assert "numeric error" in capsys.readouterr().err


# -- subcommands --------------------------------------------------------------------

def test_spectral_bundled_example(tmp_path, capsys):
    assert run("spectral", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "lambda* = 0.2\n" in out
    assert f"lambda_pi = {(18 - math.sqrt(2)) / 10:.12g}" in out
    assert (tmp_path / "spectral.csv").read_text().startswith("lambda,coupling_norm,in_subsystem\n")


def test_spectral_identity_partition(tmp_path, capsys):
    text = experiments.bundled_chain_text().strip().splitlines()
    text[-1] = "0 1 2 3"
    path = tmp_path / "id.chain"
    path.write_text("\n".join(text) + "\n")
    assert run("spectral", path, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "lambda_pi = 0.2\n" in out


def test_simulate_correlate_respond_pipeline(tmp_path, small):
    out = tmp_path / "run"
    assert run("simulate", "--config", small, "--out", out) == 0
    trajs = sorted(out.glob("trajectory_*.csv"))
    assert len(trajs) == 4
    assert run("correlate", *trajs, "--config", small, "--out", out) == 0
    sets = sorted(out.glob("correlators_T*.csv"))
    assert [p.name for p in sets] == ["correlators_T0.5.csv", "correlators_T0.csv", "correlators_T1.csv"]
    assert run("respond", *sets, "--config", small, "--out", out) == 0
    est = files.read_response((out / "response.csv").read_text())
    assert [e.T for e in est] == [0.0, 0.5, 1.0]
    c0 = CorrelatorSet.from_csv((out / "correlators_T0.csv").read_text())
    assert est[0].order1 == pytest.approx(0.0, abs=1e-15)
    assert est[0].order0 == c0.mean_k


def test_commands_are_byte_reproducible(tmp_path, small):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("correlate", "--config", small, "--out", out, "--seed", 5) == 0
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_seed_flag_changes_output(tmp_path, small):
    run("simulate", "--config", small, "--out", tmp_path / "a", "--seed", 1, "--n-traj", 1)
    run("simulate", "--config", small, "--out", tmp_path / "b", "--seed", 2, "--n-traj", 1)
    name = "trajectory_00000.csv"
    assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()
    assert len(list((tmp_path / "a").iterdir())) == 1


def test_respond_missing_file(tmp_path):
    assert run("respond", tmp_path / "none.csv", "--out", tmp_path) == 2


def test_oracle_verify_one_dimensional(tmp_path, capsys):
    assert run("oracle-verify", "ou1d", "--no-fd", "--out", tmp_path) == 0
    text = (tmp_path / "oracle_ou1d.csv").read_text()
    assert text.splitlines()[0] == "T,d1_fd,d1_lemma,d2_fd,d2_exact,d2_approx,fV,fk,bound"
    assert "all oracle checks passed" in capsys.readouterr().out


def test_experiment_ou_small(tmp_path, small):
    out = tmp_path / "ou"
    assert run("experiment", "ou", "--config", small, "--out", out) == 0
    csv = (out / "ou_response.csv").read_text().splitlines()
    assert csv[0] == "T,order0,order1,order2,epsilon,prediction,bound,se1,se2"
    assert len(csv) == 4
    root = svg_root(out / "ou_response.svg")
    assert len(root.findall(f"{SVG_NS}polyline")) == 3
    assert len(root.findall(f"{SVG_NS}polygon")) == 1
    assert labels(root) == {"xlabel", "ylabel"}


def test_experiment_without_forcing_reproduces_equilibrium(tmp_path, small):
    cfg = experiments.load_config(small, epsilon=0.0, out=tmp_path)
    _, _, run_ = experiments.experiment_ou(cfg)
    assert (run_.paired == run_.prediction).all()
    assert (abs(run_.direct - run_.prediction) <= 4 * run_.direct_se + 1e-12).all()


def test_experiment_chain(tmp_path, capsys):
    assert run("experiment", "chain-example", "--out", tmp_path) == 0
    assert "decay bound holds: True" in capsys.readouterr().out
    root = svg_root(tmp_path / "chain_decay.svg")
    assert len(root.findall(f"{SVG_NS}polyline")) == 2
    assert labels(root) == {"xlabel", "ylabel"}


@pytest.mark.slow
def test_experiment_multiwell_small(tmp_path):
    cfg = tmp_path / "mw.ini"
    cfg.write_text(
        "[experiment]\nname = multiwell\nt_grid = 0, 1, 2\n"
        "[sim]\ndt = 0.01\nt_max = 2\nburn_in = 5\nn_traj = 4\nsample_every = 10\n"
        "[oracle]\nn = 48\n"
    )
    assert run("experiment", "multiwell", "--config", cfg, "--out", tmp_path) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"multiwell_response.csv", "multiwell_direct.csv", "multiwell_oracle.csv",
            "multiwell_projection.csv", "multiwell_response.svg", "multiwell_error.svg",
            "multiwell_potential.svg"} <= names
    heat = svg_root(tmp_path / "multiwell_potential.svg")
    assert len(heat.findall(f"{SVG_NS}g/{SVG_NS}rect")) == 96 * 96
    assert labels(heat) == {"xlabel", "ylabel"}
    err = svg_root(tmp_path / "multiwell_error.svg")
    assert len(err.findall(f"{SVG_NS}polyline")) == 2


# -- configuration ---------------------------------------------------------------------

def test_default_file_matches_defaults():
    assert experiments.parse_config(experiments.default_config_text()) == experiments.ExperimentConfig()


def test_defaults():
    cfg = experiments.ExperimentConfig()
    assert cfg.r == 0.1 and cfg.sigma == 0.5 and cfg.sigma_m == pytest.approx(1 / 3)
    assert cfg.sigma_1 == cfg.sigma_2 == 0.1
    assert cfg.sim.n_traj == 10_000 and cfg.sim.dt == 1e-3
    assert cfg.T_grid[0] == 0 and cfg.T_grid[-1] == 10


@pytest.mark.parametrize("text", [
    "[nosuch]\n", "[ou]\nr = 9\n", "[experiment]\nname = other\n", "[sim]\ndt = -1\n",
    "[multiwell]\nprojection = z\n", "[experiment]\nt_grid = a, b\n", "not ini",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        experiments.parse_config(text)


def test_overrides():
    cfg = experiments.load_config(None, seed=4, n_traj=7, epsilon=0.3, out="x", experiment="multiwell")
    assert (cfg.sim.seed, cfg.sim.n_traj, cfg.epsilon, cfg.output_dir, cfg.experiment) == (
        4, 7, 0.3, "x", "multiwell")


def test_horizons_must_lie_on_the_sampling_grid(tmp_path, small):
    text = small.read_text().replace("t_grid = 0, 0.5, 1.0", "t_grid = 0.33")
    small.write_text(text)
    assert run("experiment", "ou", "--config", small, "--out", tmp_path) == 2
