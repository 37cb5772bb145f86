"""Configuration and end-to-end experiments: the two-time-scale OU system,
the four-well landscape and the four-state chain example."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import chain, files, oracle, svg
from .correlators import Observable, correlator_bundle
from .dynamics import (
    CoarseMap,
    Perturbation,
    Potential,
    SimConfig,
    forced_response,
    simulate_ensemble,
)
from .errors import ConfigError
from .response import ou_bound, ou_constant, ou_gap, predict

EXPERIMENTS = ("ou", "multiwell", "chain-example")
TESTBEDS = ("ou1d", "ou2d", "multiwell")


@dataclass(frozen=True)
class ExperimentConfig:
    """Defaults reproduce the published settings; ensemble sizes and the
    horizon grid are documented choices."""

    experiment: str = "ou"
    r: float = 0.1
    sigma: float = 0.5
    sigma_m: float = 1 / 3
    sigma_1: float = 0.1
    sigma_2: float = 0.1
    projection: int = 0
    epsilon: float = 0.1
    T_grid: tuple = tuple(0.5 * i for i in range(21))
    sim: SimConfig = field(default_factory=lambda: SimConfig(
        dt=1e-3, t_max=20.0, burn_in=100.0, n_traj=10_000, sample_every=50))
    output_dir: str = "out"
    grid_n: tuple | None = None
    grid_box: tuple | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment.name must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.experiment == "ou" and not 0 < self.r < 4:
            raise ConfigError(f"ou.r must lie in (0, 4), got {self.r}")
        if self.projection not in (0, 1):
            raise ConfigError("multiwell.projection must be x or y")
        if not self.T_grid or min(self.T_grid) < 0:
            raise ConfigError("experiment.T_grid must be a non-empty list of non-negative horizons")
        for name in ("sigma", "sigma_m", "sigma_1", "sigma_2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"multiwell.{name} must be positive")



def _floats(text, key):
    try:
        return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers") from exc


def _number(sec, key, conv):
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key} = {sec[key]!r} is not a valid {conv.__name__}") from exc


_LAYOUT = {
    "experiment": {"name", "epsilon", "t_grid", "output_dir"},
    "ou": {"r"},
    "multiwell": {"sigma", "sigma_m", "sigma_1", "sigma_2", "projection"},
    "sim": {"dt", "t_max", "burn_in", "seed", "n_traj", "sample_every", "noise_scale"},
    "oracle": {"n", "box"},
}


def parse_config(text="", base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ini-style text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    cfg = base or ExperimentConfig()
    upd, sim = {}, {}
    for name in cp.sections():
        if name not in _LAYOUT:
            raise ConfigError(f"unknown config section [{name}]")
        sec = cp[name]
        for key in sec:
            if key not in _LAYOUT[name]:
                raise ConfigError(f"unknown key [{name}] {key}")
    if cp.has_section("experiment"):
        s = cp["experiment"]
        if "name" in s:
            upd["experiment"] = s["name"].strip()
        if "epsilon" in s:
            upd["epsilon"] = _number(s, "epsilon", float)
        if "t_grid" in s:
            upd["T_grid"] = _floats(s["t_grid"], "[experiment] t_grid")
        if "output_dir" in s:
            upd["output_dir"] = s["output_dir"].strip()
    if cp.has_section("ou") and "r" in cp["ou"]:
        upd["r"] = _number(cp["ou"], "r", float)
    if cp.has_section("multiwell"):
        s = cp["multiwell"]
        for key in ("sigma", "sigma_m", "sigma_1", "sigma_2"):
            if key in s:
                upd[key] = _number(s, key, float)
        if "projection" in s:
            axis = s["projection"].strip().lower()
            if axis not in ("x", "y"):
                raise ConfigError("[multiwell] projection must be x or y")
            upd["projection"] = "xy".index(axis)
    if cp.has_section("sim"):
        s = cp["sim"]
        for key in s:
            conv = int if key in ("seed", "n_traj", "sample_every") else float
            sim[key] = _number(s, key, conv)
    if cp.has_section("oracle"):
        s = cp["oracle"]
        if "n" in s:
            upd["grid_n"] = tuple(int(v) for v in _floats(s["n"], "[oracle] n"))
        if "box" in s:
            upd["grid_box"] = _floats(s["box"], "[oracle] box")
    if sim:
        upd["sim"] = make_sim(cfg.sim, **sim)
    try:
        return replace(cfg, **upd)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def make_sim(base: SimConfig, **kw):
    try:
        return replace(base, **kw)
    except ConfigError as exc:
        raise ConfigError(f"[sim] {exc}") from exc


def load_config(path=None, seed=None, n_traj=None, epsilon=None, out=None,
                experiment=None) -> ExperimentConfig:
    """Read ``path`` (if any) and apply command-line overrides."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text)
    upd = {}
    if experiment is not None:
        upd["experiment"] = experiment
    if epsilon is not None:
        upd["epsilon"] = epsilon
    if out is not None:
        upd["output_dir"] = str(out)
    sim = {}
    if seed is not None:
        sim["seed"] = seed
    if n_traj is not None:
        sim["n_traj"] = n_traj
    if sim:
        upd["sim"] = make_sim(cfg.sim, **sim)
    return replace(cfg, **upd) if upd else cfg


def default_config_text():
    return resources.files(__package__).joinpath("data/default.ini").read_text()


# ---------------------------------------------------------------------------
# systems

@dataclass(frozen=True)
class System:
    name: str
    potential: Potential
    pert: Perturbation
    cmap: CoarseMap
    kappa: Observable
    v: Observable


def ou_matrix(r):
    return np.array([[2.0, -r], [-r, 2.0 * r]])


def ou_system(r=0.1) -> System:
    """Two-time-scale OU, observed through x1 with v(y) = -cos(y - pi/4)."""
    pert = Perturbation.cosine()
    return System("ou", Potential.quadratic(ou_matrix(r)), pert, CoarseMap(2, (0,)),
                  Observable.coordinate(1, 0, "k"), Observable.from_perturbation(pert))


def ou1d_system() -> System:
    pert = Perturbation.cosine()
    return System("ou1d", Potential.quadratic([[1.0]]), pert, CoarseMap.identity(1),
                  Observable.coordinate(1, 0, "k"), Observable.from_perturbation(pert))


def multiwell_system(cfg: ExperimentConfig | None = None, projection=None) -> System:
    """Four-well landscape observed through x (or y), v(y) = exp(-(y - 1)^2 / 4)."""
    cfg = cfg or ExperimentConfig(experiment="multiwell")
    axis = cfg.projection if projection is None else projection
    pert = Perturbation.gaussian()
    pot = Potential.multiwell(cfg.sigma, cfg.sigma_m, cfg.sigma_1, cfg.sigma_2)
    return System("multiwell", pot, pert, CoarseMap(2, (axis,)),
                  Observable.coordinate(1, 0, "k"), Observable.from_perturbation(pert))


GRIDS = {
    "ou1d": ((-8.0,), (8.0,), (512,)),
    "ou2d": ((-5.0, -15.0), (5.0, 15.0), (48, 96)),
    "multiwell": ((-10.0, -10.0), (10.0, 10.0), (192, 192)),
}


def grid_spec(testbed, n=None, box=None):
    lo, hi, dn = GRIDS[testbed]
    if box is not None:
        if len(box) == 1:
            box = (-box[0], box[0])
        lo = tuple(box[0] for _ in lo)
        hi = tuple(box[1] for _ in hi)
    if n is not None:
        n = tuple(n) * (len(dn) if len(n) == 1 else 1)
    return oracle.GridSpec(lo, hi, n or dn)


def testbed(name, cfg: ExperimentConfig | None = None, projection=None):
    """(system, grid operator) for an oracle testbed."""
    if name not in TESTBEDS:
        raise ConfigError(f"testbed must be one of {TESTBEDS}")
    cfg = cfg or ExperimentConfig()
    if name == "ou1d":
        sys_ = ou1d_system()
    elif name == "ou2d":
        sys_ = ou_system(cfg.r)
    else:
        sys_ = multiwell_system(cfg, projection)
    spec = grid_spec(name, cfg.grid_n, cfg.grid_box)
    return sys_, oracle.discretize(sys_.potential, sys_.pert, sys_.cmap, spec)


VERIFY_TIMES = {
    "ou1d": (0.25, 0.5, 1.0, 2.0, 4.0),
    "ou2d": (0.5, 1.0, 2.0, 5.0, 10.0, 20.0),
    "multiwell": (0.5, 1.0, 2.0, 5.0, 10.0, 20.0),
}


def run_verify(name, cfg: ExperimentConfig | None = None, fd=True):
    sys_, op = testbed(name, cfg)
    dyson_nodes = 129 if op.dense else 33
    return oracle.verify(op, sys_.kappa, VERIFY_TIMES[name], fd=fd, dyson_nodes=dyson_nodes)


# ---------------------------------------------------------------------------
# experiments

@dataclass
class ResponseRun:
    """Estimator output next to the direct forced simulation on a horizon grid."""

    estimates: list
    times: np.ndarray
    direct: np.ndarray
    direct_se: np.ndarray
    paired: np.ndarray
    paired_se: np.ndarray
    first_order: np.ndarray
    prediction: np.ndarray
    correlators: list = field(default_factory=list)

    @property
    def deviation_second(self):
        return float(np.mean(np.abs(self.prediction - self.paired)))

    @property
    def deviation_first(self):
        return float(np.mean(np.abs(self.first_order - self.paired)))

    def direct_csv(self):
        return files.table_csv(
            "T,direct,direct_se,paired,paired_se,first_order,prediction",
            [self.times, self.direct, self.direct_se, self.paired, self.paired_se,
             self.first_order, self.prediction],
        )


def response_run(sys_: System, cfg: ExperimentConfig, bound_fn=None, workers=None) -> ResponseRun:
    """Equilibrium ensemble -> correlators -> forecast, against a forced ensemble
    run with common noise."""
    sim = cfg.sim
    times = np.asarray(cfg.T_grid, float)
    eq = simulate_ensemble(sys_.potential, sys_.pert, sys_.cmap, sim, epsilon=0.0, workers=workers)
    estimates, sets = [], []
    for T in times:
        c = correlator_bundle(eq, sys_.kappa, sys_.v, T)
        sets.append(c)
        est = predict(c, cfg.epsilon)
        if bound_fn is not None:
            est = replace(est, bound=bound_fn(T))
        estimates.append(est)
    horizon = replace(sim, t_max=float(times.max()), seed=sim.seed + 1)
    fr = forced_response(sys_.potential, sys_.pert, sys_.cmap, horizon, sys_.kappa,
                         cfg.epsilon, workers=workers)
    idx = np.array([int(round(T / horizon.sample_dt)) for T in times])
    if np.any(np.abs(idx * horizon.sample_dt - times) > 1e-9):
        raise ConfigError("experiment.T_grid must lie on the sampling grid dt * sample_every")
    order0 = np.array([e.order0 for e in estimates])
    return ResponseRun(
        estimates, times,
        fr.mean[idx], fr.se[idx],
        order0 + fr.diff[idx], fr.diff_se[idx],
        np.array([e.first_order_prediction for e in estimates]),
        np.array([e.prediction for e in estimates]),
        sets,
    )


def _response_svg(run: ResponseRun, title, ylabel, band=None):
    series = [
        svg.Series("second order", run.times, run.prediction),
        svg.Series("first order", run.times, run.first_order, dashed=True),
        svg.Series("forced simulation", run.times, run.paired),
    ]
    bands = []
    if band is not None:
        bands.append(svg.Band("error bound", run.times, run.prediction - band, run.prediction + band))
    return svg.line_plot(series, bands, xlabel="T", ylabel=ylabel, title=title)


def _write(out, name, text, written):
    path = Path(out) / name
    files.write_text(path, text)
    written.append(path)


def experiment_ou(cfg: ExperimentConfig, workers=None):
    """Returns (written paths, summary lines)."""
    sys_ = ou_system(cfg.r)
    lam = ou_gap(cfg.r)
    const = ou_constant(cfg.r)
    run = response_run(sys_, cfg, lambda T: ou_bound(cfg.r, T, const), workers)
    written = []
    out = cfg.output_dir
    _write(out, "ou_response.csv", files.response_csv(run.estimates), written)
    _write(out, "ou_direct.csv", run.direct_csv(), written)
    band = 0.5 * cfg.epsilon ** 2 * np.array([e.bound for e in run.estimates])
    _write(out, "ou_response.svg",
           _response_svg(run, f"OU, r = {cfg.r:g}, eps = {cfg.epsilon:g}", "E[x1(T)]", band), written)
    summary = [
        f"lambda_1 = {lam:.6f}",
        f"ou_constant = {const:.6f}",
        f"mean |second order - forced| = {run.deviation_second:.6g}",
        f"mean |first order - forced|  = {run.deviation_first:.6g}",
    ]
    return written, summary, run


def potential_grid(potential, box=3.5, n=96):
    ax = np.linspace(-box, box, n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    U = potential.energy(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(n, n)
    return U, (-box, box, -box, box)


def experiment_multiwell(cfg: ExperimentConfig, workers=None):
    sys_ = multiwell_system(cfg)
    _, op = testbed("multiwell", cfg, cfg.projection)
    lam, _ = oracle.subsystem_gap(op)
    norms = oracle.quadrature_norms(op, sys_.kappa)
    grid_T = [T for T in cfg.T_grid if T > 0]
    rows = oracle.sweep(op, sys_.kappa, grid_T, lam, norms)
    bounds = dict(zip(grid_T, (r.bound for r in rows)))
    run = response_run(sys_, cfg, lambda T: bounds.get(T, 0.0), workers)
    other = 1 - cfg.projection
    _, op_other = testbed("multiwell", cfg, other)
    lam_other, _ = oracle.subsystem_gap(op_other)
    rows_other = oracle.sweep(op_other, sys_.kappa, grid_T, lam_other)

    written = []
    out = cfg.output_dir
    axis = "xy"[cfg.projection]
    oracle_text = oracle.ORACLE_HEADER + "\n" + "".join(
        ",".join(files.fmt(v) for v in r.values()) + "\n" for r in rows)
    _write(out, "multiwell_response.csv", files.response_csv(run.estimates), written)
    _write(out, "multiwell_direct.csv", run.direct_csv(), written)
    _write(out, "multiwell_oracle.csv", oracle_text, written)
    err = np.array([abs(r.d2_exact - r.d2_approx) for r in rows])
    err_other = np.array([abs(r.d2_exact - r.d2_approx) for r in rows_other])
    _write(out, "multiwell_projection.csv",
           files.table_csv(f"T,err_{axis},err_{'xy'[other]}", [grid_T, err, err_other]), written)
    band = 0.5 * cfg.epsilon ** 2 * np.array([e.bound for e in run.estimates])
    _write(out, "multiwell_response.svg",
           _response_svg(run, f"multiwell, pi = {axis}, eps = {cfg.epsilon:g}", f"E[{axis}(T)]", band),
           written)
    _write(out, "multiwell_error.svg", svg.line_plot(
        [svg.Series(f"|exact - approx|, pi = {axis}", np.array(grid_T), err),
         svg.Series(f"|exact - approx|, pi = {'xy'[other]}", np.array(grid_T), err_other)],
        xlabel="T", ylabel="second-order error", title="second-order approximation error"), written)
    U, extent = potential_grid(sys_.potential)
    _write(out, "multiwell_potential.svg",
           svg.heat_map(U, extent, "x", "y", "potential U", vmax=float(np.quantile(U, 0.98))), written)
    summary = [
        f"lambda_pi({axis}) = {lam:.6f}",
        f"lambda_pi({'xy'[other]}) = {lam_other:.6f}",
        f"peak |exact - approx| ({axis}) = {err.max():.6g} at T = {grid_T[int(err.argmax())]:g}",
        f"mean |second order - forced| = {run.deviation_second:.6g}",
        f"mean |first order - forced|  = {run.deviation_first:.6g}",
    ]
    return written, summary, run


def bundled_chain_text():
    return resources.files(__package__).joinpath("data/example1.chain").read_text()


def experiment_chain(cfg: ExperimentConfig):
    gen, part = chain.read_chain(bundled_chain_text())
    rep = chain.analyse(gen, part)
    times = np.array([0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0])
    # a sigma(pi)-measurable mean-zero observable: (u, v, v, u) with u = -v
    f = np.array([1.0, -1.0, -1.0, 1.0])
    dec = chain.verify_decay(gen, part, f, times)
    written = []
    out = cfg.output_dir
    _write(out, "chain_spectral.csv", rep.to_csv(), written)
    _write(out, "chain_decay.csv",
           files.table_csv("t,ratio,bound", [dec.times, dec.ratios, dec.bounds]), written)
    _write(out, "chain_decay.svg", svg.line_plot(
        [svg.Series("<(P_t f)^2> / <f^2>", dec.times, dec.ratios),
         svg.Series("exp(-2 lambda_pi t)", dec.times, dec.bounds, dashed=True)],
        xlabel="t", ylabel="ratio", title="decay of a subsystem observable"), written)
    summary = [
        f"lambda* = {rep.gap:.12g}",
        f"lambda_pi = {rep.subsystem_gap:.12g}",
        f"decay bound holds: {dec.holds}",
    ]
    return written, summary, rep
