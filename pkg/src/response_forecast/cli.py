"""Command-line entry point ``response-forecast``.

Exit codes: 0 success, 2 configuration error, 3 numeric or tolerance failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import chain, experiments, files
from .correlators import CorrelatorSet, correlator_bundle
from .dynamics import simulate_ensemble
from .errors import ConfigError, NumericDomainError, ResponseForecastError
from .response import predict

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="ini-style configuration file")
    p.add_argument("--seed", type=int, help="base seed (replicate i uses seed ^ i)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--n-traj", type=int, dest="n_traj", help="ensemble size")
    p.add_argument("--epsilon", type=float, help="forcing strength")


def build_parser():
    ap = _Parser(prog="response-forecast",
                 description="Second-order response forecasts from equilibrium subsystem data.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write trajectory CSVs of the configured system")
    _common(p)
    p = sub.add_parser("correlate", help="estimate the nine correlators at every horizon")
    _common(p)
    p.add_argument("trajectories", nargs="*", help="trajectory CSVs (default: simulate)")
    p = sub.add_parser("respond", help="assemble forecasts from correlator CSVs")
    _common(p)
    p.add_argument("correlators", nargs="+", help="CorrelatorSet CSVs")
    p = sub.add_parser("spectral", help="spectrum and subsystem gap of a chain file")
    _common(p)
    p.add_argument("chain_file", nargs="?", help="chain file (default: bundled example)")
    p.add_argument("--tol", type=float, default=1e-9, help="coupling tolerance")
    p = sub.add_parser("oracle-verify", help="grid-oracle identity checks")
    _common(p)
    p.add_argument("testbed", choices=experiments.TESTBEDS)
    p.add_argument("--no-fd", action="store_true", help="skip finite-difference and Dyson checks")
    p = sub.add_parser("experiment", help="run a full experiment")
    _common(p)
    p.add_argument("name", choices=experiments.EXPERIMENTS)
    return ap


def _config(args, experiment=None):
    return experiments.load_config(args.config, args.seed, args.n_traj, args.epsilon,
                                   args.out, experiment)


def _system(cfg):
    if cfg.experiment == "multiwell":
        return experiments.multiwell_system(cfg)
    return experiments.ou_system(cfg.r)


def cmd_simulate(args):
    cfg = _config(args)
    sys_ = _system(cfg)
    ens = simulate_ensemble(sys_.potential, sys_.pert, sys_.cmap, cfg.sim, epsilon=cfg.epsilon)
    width = max(5, len(str(len(ens) - 1)))
    for i, traj in enumerate(ens):
        files.write_trajectory(traj, Path(cfg.output_dir) / f"trajectory_{i:0{width}d}.csv")
    print(f"wrote {len(ens)} trajectories to {cfg.output_dir}")


def cmd_correlate(args):
    cfg = _config(args)
    sys_ = _system(cfg)
    if args.trajectories:
        data = [files.read_trajectory(p) for p in args.trajectories]
    else:
        data = simulate_ensemble(sys_.potential, sys_.pert, sys_.cmap, cfg.sim, epsilon=0.0)
    for T in cfg.T_grid:
        c = correlator_bundle(data, sys_.kappa, sys_.v, T)
        files.write_text(Path(cfg.output_dir) / f"correlators_T{T:g}.csv", c.to_csv())
    print(f"wrote {len(cfg.T_grid)} correlator sets to {cfg.output_dir}")


def cmd_respond(args):
    cfg = _config(args)
    sets = []
    for path in args.correlators:
        try:
            sets.append(CorrelatorSet.from_csv(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    sets.sort(key=lambda c: c.T)
    ests = [predict(c, cfg.epsilon) for c in sets]
    files.write_text(Path(cfg.output_dir) / "response.csv", files.response_csv(ests))
    for e in ests:
        print(f"T = {e.T:g}: prediction {e.prediction:.6g} (first order {e.first_order_prediction:.6g})")


def cmd_spectral(args):
    cfg = _config(args)
    if args.chain_file:
        try:
            text = Path(args.chain_file).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.chain_file}: {exc}") from exc
    else:
        text = experiments.bundled_chain_text()
    gen, part = chain.read_chain(text)
    rep = chain.analyse(gen, part, args.tol)
    files.write_text(Path(cfg.output_dir) / "spectral.csv", rep.to_csv())
    print(f"lambda* = {rep.gap:.12g}")
    print(f"lambda_pi = {rep.subsystem_gap:.12g}")
    print("lambda, coupling_norm, in_subsystem")
    for lam, c, flag in rep.rows():
        print(f"{lam:.12g}, {c:.3g}, {int(flag)}")


def cmd_oracle_verify(args):
    cfg = _config(args)
    report = experiments.run_verify(args.testbed, cfg, fd=not args.no_fd)
    files.write_text(Path(cfg.output_dir) / f"oracle_{args.testbed}.csv", report.to_csv())
    print(f"lambda_pi = {report.lambda_pi:.8g}; dyson residual = {report.dyson:.3g}")
    for msg in report.failures:
        print(f"FAIL {msg}", file=sys.stderr)
    if not report.ok:
        return EXIT_NUMERIC
    print("all oracle checks passed")
    return EXIT_OK


def cmd_experiment(args):
    cfg = _config(args, experiment=args.name)
    if args.name == "ou":
        written, summary, _ = experiments.experiment_ou(cfg)
    elif args.name == "multiwell":
        written, summary, _ = experiments.experiment_multiwell(cfg)
    else:
        written, summary, _ = experiments.experiment_chain(cfg)
    for line in summary:
        print(line)
    for path in written:
        print(f"wrote {path}")


COMMANDS = {
    "simulate": cmd_simulate,
    "correlate": cmd_correlate,
    "respond": cmd_respond,
    "spectral": cmd_spectral,
    "oracle-verify": cmd_oracle_verify,
    "experiment": cmd_experiment,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except NumericDomainError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ResponseForecastError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
