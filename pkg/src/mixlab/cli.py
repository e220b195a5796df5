"""Command-line entry point: ``mixlab <subcommand> ...``.

Exit codes: 0 success (or check passed), 1 check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import inspect
import json
import logging
import sys

from . import io
from .checks import CHECKS
from .errors import ContractViolation, MixlabError
from .estimators import em_fit, npmle_fit
from .experiments import ExperimentConfig, run_consistency, run_degeneracy_comparison, summarize
from .metrics import kw_distance
from .model import ComponentFamily, MixingDistribution, as_atom, sample_mixture

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SCHEMA_HELP = """\
configuration schemas (all JSON):

  family          {"kind": "poisson" | "normal_equal" | "normal_free", "sigma2": number}
                  sigma2 (normal_equal only, required) is the shared variance; fits in
                  equal_variance mode re-estimate it and treat the value as a placeholder
  mixing          {"atoms": [{"mean": number, "scale": number}, ...],
                   "weights": [number, ...], "mass": number}
                  scale is required for normal_free and forbidden otherwise; mass
                  defaults to sum(weights) and must be <= 1
  sample config   {"family": family, "G": mixing, "n": int, "seed": int}
  sample CSV      header "value", one observation per row, plus <stem>.meta.json
                  holding {"seed", "family", "G"}
  fit config      {"family": family, "m": int, "mode": "plain" | "penalized" |
                   "constrained" | "equal_variance", "penalty": {"scale_anchor":
                   number | null, "form": "inverse_gamma" | "log_only"},
                   "sigma_floor": number, "max_iter": int, "tol": number,
                   "restarts": int, "seed": int}
  npmle config    {"family": family, "grid": [number, ...], "grid_size": int,
                   "tol_grad": number}
  check params    keyword arguments of the named check; "family" is a family,
                  keys starting with "G" are mixing objects, "theta_star" and
                  "candidates" are atoms, "sample" is a list of numbers or a
                  sample CSV path
  experiment      {"family": family, "G_star": mixing, "n_grid": [int, ...],
                   "reps": int, "fit": fit config, "master_seed": int,
                   "output_path": str, "workers": int, "k_list": [number, ...]}
                  k_list is used by "experiment degeneracy" only

checks: """ + ", ".join(sorted(CHECKS))

log = logging.getLogger("mixlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Usage(f"{self.prog}: error: {message}")


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixlab", description="Mixture models: sampling, fitting, distances, checks.",
                epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="{sample,fit,npmle,distance,check,experiment}",
                           parser_class=_Parser)
    sub.required = True

    def add(name, help):
        return sub.add_parser(name, help=help, description=help, epilog=SCHEMA_HELP,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    s = add("sample", "draw a sample from a mixture")
    s.add_argument("--config", required=True, help="sample config JSON")
    s.add_argument("--output", required=True, help="CSV path; metadata goes to <stem>.meta.json")

    f = add("fit", "EM fit of an m-component mixture")
    f.add_argument("--sample", required=True, help="sample CSV")
    f.add_argument("--config", required=True, help="fit config JSON")
    f.add_argument("--output", help="FitReport JSON path")

    n = add("npmle", "nonparametric MLE of the mixing distribution")
    n.add_argument("--sample", required=True, help="sample CSV")
    n.add_argument("--config", required=True, help="npmle config JSON")
    n.add_argument("--output", help="result JSON path")

    d = add("distance", "Kiefer-Wolfowitz distance between two mixing JSON files")
    d.add_argument("g1")
    d.add_argument("g2")
    d.add_argument("--dim", type=int, choices=(1, 2), default=1)

    c = add("check", "run a named theory check")
    c.add_argument("--name", required=True, choices=sorted(CHECKS))
    c.add_argument("--config", help="check parameter JSON")
    c.add_argument("--output", help="CheckReport JSON path")

    e = add("experiment", "simulation sweep")
    e.add_argument("kind", choices=("consistency", "degeneracy"))
    e.add_argument("--config", required=True, help="experiment config JSON")
    e.add_argument("--output", help="overrides output_path from the config")
    e.add_argument("--workers", type=int, help="overrides workers from the config")
    return p


def _emit(args, payload: dict, text: str):
    if args.json:
        print(io.dump_json(payload))
    else:
        print(text)


def cmd_sample(args) -> int:
    cfg = io.load_json(args.config, io.SAMPLE_SCHEMA)
    family = ComponentFamily.from_dict(cfg["family"])
    sample = sample_mixture(family, MixingDistribution.from_dict(cfg["G"]), cfg["n"], cfg["seed"])
    io.save_sample(sample, args.output)
    _emit(args, {"output": args.output, "n": sample.n, "seed": sample.seed},
          f"wrote {sample.n} observations to {args.output}")
    return EXIT_OK


def cmd_fit(args) -> int:
    sample = io.load_sample(args.sample)
    cfg = io.load_fit_config(args.config)
    report = em_fit(cfg, sample)
    if args.output:
        io.save_fit_report(report, args.output)
    for w in report.warnings:
        log.warning(w)
    text = (f"objective {report.objective!r} after {report.iterations} iterations "
            f"(converged={report.converged})\n{io.dump_json(report.estimate.to_dict())}")
    _emit(args, report.to_dict(), text)
    return EXIT_OK


def cmd_npmle(args) -> int:
    sample = io.load_sample(args.sample)
    cfg = io.load_json(args.config, io.NPMLE_SCHEMA)
    kwargs = {k: cfg[k] for k in ("grid", "grid_size", "tol_grad") if k in cfg}
    res = npmle_fit(ComponentFamily.from_dict(cfg["family"]), sample, **kwargs)
    if args.output:
        io.dump_json(res.to_dict(), args.output)
    text = (f"support {res.support_size} (distinct observations {res.distinct_obs}), "
            f"sup D = {res.gradient_sup:.3g}, certified={res.certified}")
    _emit(args, res.to_dict(), text)
    return EXIT_OK


def cmd_distance(args) -> int:
    res = kw_distance(io.load_mixing(args.g1), io.load_mixing(args.g2), args.dim)
    _emit(args, {"value": res.value, "cells_evaluated": res.cells_evaluated}, f"{res.value:.12f}")
    return EXIT_OK


def _decode_check_params(name, params: dict) -> dict:
    out = {}
    for key, val in params.items():
        if key == "family":
            out[key] = ComponentFamily.from_dict(val)
        elif key.startswith("G"):
            io.validate(val, io.MIXING_SCHEMA, f"check params {key}")
            out[key] = MixingDistribution.from_dict(val)
        elif key == "theta_star":
            out[key] = as_atom(val)
        elif key == "candidates":
            out[key] = [as_atom(v) for v in val]
        elif key == "sample" and isinstance(val, str):
            out[key] = io.load_sample(val)
        else:
            out[key] = val
    sig = inspect.signature(CHECKS[name])
    try:
        sig.bind(**out)
    except TypeError as exc:
        raise io.ConfigError(f"check {name}: {exc}; parameters are {list(sig.parameters)}") from exc
    return out


def cmd_check(args) -> int:
    params = io.load_json(args.config) if args.config else {}
    if not isinstance(params, dict):
        raise io.ConfigError(f"{args.config}: check parameters must be a JSON object")
    report = CHECKS[args.name](**_decode_check_params(args.name, params))
    if args.output:
        io.dump_json(report.to_dict(), args.output)
    _emit(args, report.to_dict(), report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_experiment(args) -> int:
    raw = io.load_json(args.config, io.EXPERIMENT_SCHEMA)
    k_list = raw.pop("k_list", [1.0, 1e2, 1e4, 1e6])
    if args.output:
        raw["output_path"] = args.output
    if args.workers:
        raw["workers"] = args.workers
    cfg = ExperimentConfig.from_dict(raw)
    if args.kind == "consistency":
        results = run_consistency(cfg)
        summary = summarize(results)
        lines = ["n,median,q25,q75,failures"]
        lines += [f"{n},{s['median']},{s['q25']},{s['q75']},{s['failures']}"
                  for n, s in summary.items()]
        _emit(args, summary, "\n".join(lines))
    else:
        report = run_degeneracy_comparison(cfg, k_list)
        d = report.to_dict()
        short = {k: v for k, v in d.items() if k != "rows"}
        _emit(args, d, json.dumps(short, indent=2))
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "fit": cmd_fit,
    "npmle": cmd_npmle,
    "distance": cmd_distance,
    "check": cmd_check,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ContractViolation, io.ConfigError) as exc:
        print(f"mixlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MixlabError, ValueError, KeyError, TypeError) as exc:
        print(f"mixlab {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
