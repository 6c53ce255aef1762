"""Command-line front end.

Exit codes: 0 success, 1 domain error (the machine-readable code is printed
as ``error[<code>]: message`` on stderr), 2 usage error.

Settings come from, in decreasing precedence: command-line flags, a JSON
``--config`` file whose keys are the long flag names with dashes replaced by
underscores, and built-in defaults.  Stochastic commands need ``--seed`` or
the ``GRIDTARIFF_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dqn, lric, powerflow, repro, rpo, security, tariff
from .errors import GridTariffError
from .netmodel import load_case

SEED_ENV = "GRIDTARIFF_SEED"


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _seed(args) -> int:
    seed = args.seed
    if seed is None:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed is None:
        raise UsageError("this command is stochastic: pass --seed or set " + SEED_ENV)
    if seed < 0:
        raise UsageError("seed must be non-negative")
    return seed


def _case(args):
    return load_case(args.case)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _peers(text: str) -> list[tuple[float, float]]:
    try:
        out = []
        for item in text.replace(",", " ").split():
            share, cost = item.split(":")
            out.append((float(share), float(cost)))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError("peers are share:cost pairs, e.g. 0.5:90,0.5:100") from None


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def cmd_case_validate(args) -> int:
    case = _case(args).validate()
    _emit(_dumps({
        "status": "ok", "name": case.name, "base_mva": case.base_mva, "buses": len(case.buses),
        "generators": len(case.generators), "branches": len(case.branches),
        "adjustable_transformers": len(case.adjustable_transformers()),
        "shunt_banks": len(case.shunt_banks),
    }), args.out)
    return 0


def cmd_pf_run(args) -> int:
    case = _case(args)
    opts = powerflow.SolverOptions(tolerance=args.tolerance, max_iterations=args.max_iterations,
                                   enforce_q_limits=args.q_limits)
    sol = powerflow.solve_or_raise(case, opts)
    if args.format == "json":
        _emit(powerflow.solution_to_json(case, sol), args.out)
    else:
        bus_csv, branch_csv = powerflow.solution_to_csv(case, sol)
        _emit(bus_csv + "\n" + branch_csv, args.out)
    return 0


def cmd_security_sweep(args) -> int:
    case = _case(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    report = security.contingency_sweep(case, args.metric, jobs=args.jobs)
    injected = None
    if args.inject_node is not None:
        injected = security.security_factor_with_injection(
            case, args.inject_node, args.inject_mw, args.inject_mvar, args.metric, args.jobs)
    elif args.inject_mw or args.inject_mvar:
        raise UsageError("--inject-mw/--inject-mvar need --inject-node")
    if args.format == "json":
        payload = {
            "metric": report.metric,
            "skipped_outages": [{"branch": b, "reason": r} for b, r in report.skipped_outages],
            "branches": [b.__dict__ for b in report.branches],
        }
        if injected is not None:
            payload["injected"] = {str(k): v for k, v in injected.factors().items()}
        _emit(_dumps(payload), args.out)
    else:
        _emit(security.sweep_csv(case, report, injected), args.out)
    return 0


_MODES = {"on": (lric.WITH_SF,), "off": (lric.WITHOUT_SF,), "both": (lric.WITHOUT_SF, lric.WITH_SF)}
_KINDS = {"p": lric.KIND_P, "q": lric.KIND_Q}
_FORMS = {"ch1": lric.CHAPTER1, "ch2": lric.CHAPTER2}


def cmd_lric_compute(args) -> int:
    case = _case(args)
    if args.security == "both":
        raise UsageError("lric compute takes --security on or off")
    res = lric.nodal_lric(case, args.node, args.delta, security_mode=_MODES[args.security][0],
                          formulation=_FORMS[args.formulation], power_kind=_KINDS[args.kind],
                          metric=args.metric)
    _emit(_dumps(lric.charges_to_dict(res)), args.out)
    return 0


def cmd_lric_sweep(args) -> int:
    case = _case(args)
    nodes = args.nodes or [b.id for b in case.buses if b.id != case.slack().id]
    entries = lric.lric_sweep(case, nodes, args.deltas, security_modes=_MODES[args.security],
                              power_kinds=(_KINDS[args.kind],),
                              formulation=_FORMS[args.formulation], metric=args.metric)
    _emit(lric.sweep_csv(entries), args.out)
    return 0


def cmd_rpo_objectives(args) -> int:
    case = _case(args)
    if args.controls:
        controls = rpo.ControlVector.from_dict(json.loads(Path(args.controls).read_text("utf-8")))
    else:
        controls = rpo.controls_of(case)
    report = rpo.check_constraints(case, None, controls)
    if report.violations:
        payload = {"feasible": False, "solved": False,
                   "violations": [v.__dict__ for v in report.violations]}
        _emit(_dumps(payload), args.out)
        return 0
    trial = rpo.apply_controls(case, controls)
    sol = powerflow.solve_or_raise(trial)
    if args.bounds:
        bounds = json.loads(Path(args.bounds).read_text("utf-8"))
        bounds_source = args.bounds
    else:
        rng = np.random.default_rng(_seed(args))
        bounds = rpo.sample_objective_bounds(case, args.samples, rng)
        bounds_source = f"sampled:{args.samples}"
    raw = rpo.raw_objectives(trial, sol)
    weighted = rpo.weighted_objective(raw, args.weights, bounds)
    report = rpo.check_constraints(trial, sol, controls)
    payload = {
        "feasible": report.feasible,
        "solved": True,
        "controls": controls.to_dict(),
        "raw": dict(zip(rpo.OBJECTIVE_NAMES, raw)),
        "bounds": {n: list(b) for n, b in zip(rpo.OBJECTIVE_NAMES, bounds)},
        "bounds_source": bounds_source,
        "weights": list(args.weights),
        "weighted": weighted,
        "violations": [v.__dict__ for v in report.violations],
        "max_mismatch": report.max_mismatch,
    }
    _emit(_dumps(payload), args.out)
    return 0


def _agent_config(args, seed) -> dqn.AgentConfig:
    try:
        return dqn.AgentConfig(
            epsilon=args.epsilon, batch_size=args.batch_size, buffer_capacity=args.buffer,
            update_period=args.update_period, gamma=args.gamma, learning_rate=args.learning_rate,
            steps_per_episode=args.steps, episodes=args.episodes, rng_seed=seed,
            hidden_sizes=tuple(args.hidden), section_scale=args.scale,
            largest_td=not args.minibatch)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_dqn_train(args) -> int:
    case = _case(args)
    config = _agent_config(args, _seed(args))
    net, log = dqn.train(case, config)
    Path(args.out).write_text(dqn.save_model(net, case, config), encoding="utf-8")
    _emit(log.to_csv(), args.log)
    return 0


def cmd_dqn_eval(args) -> int:
    case = _case(args)
    net = dqn.load_model(Path(args.model).read_text("utf-8"), case)
    rng = np.random.default_rng(_seed(args))
    report = dqn.evaluate(net, case, args.tests, args.scale, rng, jobs=args.jobs)
    _emit(report.to_csv(), args.out)
    return 0


def _tariff_fields(args, names):
    values = {}
    if args.input:
        values.update(json.loads(Path(args.input).read_text("utf-8")))
        unknown = sorted(set(values) - set(names))
        if unknown:
            raise UsageError("unknown input keys: " + ", ".join(unknown))
    for n in names:
        v = getattr(args, n)
        if v is not None:
            values[n] = v
    missing = [n for n in names if n not in values and n not in ("z", "benchmark_cost", "peers")]
    if missing:
        raise UsageError("missing inputs: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return values


def cmd_tariff_permitted(args) -> int:
    v = _tariff_fields(args, ("permitted_cost", "return_rate", "asset_base", "vat_rate"))
    res = tariff.permitted_income(tariff.PermittedIncomeInputs(**v))
    _emit(_dumps({"inputs": v, "allowed_return": res.allowed_return, "tax": res.tax,
                  "income": res.income}), args.out)
    return 0


def cmd_tariff_ceiling(args) -> int:
    v = _tariff_fields(args, ("prev_price", "rpi", "x", "z"))
    price = tariff.ceiling_price(tariff.CeilingInputs(**v))
    _emit(_dumps({"inputs": v, "price": price}), args.out)
    return 0


def cmd_tariff_scale(args) -> int:
    v = _tariff_fields(args, ("own_weight", "own_cost", "benchmark_cost", "peers"))
    v["peers"] = [tuple(p) for p in v.get("peers", ())]
    price = tariff.scale_competition_price(tariff.ScaleCompetitionInputs(**v))
    v["peers"] = [list(p) for p in v["peers"]]
    _emit(_dumps({"inputs": v, "price": price}), args.out)
    return 0


def cmd_repro_figure(args) -> int:
    case = _case(args)
    overrides = {"jobs": args.jobs, "episodes": args.episodes, "tests": args.tests}
    if args.figure in repro.STOCHASTIC:
        overrides["seed"] = _seed(args)
    text, params = repro.run_figure(args.figure, case, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = out_dir / f"fig-{args.figure}"
    stem.with_suffix(".csv").write_text(text, encoding="utf-8")
    stem.with_suffix(".json").write_text(_dumps(params), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, case=True, out=True, seed=False, fmt=None):
    if case:
        p.add_argument("--case", default="ieee14",
                       help="case file path or the keyword 'ieee14' (default: ieee14)")
    if out:
        p.add_argument("--out", default=None, help="output file (default: stdout)")
    if fmt:
        p.add_argument("--format", choices=fmt, default=fmt[0], help=f"output format (default: {fmt[0]})")
    if seed:
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (falls back to ${SEED_ENV})")
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtariff", description=__doc__.splitlines()[0])
    groups = parser.add_subparsers(dest="group", metavar="<group>", required=True)

    def leaf(group_parsers, name, handler, help_text):
        p = group_parsers.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(handler=handler, _parser=p)
        return p

    g = groups.add_parser("case", help="case files").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "validate", cmd_case_validate, "parse and validate a case")
    _common(p)

    g = groups.add_parser("pf", help="power flow").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "run", cmd_pf_run, "solve an AC power flow")
    _common(p, fmt=("csv", "json"))
    p.add_argument("--tolerance", type=float, default=1e-8, help="mismatch tolerance, pu")
    p.add_argument("--max-iterations", type=int, default=30, help="Newton iteration cap")
    p.add_argument("--q-limits", action="store_true", help="enforce generator reactive limits")

    g = groups.add_parser("security", help="N-1 security").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "sweep", cmd_security_sweep, "N-1 contingency sweep and security factors")
    _common(p, fmt=("csv", "json"))
    p.add_argument("--metric", choices=security.FLOW_METRICS, default="mva",
                   help="branch loading measure (default: mva)")
    p.add_argument("--jobs", type=int, default=1, help="parallel outage solves")
    p.add_argument("--inject-node", type=int, default=None, help="bus for an extra load")
    p.add_argument("--inject-mw", type=float, default=0.0, help="extra active load, MW")
    p.add_argument("--inject-mvar", type=float, default=0.0, help="extra reactive load, MVar")

    g = groups.add_parser("lric", help="LRIC charges").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "compute", cmd_lric_compute, "charge at one node")
    _common(p)
    p.add_argument("--node", type=int, default=None, help="bus id (required)")
    p.set_defaults(_required=("node",))
    p.add_argument("--delta", type=float, default=10.0, help="load step, MW or MVar")
    p.add_argument("--security", choices=("on", "off"), default="on", help="apply security factors")
    p.add_argument("--kind", choices=("p", "q"), default="p", help="active or reactive")
    p.add_argument("--formulation", choices=("ch1", "ch2"), default="ch1", help="charge formula")
    p.add_argument("--metric", choices=security.FLOW_METRICS, default="mva", help="loading measure")
    p = leaf(g, "sweep", cmd_lric_sweep, "charges over nodes and load steps")
    _common(p)
    p.add_argument("--nodes", type=_int_list, default=None, help="bus ids (default: all but slack)")
    p.add_argument("--deltas", type=_float_list, default=[10.0], help="load steps")
    p.add_argument("--security", choices=("on", "off", "both"), default="both", help="modes")
    p.add_argument("--kind", choices=("p", "q"), default="p", help="active or reactive")
    p.add_argument("--formulation", choices=("ch1", "ch2"), default="ch1", help="charge formula")
    p.add_argument("--metric", choices=security.FLOW_METRICS, default="mva", help="loading measure")

    g = groups.add_parser("rpo", help="reactive power optimization").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "objectives", cmd_rpo_objectives, "objectives and constraint report")
    _common(p, seed=True)
    p.add_argument("--controls", default=None, help="JSON control vector (default: case settings)")
    p.add_argument("--weights", type=_float_list, default=[0.25, 0.25, 0.25, 0.25],
                   help="four objective weights")
    p.add_argument("--bounds", default=None, help="JSON [[min,max]]x4 (default: sampled)")
    p.add_argument("--samples", type=int, default=50, help="samples for bound estimation")

    g = groups.add_parser("dqn", help="voltage-control agent").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "train", cmd_dqn_train, "train an agent")
    _common(p, out=False, seed=True)
    p.add_argument("--out", default=None, help="model JSON path (required)")
    p.set_defaults(_required=("out",))
    p.add_argument("--log", default=None, help="training log CSV (default: stdout)")
    p.add_argument("--episodes", type=int, default=200, help="number of learnings")
    p.add_argument("--steps", type=int, default=35, help="steps per learning")
    p.add_argument("--epsilon", type=float, default=0.1, help="exploration rate")
    p.add_argument("--batch-size", type=int, default=16, help="replay minibatch")
    p.add_argument("--buffer", type=int, default=100, help="replay capacity")
    p.add_argument("--update-period", type=int, default=20, help="target copy period, steps")
    p.add_argument("--gamma", type=float, default=0.9, help="discount")
    p.add_argument("--learning-rate", type=float, default=0.001, help="step size")
    p.add_argument("--hidden", type=_int_list, default=[64, 64, 32, 32], help="hidden sizes")
    p.add_argument("--scale", type=float, default=0.1, help="load perturbation scale")
    p.add_argument("--minibatch", action="store_true",
                   help="average the TD error over the minibatch instead of the largest-target sample")
    p = leaf(g, "eval", cmd_dqn_eval, "greedy one-action tests")
    _common(p, seed=True)
    p.add_argument("--model", default=None, help="model JSON path (required)")
    p.set_defaults(_required=("model",))
    p.add_argument("--tests", type=int, default=50, help="number of tests")
    p.add_argument("--scale", type=float, default=0.05, help="load perturbation scale")
    p.add_argument("--jobs", type=int, default=1, help="parallel tests")

    g = groups.add_parser("tariff", help="regulated prices").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "permitted", cmd_tariff_permitted, "permitted income")
    _common(p, case=False)
    p.add_argument("--input", default=None, help="JSON inputs")
    p.add_argument("--permitted-cost", type=float, default=None, help="allowed cost")
    p.add_argument("--return-rate", type=float, default=None, help="allowed return rate")
    p.add_argument("--asset-base", type=float, default=None, help="regulated asset base")
    p.add_argument("--vat-rate", type=float, default=None, help="tax rate")
    p = leaf(g, "ceiling", cmd_tariff_ceiling, "RPI-X price cap")
    _common(p, case=False)
    p.add_argument("--input", default=None, help="JSON inputs")
    p.add_argument("--prev-price", type=float, default=None, help="previous-period price")
    p.add_argument("--rpi", type=float, default=None, help="retail price index change")
    p.add_argument("--x", type=float, default=None, help="efficiency factor")
    p.add_argument("--z", type=float, default=None, help="external adjustment")
    p = leaf(g, "scale", cmd_tariff_scale, "yardstick-competition price")
    _common(p, case=False)
    p.add_argument("--input", default=None, help="JSON inputs")
    p.add_argument("--own-weight", type=float, default=None, help="weight on own cost")
    p.add_argument("--own-cost", type=float, default=None, help="own unit cost")
    p.add_argument("--benchmark-cost", type=float, default=None, help="single benchmark cost")
    p.add_argument("--peers", type=_peers, default=None, help="share:cost pairs")

    g = groups.add_parser("repro", help="figure datasets").add_subparsers(dest="cmd", required=True)
    p = leaf(g, "figure", cmd_repro_figure, "write a figure's CSV and parameter JSON")
    _common(p, out=False, seed=True)
    p.add_argument("figure", choices=sorted(repro.FIGURES), help="figure id")
    p.add_argument("--out-dir", default=".", help="directory for fig-<id>.csv/.json")
    p.add_argument("--jobs", type=int, default=None, help="parallel solves")
    p.add_argument("--episodes", type=int, default=None, help="learnings (agent figures)")
    p.add_argument("--tests", type=int, default=None, help="tests (evaluation figures)")
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with the config file's values installed as the leaf parser's defaults."""
    try:
        cfg = json.loads(Path(args.config).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    known = {a.dest for a in args._parser._actions if not a.dest.startswith("_")}
    unknown = sorted(set(cfg) - known - {"config"})
    if unknown:
        raise UsageError("unknown config keys: " + ", ".join(unknown))
    args._parser.set_defaults(**cfg)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        missing = [d for d in getattr(args, "_required", ()) if getattr(args, d) is None]
        if missing:
            raise UsageError("missing " + ", ".join("--" + d.replace("_", "-") for d in missing))
        return args.handler(args)
    except UsageError as exc:
        print(f"gridtariff: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except GridTariffError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
