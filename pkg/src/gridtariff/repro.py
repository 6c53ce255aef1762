"""Scripted pipelines that regenerate the datasets behind each published figure.

Every pipeline returns ``(csv_text, params)``; the CLI writes the CSV and a
sidecar JSON of ``params``.  Nothing here plots.
"""
from __future__ import annotations

import csv
import io
from typing import Callable

import numpy as np

from . import dqn, lric, security
from .netmodel import NetworkCase

DEFAULT_NODES = tuple(range(4, 15))
DEFAULT_DELTA = 10.0
DEFAULT_INJECTION_NODE = 14
STOCHASTIC = frozenset({"4-3", "4-4", "4-5", "4-6", "4-7"})


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _security_table(case: NetworkCase, p: dict):
    base = security.contingency_sweep(case, p["metric"], jobs=p["jobs"])
    inj = security.security_factor_with_injection(case, p["inject_node"], p["inject_mw"],
                                                  metric=p["metric"], jobs=p["jobs"])
    return security.sweep_csv(case, base, inj)


def _charges(case, p, modes, kind):
    entries = lric.lric_sweep(case, p["nodes"], p["deltas"], security_modes=modes,
                              power_kinds=(kind,), formulation=p["formulation"], metric=p["metric"])
    return lric.sweep_csv(entries)


def fig_3_4(case, p):
    return _security_table(case, p)


def fig_3_5(case, p):
    return _charges(case, p, (lric.WITHOUT_SF, lric.WITH_SF), lric.KIND_P)


def fig_4_1(case, p):
    return _charges(case, p, (lric.WITHOUT_SF,), lric.KIND_P)


def fig_4_2(case, p):
    return _charges(case, p, (lric.WITHOUT_SF, lric.WITH_SF), lric.KIND_P)


def fig_4_10(case, p):
    return _charges(case, p, (lric.WITHOUT_SF, lric.WITH_SF), lric.KIND_P)


def fig_4_11(case, p):
    return _charges(case, p, (lric.WITHOUT_SF, lric.WITH_SF), lric.KIND_Q)


def _agent_config(p) -> dqn.AgentConfig:
    return dqn.AgentConfig(episodes=p["episodes"], rng_seed=p["seed"])


def fig_4_3(case, p):
    """Deviation after each step of the last learning."""
    _, log = dqn.train(case, _agent_config(p))
    last = log.episodes[-1].episode
    rows = [(s.step, s.dev_before, s.dev_after, s.reward) for s in log.steps if s.episode == last]
    return _csv(("step", "dev_before", "dev_after", "reward"), rows)


def fig_4_4(case, p):
    """Final average deviation of every learning."""
    _, log = dqn.train(case, _agent_config(p))
    rows = [(e.episode, e.initial_deviation, e.final_deviation, e.mean_deviation,
             int(e.aborted)) for e in log.episodes]
    return _csv(("episode", "initial_deviation", "final_deviation", "mean_deviation", "aborted"),
                rows)


def _evaluation(case, p):
    net, _ = dqn.train(case, _agent_config(p))
    rng = np.random.default_rng(p["seed"])
    return dqn.evaluate(net, case, p["tests"], p["scale"], rng, jobs=p["jobs"])


def fig_4_5(case, p):
    rep = _evaluation(case, p)
    return _csv(("test", "action", "dev_before", "dev_after", "error"),
                [(r.test, "" if r.action is None else r.action,
                  "" if r.dev_before is None else r.dev_before,
                  "" if r.dev_after is None else r.dev_after, r.error) for r in rep.results])


def _loss_figure(field: str):
    def run(case, p):
        rep = _evaluation(case, p)
        rows = [(r.test, "" if getattr(r, f"{field}_before") is None else getattr(r, f"{field}_before"),
                 "" if getattr(r, f"{field}_after") is None else getattr(r, f"{field}_after"),
                 r.error) for r in rep.results]
        return _csv(("test", "loss_before", "loss_after", "error"), rows)
    return run


FIGURES: dict[str, tuple[Callable, dict]] = {
    "3-4": (fig_3_4, {"metric": "mva", "inject_node": DEFAULT_INJECTION_NODE,
                      "inject_mw": DEFAULT_DELTA, "jobs": 1}),
    "3-5": (fig_3_5, {"nodes": DEFAULT_NODES, "deltas": (DEFAULT_DELTA,),
                      "formulation": lric.CHAPTER1, "metric": "mva"}),
    "4-1": (fig_4_1, {"nodes": DEFAULT_NODES, "deltas": (DEFAULT_DELTA,),
                      "formulation": lric.CHAPTER1, "metric": "mva"}),
    "4-2": (fig_4_2, {"nodes": DEFAULT_NODES, "deltas": (5.0, 10.0, 20.0),
                      "formulation": lric.CHAPTER1, "metric": "mva"}),
    "4-3": (fig_4_3, {"episodes": 200}),
    "4-4": (fig_4_4, {"episodes": 200}),
    "4-5": (fig_4_5, {"episodes": 200, "tests": 5, "scale": 0.05, "jobs": 1}),
    "4-6": (_loss_figure("p_loss"), {"episodes": 200, "tests": 5, "scale": 0.05, "jobs": 1}),
    "4-7": (_loss_figure("q_loss"), {"episodes": 200, "tests": 5, "scale": 0.05, "jobs": 1}),
    "4-10": (fig_4_10, {"nodes": DEFAULT_NODES, "deltas": (DEFAULT_DELTA,),
                        "formulation": lric.CHAPTER1, "metric": "mva"}),
    "4-11": (fig_4_11, {"nodes": DEFAULT_NODES, "deltas": (DEFAULT_DELTA,),
                        "formulation": lric.CHAPTER1, "metric": "mva"}),
}


def run_figure(figure: str, case: NetworkCase, overrides: dict | None = None) -> tuple[str, dict]:
    """Dataset for ``figure`` with defaults updated by ``overrides`` (unknown keys ignored)."""
    func, defaults = FIGURES[figure]
    params = dict(defaults)
    for k, v in (overrides or {}).items():
        if k in params and v is not None:
            params[k] = v
    if figure in STOCHASTIC:
        params["seed"] = (overrides or {}).get("seed")
        if params["seed"] is None:
            raise ValueError(f"figure {figure} needs a seed")
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
    text = func(case, params)
    # worker count never changes the data, so it is not part of the record
    recorded = {k: v for k, v in params.items() if k != "jobs"}
    return text, {"figure": figure, "case": case.name, **recorded}
