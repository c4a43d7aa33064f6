"""Command-line front end.

Usage::

    monodsm run    --config exp.json [--out-dir DIR] [--seed-override N] [--diagnostics]
    monodsm verify --config exp.json [--out-dir DIR]
    monodsm study  --config exp.json --deltas 1e-2,1e-3,1e-4

Exit codes: 0 success; 1 invalid input or runtime error; 2 the run hit its
iteration cap (``run``), a check failed (``verify``) or a study verdict
failed (``study``).  ``DSM_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .dsm import (
    StoppingRule,
    auto_schedule,
    check_error_recursion,
    check_initial_guess,
    convergence_study,
    run,
)
from .operators import (
    CATALOG,
    MonotoneProblem,
    build_operator,
    exact_solution,
    make_problem,
    verify_monotone,
)
from .regsolve import check_large_a_limit, check_v_sequence, find_n_delta_V, v_sequence
from .schedule import (
    a_priori_n0,
    check_conditions,
    schedule_to_dict,
    working_radius,
)

log = logging.getLogger("monodsm")

RULES = ("discrepancy", "a_priori", "max_iter")


class ConfigError(ValueError):
    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class ProblemConfig:
    catalog: str = "linear_fredholm"
    dim: int = 100
    c: float = 0.0
    negate: bool = False
    y: object = field(default_factory=lambda: {"profile": "exp", "norm": 3.0})
    delta: float | None = None
    seed: int = 0


@dataclass
class ScheduleConfig:
    d0: object = "auto"
    lam: object = "auto"
    d: float = 1.0
    b: float = 1.0
    C1: float = 2.0
    gamma: float = 1.0
    y_norm_est: object = "exact"
    safety: float = 2.0
    samples: int = 16
    bounds_seed: int = 0


@dataclass
class RunConfig:
    rule: str = "discrepancy"
    n_cap: int = 10**6
    diagnostics: bool = False
    verify_N: int | None = None
    deltas: list | None = None


@dataclass
class OutputConfig:
    dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


# key in the file -> attribute name
_SECTIONS = {
    "problem": (ProblemConfig, {}),
    "schedule": (ScheduleConfig, {"lambda": "lam"}),
    "run": (RunConfig, {}),
    "output": (OutputConfig, {}),
}


def _number(where, value, *, positive=False, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(where, f"must be finite, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(where, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _auto_or_number(where, value, extra=()):
    if value == "auto" or value in extra:
        return value
    return _number(where, value, positive=True)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a JSON experiment config.

    Errors name the offending location: ``file:line:col`` for syntax
    errors, ``section.field`` for invalid values.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from None
    if not isinstance(raw, dict):
        raise ConfigError(source, "top level must be an object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")

    parts = {}
    for section, (cls, renames) in _SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(section, "must be an object")
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in body.items():
            attr = renames.get(key, key)
            if attr not in names:
                raise ConfigError(f"{section}.{key}", "unknown field")
            kwargs[attr] = value
        parts[section] = cls(**kwargs)
    cfg = ExperimentConfig(**parts)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    p, s, r, o = cfg.problem, cfg.schedule, cfg.run, cfg.output
    if p.catalog not in CATALOG:
        raise ConfigError("problem.catalog", f"unknown catalog id {p.catalog!r}; "
                                             f"choose from {sorted(CATALOG)}")
    p.dim = _number("problem.dim", p.dim, positive=True, integer=True)
    if p.catalog == "linear_fredholm" and p.dim < 2:
        raise ConfigError("problem.dim", "linear_fredholm needs dim >= 2")
    p.c = _number("problem.c", p.c)
    if p.c < 0:
        raise ConfigError("problem.c", f"must be nonnegative, got {p.c}")
    if not isinstance(p.negate, bool):
        raise ConfigError("problem.negate", "expected true or false")
    p.delta = _number("problem.delta", p.delta, positive=True, allow_none=True)
    p.seed = _number("problem.seed", p.seed, integer=True)
    if isinstance(p.y, dict):
        extra = set(p.y) - {"profile", "norm"}
        if extra:
            raise ConfigError(f"problem.y.{sorted(extra)[0]}", "unknown field")
        if "norm" in p.y:
            _number("problem.y.norm", p.y["norm"], positive=True)
        try:
            exact_solution(p.y.get("profile", "exp"), p.dim, p.y.get("norm"))
        except ValueError as exc:
            raise ConfigError("problem.y.profile", str(exc)) from None
    elif isinstance(p.y, list):
        if len(p.y) != p.dim:
            raise ConfigError("problem.y", f"expected {p.dim} values, got {len(p.y)}")
        for i, v in enumerate(p.y):
            _number(f"problem.y[{i}]", v)
    else:
        raise ConfigError("problem.y", "expected a profile object or a list of numbers")

    s.C1 = _number("schedule.C1", s.C1)
    if not s.C1 > 1:
        raise ConfigError("schedule.C1", f"must exceed 1, got {s.C1}")
    s.gamma = _number("schedule.gamma", s.gamma)
    if not 0 < s.gamma <= 1:
        raise ConfigError("schedule.gamma", f"must lie in (0, 1], got {s.gamma}")
    s.d = _number("schedule.d", s.d)
    if s.d < 1:
        raise ConfigError("schedule.d", f"must be >= 1, got {s.d}")
    s.b = _number("schedule.b", s.b)
    if not 0 < s.b <= 1:
        raise ConfigError("schedule.b", f"must lie in (0, 1], got {s.b}")
    s.d0 = _auto_or_number("schedule.d0", s.d0)
    s.lam = _auto_or_number("schedule.lambda", s.lam)
    s.y_norm_est = _auto_or_number("schedule.y_norm_est", s.y_norm_est, extra=("exact",))
    s.safety = _number("schedule.safety", s.safety)
    if s.safety < 1:
        raise ConfigError("schedule.safety", f"must be >= 1, got {s.safety}")
    s.samples = _number("schedule.samples", s.samples, positive=True, integer=True)
    s.bounds_seed = _number("schedule.bounds_seed", s.bounds_seed, integer=True)

    if r.rule not in RULES:
        raise ConfigError("run.rule", f"unknown rule {r.rule!r}; choose from {list(RULES)}")
    r.n_cap = _number("run.n_cap", r.n_cap, integer=True)
    if r.n_cap < 0:
        raise ConfigError("run.n_cap", "must be nonnegative")
    if not isinstance(r.diagnostics, bool):
        raise ConfigError("run.diagnostics", "expected true or false")
    r.verify_N = _number("run.verify_N", r.verify_N, positive=True, integer=True,
                         allow_none=True)
    if r.deltas is not None:
        if not isinstance(r.deltas, list) or not r.deltas:
            raise ConfigError("run.deltas", "expected a nonempty list of numbers")
        r.deltas = [_number(f"run.deltas[{i}]", v, positive=True)
                    for i, v in enumerate(r.deltas)]
    if not isinstance(o.dir, str):
        raise ConfigError("output.dir", "expected a path string")
    if not isinstance(o.formats, list) or not set(o.formats) <= {"csv", "json"}:
        raise ConfigError("output.formats", "expected a list drawn from ['csv', 'json']")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for section, (_, renames) in _SECTIONS.items():
        back = {v: k for k, v in renames.items()}
        body = dataclasses.asdict(getattr(cfg, section))
        out[section] = {back.get(k, k): v for k, v in body.items()}
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return parse_config(text, source=str(path))


# ---------------------------------------------------------------------------
# building blocks


def build_problem(conf: ProblemConfig, delta: float | None = None) -> MonotoneProblem:
    """Problem from a config section.

    Without a noise level the data are exact and ``delta`` is recorded as 0.
    """
    op = build_operator(conf.catalog, conf.dim, c=conf.c, negate=conf.negate)
    if isinstance(conf.y, dict):
        y = exact_solution(conf.y.get("profile", "exp"), conf.dim, conf.y.get("norm"))
    else:
        y = np.array(conf.y, dtype=float)
    delta = conf.delta if delta is None else delta
    if delta is None:
        f = np.asarray(op.apply(y), dtype=float)
        return MonotoneProblem(op, y, f, 0.0, f, conf.seed)
    return make_problem(op, y, delta, conf.seed)


def build_schedule(conf: ScheduleConfig, problem: MonotoneProblem):
    """Schedule plus a provenance record of the estimates behind it."""
    if conf.y_norm_est == "exact":
        y_norm = float(np.linalg.norm(problem.y))
    elif conf.y_norm_est == "auto":
        y_norm = None
    else:
        y_norm = float(conf.y_norm_est)
    s, bounds = auto_schedule(
        problem.operator, problem.f_delta, problem.delta or None, conf.C1, conf.gamma,
        y_norm_est=y_norm, samples=conf.samples, seed=conf.bounds_seed,
        safety=conf.safety, d=conf.d, b=conf.b,
    )
    if conf.d0 != "auto":
        s = dataclasses.replace(s, d0=float(conf.d0))
    if conf.lam != "auto":
        s = dataclasses.replace(s, lam=float(conf.lam))
    provenance = {
        "y_norm_est": conf.y_norm_est, "M0": bounds.M0, "M1": bounds.M1, "M2": bounds.M2,
        "R": bounds.R, "samples": conf.samples, "bounds_seed": conf.bounds_seed,
        "d0": conf.d0, "lambda": conf.lam,
    }
    return s, provenance


def _prepare(args):
    cfg = load_config(args.config)
    if getattr(args, "seed_override", None) is not None:
        cfg.problem.seed = args.seed_override
    if getattr(args, "diagnostics", False):
        cfg.run.diagnostics = True
    out_dir = Path(args.out_dir or cfg.output.dir)
    return cfg, out_dir


def _require_delta(cfg, why):
    # studies supply their own noise levels, so this is checked per command
    if cfg.problem.delta is None:
        raise ConfigError("problem.delta", f"required by {why}")


def _rule(cfg, delta, n_cap=None):
    return StoppingRule(cfg.run.rule, C1=cfg.schedule.C1, gamma=cfg.schedule.gamma,
                        delta=delta or None, n_cap=cfg.run.n_cap if n_cap is None else n_cap)


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg, out_dir = _prepare(args)
    if cfg.run.rule != "max_iter":
        _require_delta(cfg, f"the {cfg.run.rule} rule")
    problem = build_problem(cfg.problem)
    s, provenance = build_schedule(cfg.schedule, problem)
    rule = _rule(cfg, problem.delta)
    report = run(problem.operator, s, problem.f_delta, rule, cfg.run.diagnostics, y=problem.y)
    if "csv" in cfg.output.formats:
        report.trace.to_csv(out_dir / "trace.csv")
    if "json" in cfg.output.formats:
        write_json(out_dir / "report.json", {
            "version": __version__,
            "config": config_to_dict(cfg),
            "schedule": {**schedule_to_dict(s), "provenance": provenance},
            "result": report.to_dict(),
        })
    print(f"stop={report.stop_reason.value} n_delta={report.n_delta} "
          f"residual={report.residual_final:.6g} threshold={report.threshold:.6g} "
          f"error={report.error_vs_y:.6g}")
    return 0 if report.stop_reason.value != "max_iter" else 2


def _verify_rows(cfg, problem, s):
    """Every check as ``(name, passed, detail)``; a check that raises fails."""
    rows = []
    op, f_delta, delta = problem.operator, problem.f_delta, problem.delta
    y_norm = s.y_norm
    F0_res = float(np.linalg.norm(op.apply(np.zeros(op.dim)) - f_delta))

    def guarded(group, fn):
        try:
            rows.extend(fn())
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            rows.append((group, False, f"error: {exc}"))

    def monotone():
        R = working_radius(y_norm, s.C1)
        rep = verify_monotone(op, R, 200, seed=cfg.problem.seed)
        return [("monotonicity", rep.passed, f"worst={rep.worst:.3e} radius={R:.3g}")]

    def conditions():
        rep = check_conditions(s, F0_res, y_norm, 10**4)
        return [(f"schedule.{r.name}", r.passed,
                 f"worst_margin={r.worst_margin:.3e} first_violation={r.first_violation}")
                for r in rep.results]

    def large_a():
        rep = check_large_a_limit(op, f_delta)
        return [("large_a.norm_bound", rep.norm_bound_ok, ""),
                ("large_a.limit", rep.limit_ok, f"gap={rep.limit_gap:.3e}"),
                ("large_a.monotone", rep.residual_nondecreasing, "")]

    def initial():
        rep = check_initial_guess(op, f_delta, s.a0, s.lam)
        return [("initial_guess", rep.within_data_bound and bool(rep.within_schedule_bound),
                 f"g0={rep.g0:.3e} data_bound={rep.data_bound:.3e} "
                 f"schedule_bound={rep.schedule_bound:.3e}")]

    def vseq():
        n0 = a_priori_n0(s, delta, y_norm)
        N = cfg.run.verify_N or n0 + 1
        recs = v_sequence(op, s, f_delta, N, keep_vectors=False)
        rep = check_v_sequence(recs, delta, y_norm, F0_res)
        out = [("v_sequence.residual_nonincreasing", rep.residual_nonincreasing,
                f"N={N} worst_slack={rep.worst_monotonicity_slack:.3e}"),
               ("v_sequence.norm_nondecreasing", rep.norm_nondecreasing, ""),
               ("v_sequence.residual_identity", rep.residual_identity, ""),
               ("v_sequence.norm_bound", rep.norm_bound, ""),
               ("v_sequence.residual_bound", rep.residual_bound, "")]
        if F0_res > s.C * delta:
            try:
                k = find_n_delta_V(recs, s.C, delta)
                out.append(("v_sequence.crossing", k <= n0, f"n={k} n0={n0}"))
            except ValueError as exc:
                out.append(("v_sequence.crossing", False, str(exc)))
        return out

    def iteration():
        n0 = a_priori_n0(s, delta, y_norm)
        disc = run(op, s, f_delta, StoppingRule("discrepancy", s.C1, s.gamma, delta, n0 + 1))
        out = [("run.stopping_index", disc.stop_reason.value == "discrepancy"
                and disc.n_delta <= n0 + 1, f"n_delta={disc.n_delta} n0={n0}")]
        if cfg.run.diagnostics:
            rep = run(op, s, f_delta, StoppingRule("a_priori", s.C1, s.gamma, delta, n0 + 1),
                      diagnostics=True)
            rec = check_error_recursion(rep.trace, s, n_max=n0 + 1)
            # u_0 = 0; bound on ||u_n - u_0|| up to n0 + 1
            radius = s.a0 / s.lam + y_norm + y_norm * (s.C + 1) / (s.C - 1)
            out += [("recursion.v_increment", rec.v_increment_ok, ""),
                    ("recursion.error_bound", rec.recursion_ok,
                     f"worst_margin={rec.worst_margin['recursion']:.3e}"),
                    ("recursion.invariant", rec.invariant_ok,
                     f"worst_margin={rec.worst_margin['invariant']:.3e}"),
                    ("run.ball_containment", bool(rep.trace.dist_u0.max() <= radius),
                     f"max_dist={rep.trace.dist_u0.max():.3e} radius={radius:.3e}")]
        return out

    guarded("monotonicity", monotone)
    guarded("schedule", conditions)
    guarded("large_a", large_a)
    guarded("initial_guess", initial)
    guarded("v_sequence", vseq)
    guarded("run", iteration)
    return rows


def cmd_verify(args) -> int:
    cfg, out_dir = _prepare(args)
    _require_delta(cfg, "verify")
    problem = build_problem(cfg.problem)
    s, provenance = build_schedule(cfg.schedule, problem)
    rows = _verify_rows(cfg, problem, s)
    if "csv" in cfg.output.formats:
        write_csv(out_dir / "verify.csv", ["check", "passed", "detail"], rows)
    if "json" in cfg.output.formats:
        write_json(out_dir / "verify.json", {
            "version": __version__,
            "config": config_to_dict(cfg),
            "schedule": {**schedule_to_dict(s), "provenance": provenance},
            "checks": [{"check": n, "passed": p, "detail": d} for n, p, d in rows],
            "passed": all(p for _, p, _ in rows),
        })
    width = max(len(n) for n, _, _ in rows)
    for name, passed, detail in rows:
        print(f"{'PASS' if passed else 'FAIL'}  {name:<{width}}  {detail}")
    return 0 if all(p for _, p, _ in rows) else 2


def _parse_deltas(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--deltas", f"expected comma-separated numbers, got {text!r}") from None


def cmd_study(args) -> int:
    cfg, out_dir = _prepare(args)
    deltas = _parse_deltas(args.deltas) if args.deltas else cfg.run.deltas
    if not deltas:
        raise ConfigError("--deltas", "no noise levels given")
    if any(d <= 0 for d in deltas):
        raise ConfigError("--deltas", "noise levels must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("--deltas", "noise levels must be strictly decreasing")
    if not 0 < cfg.schedule.gamma < 1:
        raise ConfigError("schedule.gamma", "the study needs gamma strictly inside (0, 1)")

    def factory(delta, seed):
        return build_problem(dataclasses.replace(cfg.problem, seed=seed), delta)

    def policy(problem, C1, gamma):
        return build_schedule(cfg.schedule, problem)[0]

    result = convergence_study(factory, deltas, cfg.schedule.C1, cfg.schedule.gamma,
                               schedule_policy=policy, seed=cfg.problem.seed)
    verdicts = result.verdicts()
    if "csv" in cfg.output.formats:
        result.to_csv(out_dir / "study.csv")
    if "json" in cfg.output.formats:
        write_json(out_dir / "study.json", {
            "version": __version__,
            "config": config_to_dict(cfg),
            "deltas": deltas,
            "rows": [dataclasses.asdict(r) for r in result.rows],
            "complete": result.complete,
            "failure": result.failure,
            "verdicts": verdicts,
        })
    for r in result.rows:
        print(f"delta={r.delta:<8.3g} n_delta={r.n_delta:<9d} error={r.error:.6g} "
              f"residual={r.residual:.6g}")
    print("verdicts: " + ", ".join(f"{k}={v}" for k, v in verdicts.items()))
    if not result.complete:
        print(f"study incomplete: {result.failure}", file=sys.stderr)
        return 1
    return 2 if any(v is False for v in verdicts.values()) else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="monodsm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"monodsm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in [
        ("run", cmd_run, "run the iteration and write a report and trace"),
        ("verify", cmd_verify, "run every numerical check and write a pass/fail table"),
        ("study", cmd_study, "run the iteration over a decreasing list of noise levels"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out-dir", help="output directory (overrides output.dir)")
        p.add_argument("--seed-override", type=int, help="replace problem.seed")
        p.add_argument("--diagnostics", action="store_true",
                       help="track ||u_n - V_n|| (doubles the cost)")
        if name == "study":
            p.add_argument("--deltas", help="comma-separated, strictly decreasing noise levels")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    level = logging.getLevelName(os.environ.get("DSM_LOG", "WARNING").upper())
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as exit status 1
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
