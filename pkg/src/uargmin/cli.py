"""Command line front end: ``uargmin {estimate,analyze,simulate,catalog}``.

JSON goes to stdout, diagnostics to stderr.  Failures print one line
``error[<code>]: <reason>`` to stderr and exit with the code below.

====  =========================================================
code  meaning
====  =========================================================
0     success (an Unclassified analysis is still a success)
2     bad input: unreadable file, malformed JSON/CSV, bad params
3     kernel enumeration exceeds the cap
4     loss without a bounded minimiser
5     population analysis failed
6     a Monte Carlo replication failed (message carries its seed)
====  =========================================================
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import asymptotics, estimator, montecarlo, population, problem
from .errors import ConfigError, UArgminError

SCHEMA_VERSION = 1


def _load_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if obj.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema {obj.get('schema')!r} (expected {SCHEMA_VERSION})")
    return obj


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _population(cfg: dict) -> tuple[asymptotics.PopulationProblem, problem.ConvexLoss]:
    loss = problem.loss_from_json(cfg.get("loss") or {})
    kernel = problem.kernel_from_json(cfg.get("kernel") or {"id": "identity"})
    if "kernel_law" in cfg:
        R = population.from_json(cfg["kernel_law"])
        model = population.model_from_json(cfg["data_model"]) if "data_model" in cfg else None
    elif "data_model" in cfg:
        model = population.model_from_json(cfg["data_model"])
        R = population.kernel_law(model, kernel)
    else:
        raise ConfigError("problem config needs 'data_model' or 'kernel_law'")
    if kernel.degree > 1 and model is None:
        raise ConfigError("kernels of degree >= 2 need 'data_model' for the variance constant")
    prob = asymptotics.PopulationProblem(R, kernel.degree,
                                         model if kernel.degree > 1 else None,
                                         kernel if kernel.degree > 1 else None)
    return prob, loss


def cmd_estimate(args) -> int:
    cfg = _load_json(args.config)
    loss = problem.loss_from_json(cfg.get("loss") or {})
    kernel = problem.kernel_from_json(cfg.get("kernel") or {"id": "identity"})
    data = estimator.read_csv(args.data)
    ks = estimator.kernel_sample(data, kernel, cfg.get("cap", estimator.DEFAULT_CAP))
    interval = estimator.argmin_interval(ks, loss, args.policy or cfg.get("policy", "midpoint"))
    _emit({**interval.to_json(),
           "settings": {"cap": cfg.get("cap", estimator.DEFAULT_CAP), "root_tol": estimator.ROOT_TOL}},
          args.out)
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_json(args.config)
    prob, loss = _population(cfg)
    grid = asymptotics.ClassifyGrid(**cfg.get("grid", {}))
    seed = args.seed if args.seed is not None else cfg.get("seed", montecarlo.DEFAULT_SEED)
    report = asymptotics.analyze(prob, loss, m=cfg.get("m"), grid=grid,
                                 zeta_budget=cfg.get("zeta_budget", asymptotics.DEFAULT_ZETA_BUDGET),
                                 seed=seed)
    if report.attraction.tag == "Unclassified":
        print(f"note: unclassified ({report.attraction.diagnostics.get('reason', '')})", file=sys.stderr)
    if args.out:
        Path(args.out).with_suffix(".csv").write_text(report.profile_csv())
    _emit(report.to_json(), args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    for flag, key in (("seed", "master_seed"), ("policy", "policy"), ("reps", "reps"),
                      ("n", "n"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            cfg[key] = value
    config = montecarlo.SimConfig.from_json(cfg)
    result = montecarlo.run(config)
    if args.out:
        Path(args.out).with_suffix(".csv").write_text(result.to_csv())
    print(f"ks={result.ks:.5f} runtime={result.runtime:.2f}s", file=sys.stderr)
    _emit(result.to_json(), args.out)
    return 0


def cmd_catalog(args) -> int:
    _emit({
        "losses": [*problem.LOSS_IDS, "step"],
        "kernels": list(problem.KERNEL_IDS),
        "distributions": sorted(population.BUILTIN_IDS | {"smirnov", "piecewise", "empirical"}),
        "data_models": ["iid", "regression", "<any distribution>"],
        "policies": list(estimator.POLICIES),
        "tags": list(asymptotics.TAGS),
        "defaults": {"seed": montecarlo.DEFAULT_SEED, "cap": estimator.DEFAULT_CAP,
                     "root_tol": estimator.ROOT_TOL,
                     "zeta_budget": asymptotics.DEFAULT_ZETA_BUDGET,
                     "grid": asymptotics.ClassifyGrid().__dict__, "clip": montecarlo.CLIP},
    }, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uargmin", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", help="also write the JSON output here (CSV companion alongside)")
        return p

    p = common(sub.add_parser("estimate", help="minimiser interval of a dataset"))
    p.add_argument("--data", required=True, help="CSV, one observation per row")
    p.add_argument("--policy", choices=estimator.POLICIES)
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("analyze", help="population analysis and limit law"))
    p.add_argument("--seed", type=int, help=f"nested Monte Carlo seed (default {montecarlo.DEFAULT_SEED})")
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("simulate", help="Monte Carlo check of the limit law"))
    p.add_argument("--seed", type=int, help=f"master seed (default {montecarlo.DEFAULT_SEED})")
    p.add_argument("--policy", choices=estimator.POLICIES)
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("catalog", help="list ids and defaults"), config=False)
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UArgminError as exc:
        reason = " ".join(str(exc).split())
        print(f"error[{exc.exit_code}]: {type(exc).__name__}: {reason}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, KeyError) as exc:
        print(f"error[2]: ConfigError: malformed config ({exc})", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
