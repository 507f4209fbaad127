"""Command-line surface: density tables, variance reports, path simulation,
and the acceptance suite.

Outputs are deterministic functions of the resolved configuration: CSV uses
'.' decimals, '\\n' line endings and a header row; JSON is UTF-8 with
snake_case keys, sorted, and carries schema_version plus the full resolved
config.  Files are written atomically (temp file + rename).  Exit codes:
0 success, 1 criterion failure, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields

from .clt import (
    DivergenceError,
    sigma2_autocovariance,
    sigma2_resolvent,
    tent_sigma_recursion,
    tent_system,
    three_branch_system,
    variance_profile,
    variance_profile_dyadic,
)
from .densities import (
    ConvergenceError,
    DetectionError,
    detect_periodicity,
    invariant_density,
    ulam_matrix,
)
from .maps import SQRT2, squared_param, tent_map, tent_period, tent_support_cycle, three_branch_map
from .simulate import limit_law_check, partial_sum_paths, sample_from_density

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    map_spec: str = "tent"
    a: float = 2.0
    grid_n: int = 4096
    steps_n: int = 4096
    paths: int = 4000
    seed: int = 1729
    truncation_J: int = 64
    dyadic_levels: int = 12
    output_path: str = "ergclt_out"
    format: str = "csv"
    only: str | None = None

    def validate(self):
        if self.map_spec not in ("tent", "three_branch"):
            raise ValueError(f"unknown map {self.map_spec!r} (use tent or three_branch)")
        if self.map_spec == "tent" and not 1.0 < self.a <= 2.0:
            raise ValueError("tent parameter must lie in (1, 2]")
        if not 2 <= self.grid_n <= 2**16:
            raise ValueError("grid must lie in [2, 65536]")
        if not 1 <= self.steps_n <= 2**22:
            raise ValueError("steps must lie in [1, 2^22]")
        if not 1 <= self.paths <= 10**6:
            raise ValueError("paths must lie in [1, 10^6]")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def resolved(self) -> dict:
        return asdict(self)


def _atomic_write(path: str, data: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ergclt_tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_payload(config: RunConfig, body: dict) -> str:
    payload = {"schema_version": SCHEMA_VERSION, "config": config.resolved()}
    payload.update(body)
    return json.dumps(payload, sort_keys=True, default=float) + "\n"


def _build_map(config: RunConfig):
    if config.map_spec == "tent":
        return tent_map(config.a)
    return three_branch_map()


def cmd_density(config: RunConfig) -> int:
    config.validate()
    map_ = _build_map(config)
    op = ulam_matrix(map_, config.grid_n)
    density, info = invariant_density(op, return_info=True)
    period = detect_periodicity(op, 1e-9)
    vals = density.piece_values("mid")
    cells = list(zip(density.breakpoints[:-1].tolist(), density.breakpoints[1:].tolist(),
                     vals.tolist()))
    meta = {
        "residual": info["residual"],
        "iterations": info["iterations"],
        "period_detected": period,
    }
    if config.format == "json":
        meta["cells"] = [{"cell_lo": lo, "cell_hi": hi, "value": v} for lo, hi, v in cells]
    else:
        rows = ["cell_lo,cell_hi,value"]
        rows += [f"{lo!r},{hi!r},{v!r}" for lo, hi, v in cells]
        _atomic_write(config.output_path + ".csv", "\n".join(rows) + "\n")
    if config.map_spec == "tent":
        meta["period_formula"] = tent_period(config.a)
        cycle = tent_support_cycle(config.a)
        meta["cycle_masses"] = [
            density.integral(iv.lo, iv.hi) for iv in cycle.intervals
        ]
    _atomic_write(config.output_path + ".json", _json_payload(config, meta))
    return 0


def cmd_variance(config: RunConfig) -> int:
    config.validate()
    body: dict = {}
    if config.map_spec == "three_branch":
        tb = three_branch_system()
        prof = variance_profile(tb.components, tb.observable, tb.map, tb.transfer,
                                J=config.truncation_J)
        dyad = variance_profile_dyadic(tb.observable, tb.map, tb.transfer,
                                       [[(0.0, 0.5)], [(0.5, 1.0)]], J=config.dyadic_levels)
        body["variance_profile"] = prof.to_dict()
        body["variance_profile_dyadic"] = dyad.to_dict()
    else:
        a = config.a
        system = tent_system(a, config.grid_n)
        cycle = tent_support_cycle(a)
        auto = sigma2_autocovariance(system.observable, system.map, system.transfer, cycle,
                                     J=config.truncation_J)
        body["autocov"] = auto.to_dict()
        support = [list(p) for p in cycle.as_pairs()]
        dyad = variance_profile_dyadic(system.observable, system.map, system.transfer,
                                       [[tuple(p) for p in support]], J=config.dyadic_levels)
        body["dyadic_series"] = dyad.to_dict()
        if a > SQRT2:
            body["resolvent"] = sigma2_resolvent(system.observable, system.transfer,
                                                 J=config.truncation_J).to_dict()
        else:
            base_sys = tent_system(squared_param(a), config.grid_n)
            base = sigma2_resolvent(base_sys.observable, base_sys.transfer,
                                    J=config.truncation_J)
            sigma = tent_sigma_recursion(a, base)
            body["recursion"] = {
                "sigma": sigma,
                "sigma2": sigma * sigma,
                "base_parameter": squared_param(a),
                "base": base.to_dict(),
            }
    _atomic_write(config.output_path + ".json", _json_payload(config, body))
    return 0


def cmd_simulate(config: RunConfig) -> int:
    config.validate()
    if config.map_spec == "three_branch":
        system = three_branch_system()
    else:
        system = tent_system(config.a, config.grid_n)
    inits = sample_from_density(system.density, config.paths, config.seed)
    t_grid = [0.25, 0.5, 1.0]
    sample = partial_sum_paths(system.map, system.observable, config.steps_n, t_grid,
                               inits, config.seed, init_sampler=system.name)
    sample.to_csv(config.output_path + ".csv")
    prof = variance_profile(system.components, system.observable, system.map, system.transfer,
                            J=config.truncation_J)
    reports = limit_law_check(sample, prof, inits)
    body = {
        "variance_profile": prof.to_dict(),
        "gof_reports": [r.to_dict() for r in reports],
        "marginal_variance": {
            repr(t): float(sample.paths[:, i].var(ddof=1)) for i, t in enumerate(t_grid)
        },
    }
    _atomic_write(config.output_path + ".json", _json_payload(config, body))
    return 0


def cmd_verify(config: RunConfig) -> int:
    from .acceptance import results_to_json, run_acceptance

    grid = config.grid_n if config.grid_n != RunConfig.grid_n else None
    results = run_acceptance(only=config.only, seed=config.seed, grid=grid)
    if config.output_path != RunConfig.output_path:
        _atomic_write(config.output_path + ".json",
                      results_to_json(results, config.seed) + "\n")
    return 0 if all(r.passed for r in results) else 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergclt",
                                description="Invariant densities and CLT diagnostics "
                                            "for piecewise-linear interval maps.")
    p.add_argument("--config", help="key=value file; flags take precedence")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("density", "variance", "simulate", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--map", dest="map_spec", choices=["tent", "three-branch"])
        sp.add_argument("--a", type=float)
        sp.add_argument("--grid", dest="grid_n", type=int)
        sp.add_argument("--steps", dest="steps_n", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trunc", dest="truncation_J", type=int)
        sp.add_argument("--out", dest="output_path")
        sp.add_argument("--format", choices=["csv", "json"])
        if name == "verify":
            sp.add_argument("--only", help="run only criteria whose name contains this string")
    return p


def _read_config_file(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(f, raw: str):
    if f.type == "int":
        return int(raw)
    if f.type == "float":
        return float(raw)
    return raw


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        by_name = {f.name: f for f in fields(RunConfig)}
        for key, raw in _read_config_file(args.config).items():
            if key not in by_name:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(by_name[key], raw))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    if cfg.map_spec == "three-branch":
        cfg.map_spec = "three_branch"
    return cfg


def main(argv=None) -> int:
    threads = os.environ.get("ERGCLT_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _resolve_config(args)
        handler = {
            "density": cmd_density,
            "variance": cmd_variance,
            "simulate": cmd_simulate,
            "verify": cmd_verify,
        }[args.command]
        return handler(config)
    except (ConvergenceError, DetectionError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
