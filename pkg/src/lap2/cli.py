"""Command-line front end: ``lap2 {account,optimize,curve,walls,init,verify}``.

Records (account, optimize, init, verify) go to stdout as JSON and tables
(curve, walls) as CSV by default. Numbers are written in scientific
notation with a fixed number of significant digits so repeated runs are
byte-identical. Errors go to stderr as JSON.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 infeasible target.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from lap2.accountant import DEFAULT_LAMBDA_MAX, MECHANISMS, MODES, MechanismConfig
from lap2.budget import PrivacyPoint, account, invert_noise_for_epsilon, wall_diagnostics
from lap2.errors import DomainError, InfeasibleError, InvariantError, QuadratureError
from lap2.gaussian import GaussianVariant
from lap2.optimizer import SearchSpec, b_star_init, optimize_parameters, rho_star

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

FORMATS = ("json", "csv")
SEARCH_KEYS = tuple(f.name for f in dataclasses.fields(SearchSpec) if f.name != "lambda_max")
CURVE_HEADER = ("sweep_var", "epsilon", "delta", "noise_scale", "clip", "rho", "lambda_star")
WALLS_HEADER = ("q", "epsilon", "noise_gaussian", "noise_lap2", "w_r_gaussian", "w_r_lap2",
                "delta_g", "delta_l2", "left_wall_flag")


class ConfigError(Exception):
    """Bad flags or config file; maps to exit code 2."""


class Infeasible(Exception):
    """The requested target cannot be met; maps to exit code 3."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one command: mechanism, search box and output options."""

    mechanism: str = "lap2"
    clip: float = 1.0
    noise_scale: Optional[float] = None
    sampling_rate: float = 0.01
    steps: int = 1
    dim: int = 1
    delta: float = 1e-5
    lambda_max: int = DEFAULT_LAMBDA_MAX
    gaussian_variant: str = GaussianVariant.NORMALIZED.value
    mode: str = "auto"
    epsilon: Optional[float] = None
    search: Dict[str, Any] = field(default_factory=lambda: _search_dict(SearchSpec()))
    format: Optional[str] = None
    precision: int = 12
    seed: int = 0

    def mechanism_config(self, noise_scale: Optional[float] = None) -> MechanismConfig:
        noise = self.noise_scale if noise_scale is None else noise_scale
        if noise is None:
            raise ConfigError("noise_scale is required for this command")
        return MechanismConfig(self.mechanism, self.clip, noise, self.sampling_rate, self.steps,
                               self.dim, self.delta, self.lambda_max)

    def search_spec(self) -> SearchSpec:
        return SearchSpec(lambda_max=self.lambda_max, **self.search)

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["search"] = dict(self.search)
        return out


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))
_FLOAT_KEYS = ("clip", "noise_scale", "sampling_rate", "delta", "epsilon")
_INT_KEYS = ("steps", "dim", "lambda_max", "precision", "seed")


def _search_dict(spec: SearchSpec) -> Dict[str, Any]:
    return {k: getattr(spec, k) for k in SEARCH_KEYS}


def _as_float(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _as_int(key, value):
    if isinstance(value, bool):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def build_config(raw: Dict[str, Any]) -> RunConfig:
    """Validates a plain dict (config file contents merged with flags).

    Args:
        raw: Mapping with any subset of the RunConfig keys; ``search`` may be
            a partial mapping of search-box keys.

    Returns:
        A RunConfig with defaults filled in.

    Raises:
        ConfigError: an unknown key or an invalid value, named in the message.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None:
            if key in ("noise_scale", "epsilon", "format"):
                values[key] = None
                continue
            raise ConfigError(f"{key} must not be null")
        if key in _FLOAT_KEYS:
            values[key] = _as_float(key, value)
        elif key in _INT_KEYS:
            values[key] = _as_int(key, value)
        elif key == "search":
            values[key] = _build_search(value)
        elif not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        else:
            values[key] = value
    cfg = RunConfig(**values)
    _check_enum("mechanism", cfg.mechanism, MECHANISMS)
    _check_enum("mode", cfg.mode, MODES)
    _check_enum("gaussian_variant", cfg.gaussian_variant, tuple(v.value for v in GaussianVariant))
    if cfg.format is not None:
        _check_enum("format", cfg.format, FORMATS)
    if not 1 <= cfg.precision <= 17:
        raise ConfigError(f"precision must lie in [1, 17], got {cfg.precision}")
    if cfg.epsilon is not None and not (math.isfinite(cfg.epsilon) and cfg.epsilon > 0):
        raise ConfigError(f"epsilon must be a finite number > 0, got {cfg.epsilon}")
    try:
        cfg.mechanism_config(1.0 if cfg.noise_scale is None else cfg.noise_scale)
        cfg.search_spec()
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _build_search(value):
    if not isinstance(value, dict):
        raise ConfigError("search must be a JSON object")
    unknown = sorted(set(value) - set(SEARCH_KEYS))
    if unknown:
        raise ConfigError(f"unknown search key {unknown[0]!r}")
    out = _search_dict(SearchSpec())
    for key, v in value.items():
        if key == "c_steps":
            out[key] = _as_int("search.c_steps", v)
        elif key == "c_spacing":
            if not isinstance(v, str):
                raise ConfigError("search.c_spacing must be a string")
            out[key] = v
        elif key == "tau" and v is None:
            out[key] = None
        else:
            out[key] = _as_float(f"search.{key}", v)
    return out


def _check_enum(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {list(allowed)}, got {value!r}")


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# Serialization


def format_number(x, precision: int = 12) -> str:
    """Scientific notation with ``precision`` significant digits; inf/nan as words."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{precision - 1}e}"


def to_json(obj, precision: int = 12, indent: int = 0) -> str:
    """Deterministic JSON: floats via format_number, non-finite floats as strings."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        text = format_number(obj, precision)
        return text if math.isfinite(obj) else f'"{text}"'
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, precision, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + to_json(v, precision, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cell(value, precision):
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format_number(value, precision)


def to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]], precision: int = 12) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v, precision) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


@dataclass
class Output:
    """What a command produced: a single record or a table, plus its exit code."""

    record: Optional[Dict[str, Any]] = None
    header: Optional[Sequence[str]] = None
    rows: Optional[List[Sequence[Any]]] = None
    code: int = EXIT_OK


def render(out: Output, cfg: RunConfig, default_format: str) -> str:
    fmt = cfg.format or default_format
    effective = cfg.to_dict()
    if out.record is not None:
        if fmt == "csv":
            keys = [k for k in out.record if not isinstance(out.record[k], (dict, list))]
            return to_csv(keys, [[out.record[k] for k in keys]], cfg.precision)
        return to_json(dict(out.record, effective_config=effective), cfg.precision) + "\n"
    if fmt == "csv":
        return to_csv(out.header, out.rows, cfg.precision)
    table = {"columns": list(out.header),
             "rows": [[None if v is None else v for v in row] for row in out.rows],
             "effective_config": effective}
    return to_json(table, cfg.precision) + "\n"


# ---------------------------------------------------------------------------
# Commands


def _variant(cfg):
    return GaussianVariant(cfg.gaussian_variant)


def cmd_account(cfg: RunConfig, args) -> Output:
    mech = cfg.mechanism_config()
    rep = account(mech, mode=cfg.mode, variant=_variant(cfg))
    if not math.isfinite(rep.epsilon):
        raise Infeasible(f"epsilon is unbounded for this configuration (delta={cfg.delta})")
    return Output(record={
        "mechanism": rep.mechanism, "epsilon": rep.epsilon, "delta": rep.delta,
        "lambda_star": rep.lambda_star, "per_step_alpha": rep.per_step_alpha,
        "mode": rep.mode, "exact": rep.exact,
    })


def _require_epsilon(cfg):
    if cfg.epsilon is None:
        raise ConfigError("epsilon is required for this command")
    return cfg.epsilon


def cmd_optimize(cfg: RunConfig, args) -> Output:
    if cfg.mechanism != "lap2":
        raise ConfigError("optimize supports mechanism 'lap2' only")
    eps = _require_epsilon(cfg)
    res = optimize_parameters(cfg.steps, cfg.sampling_rate, cfg.dim, PrivacyPoint(eps, cfg.delta, None),
                              cfg.search_spec(), cfg.mode)
    return Output(record=dataclasses.asdict(res), code=EXIT_OK if res.feasible else EXIT_INFEASIBLE)


def cmd_init(cfg: RunConfig, args) -> Output:
    eps = _require_epsilon(cfg)
    return Output(record={
        "b_star": b_star_init(cfg.clip, eps, cfg.sampling_rate, cfg.steps, cfg.delta),
        "rho_star": rho_star(eps, cfg.sampling_rate, cfg.steps, cfg.delta),
    })


def parse_range(text: str, spacing: str) -> np.ndarray:
    """``"lo:hi:steps"`` to a grid, linear or logarithmic."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range must look like lo:hi:steps, got {text!r}")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"range must look like lo:hi:steps, got {text!r}") from None
    if steps < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"range needs lo <= hi and steps >= 1, got {text!r}")
    if steps == 1:
        return np.array([lo])
    if spacing == "log":
        if lo <= 0:
            raise ConfigError("logarithmic spacing needs lo > 0")
        return np.geomspace(lo, hi, steps)
    return np.linspace(lo, hi, steps)


def parse_list(text: str, name: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{name} must not be empty")
    return values


def cmd_curve(cfg: RunConfig, args) -> Output:
    if args.range is None:
        raise ConfigError("curve needs --range lo:hi:steps")
    grid = parse_range(args.range, args.spacing)
    variant = _variant(cfg)
    rows = []
    for value in grid:
        value = float(value)
        if args.sweep == "epsilon":
            spec = cfg.search_spec()
            mech = cfg.mechanism_config(1.0)
            try:
                noise = invert_noise_for_epsilon(mech, value, (spec.b_min, spec.b_max), spec.tau, cfg.mode,
                                                 epsilon_fn=lambda c: account(c, cfg.mode, variant=variant).epsilon)
            except InfeasibleError:
                rows.append([value, math.inf, cfg.delta, math.inf, cfg.clip, math.nan, None])
                continue
            mech = mech.replace(noise_scale=noise)
        elif args.sweep == "b":
            mech = cfg.mechanism_config(value)
        else:
            mech = cfg.mechanism_config().replace(clip=value)
        rep = account(mech, cfg.mode, variant=variant)
        rows.append([value, rep.epsilon, rep.delta, mech.noise_scale, mech.clip,
                     mech.clip / mech.noise_scale, rep.lambda_star])
    return Output(header=CURVE_HEADER, rows=rows)


def cmd_walls(cfg: RunConfig, args) -> Output:
    rates = parse_list(args.rates, "--rates")
    eps = parse_range(args.epsilons, "log")
    inverter = delta_fn = None
    if args.synthetic:
        # Test hook: noise = 1/epsilon for both mechanisms, no tail deltas.
        inverter = lambda mech, q, e: 1.0 / e  # noqa: E731
        delta_fn = lambda mech, q, e, noise: math.nan  # noqa: E731
    spec = cfg.search_spec()
    try:
        reports = wall_diagnostics(rates, eps, cfg.delta, cfg.dim, cfg.steps, cfg.clip, cfg.lambda_max,
                                   (spec.b_min, spec.b_max), spec.tau, cfg.mode, inverter, delta_fn)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    rows = []
    for rep in reports:
        for r in rep.rows:
            rows.append([rep.sampling_rate, r.epsilon, r.noise_gaussian, r.noise_lap2, r.w_r_gaussian,
                         r.w_r_lap2, r.delta_g, r.delta_l2, r.left_wall])
    return Output(header=WALLS_HEADER, rows=rows)


def _color(text, code, stream):
    if os.environ.get("NO_COLOR") is not None or not stream.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def cmd_verify(cfg: RunConfig, args) -> Output:
    from lap2.verification import run_suite, summary

    def progress(res):
        if res.report_only:
            tag = _color("INFO", "36", sys.stderr)
            line = f"{tag} {res.name}: {json.dumps(res.detail, sort_keys=True)}"
        else:
            tag = _color("PASS", "32", sys.stderr) if res.passed else _color("FAIL", "31", sys.stderr)
            line = f"{tag} {res.name}: max_error={format_number(res.max_error, 4)} " \
                   f"tolerance={format_number(res.tolerance, 4)}"
            if res.failing is not None:
                line += f" failing={json.dumps(res.failing, sort_keys=True)}"
        print(line, file=sys.stderr, flush=True)

    try:
        results = run_suite(args.suite, cfg.seed, progress)
    except QuadratureError as exc:
        print(f"{_color('FAIL', '31', sys.stderr)} oracle: {exc}", file=sys.stderr)
        return Output(record={"suite": args.suite, "seed": cfg.seed, "passed": False,
                              "error": str(exc)}, code=EXIT_VERIFY_FAILED)
    report = summary(results)
    return Output(record={"suite": args.suite, "seed": cfg.seed, **report},
                  code=EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED)


COMMANDS = {
    "account": (cmd_account, "json"),
    "optimize": (cmd_optimize, "json"),
    "curve": (cmd_curve, "csv"),
    "walls": (cmd_walls, "csv"),
    "init": (cmd_init, "json"),
    "verify": (cmd_verify, "json"),
}


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


_FLAG_KEYS = {
    "epsilon": float, "delta": float, "steps": int, "sampling_rate": float, "dim": int,
    "clip": float, "noise_scale": float, "lambda_max": int, "mechanism": str, "mode": str,
    "format": str, "seed": int, "precision": int, "gaussian_variant": str,
}
_SEARCH_FLAGS = {"c_min": float, "c_max": float, "c_steps": int, "c_spacing": str,
                 "b_min": float, "b_max": float, "tau": float}


def _add_common(p):
    for key, kind in {**_FLAG_KEYS, **_SEARCH_FLAGS}.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None)
    p.add_argument("--config", default=None, help="JSON config file; flags override its fields")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lap2", description="Privacy accounting for Laplace DP-SGD under l2 clipping.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name in ("account", "optimize", "init"):
        _add_common(sub.add_parser(name))
    p = sub.add_parser("curve")
    _add_common(p)
    p.add_argument("--sweep", choices=("epsilon", "b", "c"), default="b")
    p.add_argument("--range", default=None, help="lo:hi:steps")
    p.add_argument("--spacing", choices=("linear", "log"), default="linear")
    p = sub.add_parser("walls")
    _add_common(p)
    p.add_argument("--rates", default="1e-3,1e-2,1e-1")
    p.add_argument("--epsilons", default="0.25:8:6", help="lo:hi:steps, log-spaced")
    p.add_argument("--synthetic", action="store_true", help="inject noise = 1/epsilon")
    p = sub.add_parser("verify")
    _add_common(p)
    p.add_argument("--suite", choices=("fast", "full"), default="fast")
    return parser


def resolve_config(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    raw = dict(raw)
    for key in _FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    search = raw.get("search", {})
    if not isinstance(search, dict):
        raise ConfigError("search must be a JSON object")
    search = dict(search)
    for key in _SEARCH_FLAGS:
        value = getattr(args, key)
        if value is not None:
            search[key] = value
    if search or "search" in raw:
        raw["search"] = search
    return build_config(raw)


def _error(kind, message, code):
    print(to_json({"error": {"type": kind, "message": message, "exit_code": code}}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        handler, default_format = COMMANDS[args.command]
        out = handler(cfg, args)
    except ConfigError as exc:
        return _error("config_error", str(exc), EXIT_CONFIG)
    except DomainError as exc:
        return _error("domain_error", str(exc), EXIT_CONFIG)
    except (Infeasible, InfeasibleError) as exc:
        return _error("infeasible", str(exc), EXIT_INFEASIBLE)
    except InvariantError as exc:
        return _error("invariant_violation", str(exc), EXIT_INFEASIBLE)
    sys.stdout.write(render(out, cfg, default_format))
    sys.stdout.flush()
    return out.code


if __name__ == "__main__":
    sys.exit(main())
