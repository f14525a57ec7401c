"""Main CLI entrypoint for the Edgeworth accountant."""
from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
import time
import tomllib
from pathlib import Path

import numpy as np
import pandas as pd

from .accountant import (
    AccountantRequest,
    Delta,
    Epsilon,
    Mode,
    parse_mode,
    SamplingRule,
    delta_at_epsilon,
    epsilon_at_delta,
    privacy_curve,
)
from .config import DEFAULT_GRID_SIZE, DEFAULT_SMOOTHING_EPS, SCHEMA_VERSION
from .errors import AccountantError, ConfigurationError, NumericalError
from .mechanisms import MechanismKind, mechanism_from_sigma

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# applied after flags and the config file
DEFAULTS = {
    "mechanism": MechanismKind.SUBSAMPLED_GAUSSIAN.value,
    "p": 1.0,
    "order": 1,
    "mode": Mode.AEA.value,
    "smoothing_eps": DEFAULT_SMOOTHING_EPS,
    "grid_size": DEFAULT_GRID_SIZE,
    "seed": 0,
    "p_rule": None,
}
DELTA_COLUMNS = ["m", "epsilon", "delta_lower", "delta_est", "delta_upper"]
EPSILON_COLUMNS = ["m", "eps_lower", "eps_est", "eps_upper"]


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def parse_m_grid(text: str) -> list[int]:
    """'start:stop:count' (log-spaced, rounded, deduplicated) or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            values = np.geomspace(float(start), float(stop), int(count))
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad --m-grid {text!r}: {exc}") from exc
    grid = sorted({int(round(v)) for v in values})
    if not grid:
        raise ConfigurationError("--m-grid is empty")
    if grid[0] < 1:
        raise ConfigurationError("--m-grid values must be >= 1")
    return grid


def load_config(path: str) -> dict:
    """TOML key = value pairs named like the long flags (dashes or underscores)."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return {key.replace("-", "_"): value for key, value in raw.items()}


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if args.config:
        for key, value in load_config(args.config).items():
            if key in ("command", "config") or not hasattr(args, key):
                raise ConfigurationError(f"unknown config key {key!r} for '{args.command}'")
            if getattr(args, key) is None:
                setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def _request_echo(args: argparse.Namespace, spec) -> dict:
    mode = parse_mode(args.mode)
    order = 0 if mode is Mode.CLT else int(args.order)
    echo = {
        "mechanism": spec.kind.value,
        "m": args.m if args.command != "curve" else args.m_grid,
        "p": spec.p if args.p_rule is None else args.p_rule,
        "sigma": _finite_or_none(spec.sigma),
        "mu": spec.mu,
        "order": order,
        # a CLT request is the order-0 AEA request
        "mode": Mode.AEA.value if mode is Mode.CLT else mode.value,
        "smoothing_eps": args.smoothing_eps,
        "seed": args.seed,
    }
    if args.command != "epsilon":
        echo["eps"] = args.eps
    if args.command != "delta":
        echo["delta"] = args.delta
    return echo


def _build_request(args: argparse.Namespace, m: int, target) -> tuple[AccountantRequest, object]:
    if m is None or int(m) < 1:
        raise ConfigurationError("--m must be an integer >= 1")
    spec = mechanism_from_sigma(args.mechanism, sigma=args.sigma, mu=args.mu, p=args.p)
    req = AccountantRequest(((spec, int(m)),), target, int(args.order), parse_mode(args.mode),
                            float(args.smoothing_eps), int(args.grid_size))
    return req, spec


def run_delta(args: argparse.Namespace) -> tuple[dict, list[str]]:
    if args.eps is None:
        raise ConfigurationError("--eps is required")
    req, spec = _build_request(args, args.m, Epsilon(float(args.eps)))
    point = delta_at_epsilon(req)
    rows = [{"m": req.m, "epsilon": point.epsilon, "delta_lower": point.delta_lower,
             "delta_est": point.delta_est, "delta_upper": point.delta_upper}]
    return {"request": _request_echo(args, spec), "results": rows}, []


def run_epsilon(args: argparse.Namespace) -> tuple[dict, list[str]]:
    if args.delta is None:
        raise ConfigurationError("--delta is required")
    req, spec = _build_request(args, args.m, Delta(float(args.delta)))
    est = epsilon_at_delta(req)
    diagnostics = []
    if est.eps_upper is not None and not math.isfinite(est.eps_upper):
        diagnostics.append("eps_upper is unbounded: the upper delta bound never drops below the target")
    rows = [{"m": req.m, "eps_lower": est.eps_lower, "eps_est": est.eps_est, "eps_upper": est.eps_upper}]
    return {"request": _request_echo(args, spec), "results": rows}, diagnostics


def run_curve(args: argparse.Namespace) -> tuple[dict, list[str]]:
    if args.m_grid is None:
        raise ConfigurationError("--m-grid is required")
    grid = parse_m_grid(str(args.m_grid))
    rule = None if args.p_rule is None else SamplingRule.parse(args.p_rule)
    if args.delta is not None:
        target = Delta(float(args.delta))
    elif args.eps is not None:
        target = Epsilon(float(args.eps))
    else:
        raise ConfigurationError("one of --delta or --eps is required")
    req, spec = _build_request(args, 1, target)
    points = privacy_curve(req, grid, rule, threads=args.threads)

    rows, diagnostics = [], []
    for point in points:
        if point.error is not None:
            diagnostics.append(f"m={point.m}: {point.error}")
        if isinstance(target, Delta):
            res = point.result
            rows.append({"m": point.m,
                         "eps_lower": None if res is None else res.eps_lower,
                         "eps_est": None if res is None else res.eps_est,
                         "eps_upper": None if res is None else res.eps_upper})
            if res is not None and res.eps_upper is not None and not math.isfinite(res.eps_upper):
                diagnostics.append(f"m={point.m}: eps_upper is unbounded")
        else:
            res = point.result
            rows.append({"m": point.m, "epsilon": target.value,
                         "delta_lower": None if res is None else res.delta_lower,
                         "delta_est": None if res is None else res.delta_est,
                         "delta_upper": None if res is None else res.delta_upper})
    return {"request": _request_echo(args, spec), "results": rows}, diagnostics


def render(record: dict, fmt: str) -> str:
    """JSON with a fixed key order and null for missing or non-finite numbers, or CSV of the results."""
    results = [{k: (_finite_or_none(v) if k != "m" else v) for k, v in row.items()} for row in record["results"]]
    if fmt == "csv":
        columns = EPSILON_COLUMNS if results and "eps_est" in results[0] else DELTA_COLUMNS
        buf = io.StringIO()
        pd.DataFrame(results, columns=columns).to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()
    ordered = {
        "schema_version": SCHEMA_VERSION,
        "request": record["request"],
        "results": results,
        "timing_ms": record["timing_ms"],
        "diagnostics": record["diagnostics"],
    }
    return json.dumps(ordered, allow_nan=False) + "\n"


def run(args: argparse.Namespace) -> str:
    """Execute one subcommand and return the rendered output."""
    args = _merge_config(args)
    started = time.perf_counter()
    handler = {"delta": run_delta, "epsilon": run_epsilon, "curve": run_curve}[args.command]
    record, diagnostics = handler(args)
    record["timing_ms"] = 0 if args.reproducible else int(round(1000 * (time.perf_counter() - started)))
    record["diagnostics"] = diagnostics
    for line in diagnostics:
        logger.warning(line)
    return render(record, args.format or ("csv" if args.command == "curve" else "json"))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mechanism", choices=[k.value for k in MechanismKind], help="Mechanism of every step")
    p.add_argument("--p", type=float, help="Subsampling probability (default 1)")
    p.add_argument("--sigma", type=float, help="Noise multiplier; mu = 1/sigma")
    p.add_argument("--mu", type=float, help="Noise shift (instead of --sigma)")
    p.add_argument("--order", type=int, choices=[0, 1, 2, 3], help="Edgeworth order (default 1)")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="aea | eeai | oracle | clt (default aea)")
    p.add_argument("--smoothing-eps", type=float, help="Smoothing parameter of the remainder, in (0, 1/3)")
    p.add_argument("--grid-size", type=int, help="FFT grid size for --mode oracle")
    p.add_argument("--seed", type=int, help="Seed echoed in the request record; every mode is deterministic")
    p.add_argument("--format", choices=["json", "csv"], help="Output format")
    p.add_argument("--out", help="Write output to PATH instead of stdout")
    p.add_argument("--config", help="TOML file of flag values; command-line flags win")
    p.add_argument("--threads", type=int, help="Worker threads for curves (default EA_NUM_THREADS)")
    p.add_argument("--reproducible", action="store_true", help="Emit timing_ms = 0 for byte-stable output")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeworth-accountant",
                                description="Edgeworth accountant for compositions of (subsampled) noise mechanisms")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("delta", help="delta at a given epsilon")
    _add_common(d)
    d.add_argument("--m", type=int, help="Number of composed steps")
    d.add_argument("--eps", type=float, help="Privacy epsilon")
    d.set_defaults(delta=None, m_grid=None, p_rule=None)

    e = sub.add_parser("epsilon", help="epsilon at a given delta")
    _add_common(e)
    e.add_argument("--m", type=int, help="Number of composed steps")
    e.add_argument("--delta", type=float, help="Target delta in (0, 1)")
    e.set_defaults(eps=None, m_grid=None, p_rule=None)

    c = sub.add_parser("curve", help="epsilon (or delta) over a grid of m")
    _add_common(c)
    c.add_argument("--m-grid", help="start:stop:count (log-spaced) or a comma list")
    c.add_argument("--p-rule", help="fixed:<p> | c/sqrt(m) | c/sqrt(m*log m) | c*sqrt(log m/m)")
    c.add_argument("--delta", type=float, help="Target delta (epsilon curve)")
    c.add_argument("--eps", type=float, help="Target epsilon (delta curve)")
    c.set_defaults(m=None)
    return p


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        text = run(a)
    except (ConfigurationError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, AccountantError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if a.out:
        Path(a.out).write_text(text)
        logger.info("Saved → %s", a.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
