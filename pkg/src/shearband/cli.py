"""Command-line front end.

Every subcommand reads its parameters from flags, optionally seeded by a flat
``key=value`` file given with ``--config`` (flags win). Outputs are written
atomically and carry the resolved configuration: a ``# key=value`` header for
CSV, a ``"config"`` field for JSON. Exit codes: 0 success, 1 invalid input,
2 numerical certificate failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dynamics as dyn
from .errors import CertificateError, DomainError, ShearbandError
from .heteroclinic import Controls, refine_orbit, asymptotics, shoot_heteroclinic
from .manifold import manifold_report
from .params import (
    ModelParams,
    derive_constants,
    lambda_from_initial_data,
    lambda_margin,
    lambda_upper_bound,
    validate_params,
)

log = logging.getLogger("shearband")

EXIT_OK, EXIT_DOMAIN, EXIT_CERTIFICATE, EXIT_IO = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
# namespace entries that are not part of the reproducible configuration
_META = ("command", "config", "handler", "names")


class UsageError(Exception):
    """Malformed command line or configuration file (exit 1)."""


class SweepFailed(CertificateError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- formatting


def fmt(x) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def parse_grid(text: str) -> np.ndarray:
    """``a:b:step`` (inclusive of b up to rounding) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must look like start:stop:step")
        a, b, h = (float(p) for p in parts)
        if not h > 0 or b < a:
            raise UsageError(f"grid {text!r} needs step > 0 and stop >= start")
        count = int(math.floor((b - a) / h + 1e-9)) + 1
        return a + h * np.arange(count)
    try:
        return np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc


# ------------------------------------------------------------------- config


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key=value`` file; blank lines and ``#`` comments are skipped.

    Keys are long flag names without the dashes (``lambda``, ``t-final``).
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def format_config(config: dict) -> str:
    lines = []
    for key, value in config.items():
        if value is None:
            continue
        text = fmt(value) if isinstance(value, (int, float, np.number)) else str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def resolved_config(args: argparse.Namespace) -> dict:
    """Subcommand plus every option value, keyed by flag name; feeds back into --config."""
    cfg = {"command": args.command}
    names = getattr(args, "names", {})
    for dest, value in vars(args).items():
        if dest not in _META:
            cfg[names.get(dest, dest)] = value
    return cfg


# -------------------------------------------------------------------- output


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(config: dict, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    for line in format_config(config).splitlines():
        buf.write(f"# {line}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue()


def json_text(config: dict, payload: dict) -> str:
    return json.dumps(_clean({"config": config, **payload}), indent=2) + "\n"


def emit(args, text: str, path: str | None = None) -> None:
    target = path if path is not None else args.out
    if target is None:
        sys.stdout.write(text)
    else:
        atomic_write(target, text)


# --------------------------------------------------------------- parameters


def _params(args) -> ModelParams:
    """(lambda, m, n) from the flags; lambda may come from (gamma0, u0)."""
    if args.m is None or args.n is None:
        raise UsageError("--m and --n are required")
    lam = getattr(args, "lam", None)
    g0, u0 = getattr(args, "gamma0", None), getattr(args, "u0", None)
    if lam is None:
        if g0 is None or u0 is None:
            raise UsageError("give --lambda, or both --gamma0 and --u0")
        lam = lambda_from_initial_data(g0, u0, args.m, args.n)
        args.lam = lam
    return validate_params(ModelParams(lam, args.m, args.n))


def _profile_data(args):
    from .profiles import build_profile

    params = _params(args)
    g0 = 1.0 if args.gamma0 is None else args.gamma0
    controls = Controls(rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    profile, orbit, asym = build_profile(
        params, g0, args.u0, refine=not args.no_refine, epsilon=args.epsilon, controls=controls
    )
    return params, profile, asym


# ------------------------------------------------------------------ commands


def cmd_constants(args) -> None:
    params = _params(args)
    payload = {
        "constants": derive_constants(params).as_dict(),
        "lambda_upper_bound": lambda_upper_bound(params.m, params.n),
        "lambda_margin": lambda_margin(params),
    }
    emit(args, json_text(resolved_config(args), payload))


def cmd_equilibria(args) -> None:
    params = _params(args)
    payload = {
        "spectral_gap_margin": dyn.spectral_gap_margin(params),
        "equilibria": [e.to_json() for e in dyn.equilibria(params)],
    }
    emit(args, json_text(resolved_config(args), payload))


def cmd_manifold_check(args) -> None:
    params = _params(args)
    report = manifold_report(params, args.r_bar, hyp_samples=args.samples)
    emit(args, json_text(resolved_config(args), report))


def _orbit_run(params, epsilon: float, controls: Controls, refine: bool):
    orbit, asym = shoot_heteroclinic(params, epsilon, controls)
    if refine:
        orbit, _ = refine_orbit(orbit)
        asym = asymptotics(orbit, params)
    return orbit, asym


def cmd_orbit(args) -> None:
    params = _params(args)
    controls = Controls(rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    orbit, asym = _orbit_run(params, args.epsilon, controls, args.refine)
    config = resolved_config(args)
    rows = zip(orbit.eta, *orbit.points)
    emit(args, csv_text(config, ("eta", "p", "q", "r"), rows))
    summary = {
        "kappa2_bar": asym.kappa2_bar,
        "eta0": asym.eta0,
        "landing_rate": asym.landing_rate,
        "end_distance": orbit.end_distance,
        "converged": orbit.converged,
    }
    if args.out is not None:
        atomic_write(Path(args.out).with_suffix(".json"), json_text(config, summary))
    log.info("orbit: %s", summary)


def cmd_profile(args) -> None:
    _, profile, asym = _profile_data(args)
    from .profiles import FIELDS

    rows = zip(profile.xi, *(getattr(profile, f) for f in FIELDS))
    emit(args, csv_text(resolved_config(args), ("xi",) + FIELDS, rows))
    log.info("profile: kappa2_bar=%r eta0=%r", asym.kappa2_bar, asym.eta0)


def cmd_field(args) -> None:
    from .profiles import self_similar_field

    _, profile, _ = _profile_data(args)
    xs, ts = parse_grid(args.x), parse_grid(args.t)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    f = self_similar_field(profile, X.ravel(), T.ravel())
    rows = zip(X.ravel(), T.ravel(), f["gamma"], f["v"], f["sigma"], f["u"])
    emit(args, csv_text(resolved_config(args), ("x", "t", "gamma", "v", "sigma", "u"), rows))


def cmd_pde_check(args) -> None:
    from .pde import run_cross_validation, uniform_shear_baseline

    params, profile, _ = _profile_data(args)
    config = resolved_config(args)
    stops = sorted(parse_grid(args.snapshots)) if args.snapshots else []
    if stops and args.out is None:
        raise UsageError("--snapshots needs --out to name the snapshot files")
    captured = []

    def keep(state, rates):
        captured.append((state, rates))

    cv = run_cross_validation(
        profile, args.t_final, L=args.L, nx=args.nx, snapshots=stops, on_snapshot=keep
    )
    baseline = uniform_shear_baseline(params, profile.Gamma0, args.t_final)
    report = cv.as_dict()
    log.info("pde-check: %d steps in %.2f s", cv.steps, report.pop("seconds"))
    payload = {"cross_validation": report, "uniform_shear_deviation": baseline}
    files = []
    for i, (state, rates) in enumerate(captured):
        path = Path(args.out).with_name(f"{Path(args.out).stem}.snapshot{i}.csv")
        snap_cfg = dict(config, snapshot_t=state.t)
        rows = zip(state.x, state.gamma, state.v, rates.u, rates.sigma)
        atomic_write(path, csv_text(snap_cfg, ("x", "gamma", "v", "u", "sigma"), rows))
        files.append({"t": state.t, "path": path.name})
    payload["snapshots"] = files
    emit(args, json_text(config, payload))


def _sweep_row(job: tuple[float, float, float, float, float, float, bool]) -> list:
    lam, m, n, epsilon, rtol, atol, refine = job
    try:
        params = validate_params(ModelParams(lam, m, n))
        orbit, asym = _orbit_run(params, epsilon, Controls(rel_tol=rtol, abs_tol=atol), refine)
        return [lam, asym.kappa2_bar, asym.landing_rate, orbit.end_distance, "ok"]
    except ShearbandError as exc:
        return [lam, math.nan, math.nan, math.nan, type(exc).__name__]


def cmd_sweep(args) -> None:
    if args.m is None or args.n is None:
        raise UsageError("--m and --n are required")
    lams = parse_grid(args.lambda_grid)
    jobs = [
        (float(l), args.m, args.n, args.epsilon, args.rel_tol, args.abs_tol, args.refine)
        for l in lams
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    header = ("lambda", "kappa2_bar", "landing_rate", "end_distance", "status")
    emit(args, csv_text(resolved_config(args), header, rows))
    if all(r[-1] != "ok" for r in rows):
        raise SweepFailed("no lambda in the grid produced an orbit")


# -------------------------------------------------------------------- parser


def _add_params(p, lam: bool = True) -> None:
    if lam:
        p.add_argument("--lambda", dest="lam", type=float, help="focusing rate")
    p.add_argument("--m", type=float, help="strain-softening exponent")
    p.add_argument("--n", type=float, help="strain-rate-hardening exponent")


def _add_orbit_controls(p, refine_default: bool) -> None:
    p.add_argument("--epsilon", type=float, default=1e-6, help="start distance from M0")
    p.add_argument("--rel-tol", type=float, default=Controls.rel_tol)
    p.add_argument("--abs-tol", type=float, default=Controls.abs_tol)
    if refine_default:
        p.add_argument("--no-refine", action="store_true", help="use the lifted orbit as is")
    else:
        p.add_argument("--refine", action="store_true", help="refine the orbit in 3D")


def _add_initial(p) -> None:
    p.add_argument("--gamma0", type=float, help="strain at the origin (default 1)")
    p.add_argument("--u0", type=float, help="strain rate at the origin")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shearband", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file; flags override it")
    parser.add_argument("--out", help="output path (stdout when omitted)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name: str, handler: Callable, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        p.add_argument("--out", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        p.set_defaults(handler=handler)
        return p

    p = command("constants", cmd_constants, "derived constants as JSON")
    _add_params(p)
    p = command("equilibria", cmd_equilibria, "equilibria and eigenvectors as JSON")
    _add_params(p)
    p = command("manifold-check", cmd_manifold_check, "slow-manifold certificates as JSON")
    _add_params(p)
    p.add_argument("--r-bar", type=float, help="triangle level (default: midpoint choice)")
    p.add_argument("--samples", type=int, default=1000, help="hypotenuse samples")
    p = command("orbit", cmd_orbit, "heteroclinic orbit as CSV plus JSON sidecar")
    _add_params(p)
    _add_orbit_controls(p, refine_default=False)
    p = command("profile", cmd_profile, "similarity profiles as CSV")
    _add_params(p)
    _add_initial(p)
    _add_orbit_controls(p, refine_default=True)
    p = command("field", cmd_field, "space-time fields as CSV")
    _add_params(p)
    _add_initial(p)
    _add_orbit_controls(p, refine_default=True)
    p.add_argument("--x", required=True, help="x grid, start:stop:step or a,b,c")
    p.add_argument("--t", required=True, help="t grid, start:stop:step or a,b,c")
    p = command("pde-check", cmd_pde_check, "direct PDE cross-validation as JSON")
    _add_params(p)
    _add_initial(p)
    _add_orbit_controls(p, refine_default=True)
    p.add_argument("--L", type=float, default=2.0, help="half-width of the domain")
    p.add_argument("--nx", type=int, default=2001, help="grid points (odd)")
    p.add_argument("--t-final", type=float, default=1.0)
    p.add_argument("--snapshots", help="times for CSV snapshots, start:stop:step or a,b,c")
    p = command("sweep", cmd_sweep, "orbit summaries over a lambda grid as CSV")
    _add_params(p, lam=False)
    _add_orbit_controls(p, refine_default=False)
    p.add_argument("--lambda-grid", required=True, help="start:stop:step")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _option_names(sub: argparse.ArgumentParser) -> dict[str, str]:
    """dest -> long flag name without dashes."""
    names = {}
    for action in sub._actions:
        longs = [o for o in action.option_strings if o.startswith("--")]
        if longs:
            names[action.dest] = longs[0][2:]
    return names


def parse(argv: Sequence[str]) -> argparse.Namespace:
    """Two passes: find the subcommand and config file, then reparse with file defaults."""
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    # required flags may come from the config file, so the first pass waives them
    required = [a for p in subs.values() for a in p._actions if a.required]
    for action in required:
        action.required = False
    args = parser.parse_args(argv)
    for action in required:
        action.required = True
    if args.command is None:
        raise UsageError("a subcommand is required")
    sub = subs[args.command]
    names = _option_names(sub)
    if args.config:
        values = read_config(args.config)
        command = values.pop("command", args.command)
        if command != args.command:
            raise UsageError(f"configuration is for {command!r}, not {args.command!r}")
        dests = {name: dest for dest, name in names.items() if dest not in _META}
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, text in values.items():
            dest = dests.get(key)
            if dest is None:
                raise UsageError(f"unknown configuration key {key!r} for {args.command}")
            action = actions[dest]
            if action.const is True:  # store_true
                defaults[dest] = text.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[dest] = (action.type or str)(text)
                except ValueError as exc:
                    raise UsageError(f"bad value {text!r} for {key!r}") from exc
        out = defaults.pop("out", None)
        sub.set_defaults(**defaults)
        if out is not None:
            parser.set_defaults(out=out)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    args = parser.parse_args(argv)
    args.names = names
    return args


def configure_logging() -> None:
    name = os.environ.get("SHEARBAND_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if name not in LOG_LEVELS:
        log.warning("SHEARBAND_LOG=%r not in %s; using error", name, sorted(LOG_LEVELS))


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        args.handler(args)
    except UsageError as exc:
        print(f"shearband: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (DomainError, ValueError) as exc:
        print(f"shearband: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ShearbandError as exc:
        print(f"shearband: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except OSError as exc:
        print(f"shearband: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    configure_logging()
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
