"""Command-line front end.

Usage: ``apsidal [--config FILE] <command> [options]``. Commands are
``timemap``, ``scan``, ``resonance``, ``nondegen``, ``schw limit``,
``schw scan``, ``bifurcate`` and ``orbit``.

Configuration file (TOML; unknown keys are rejected)::

    [model]
    family = "levi_civita"   # kepler | harmonic | homogeneous | logarithmic | schwarzschild | custom
    kappa = 1.0
    lambda = 0.1             # homogeneous: a; schwarzschild: M, E; custom: alpha, V, domain

    [perturbation]           # H_eps = H0 + epsilon * field
    kind = "hamiltonian"     # or "metric" with l11, l13, l33 in (r, theta)
    epsilon = 1e-3
    field = "-r*cos(theta)"  # a planar force +epsilon grad U is field = -U

    [quadrature]
    panels = 4               # initial Gauss-Legendre panels (16 nodes each)
    rtol = 1e-12

    [output]
    format = "json"          # csv for scan and orbit
    path = "out.json"

Exit codes: 0 success, 2 domain error, 3 convergence failure, 4 no periodic
orbit found. Numbers are written with 17 significant digits. Grid scans use
``APSIDAL_THREADS`` worker threads and keep row-major order.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from importlib import resources

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import jsonschema

from . import __version__, quad
from .actionangle import frequencies, isoenergetic_determinant
from .dynamics import bifurcate, integrate, parallel_map, section_lift
from .errors import ApsidalError, ConvergenceError, DomainError, StepOutsideDomain
from .model import PerturbationSpec, SystemSpec
from .schwarzschild import L_E, dense_resonance_scan, limit_dTheta_dL, limit_P
from .timemaps import default_bracket, nondegeneracy, resonance_find, time_maps, timemap_partials

EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_CONVERGENCE = 3
EXIT_NO_ORBIT = 4

_FAMILY_KEYS = {
    "levi_civita": {"kappa", "lambda"},
    "kepler": {"kappa"},
    "harmonic": {"kappa"},
    "homogeneous": {"kappa", "a"},
    "logarithmic": {"kappa"},
    "schwarzschild": {"M", "E"},
    "custom": {"alpha", "V", "domain"},
}


class UsageError(DomainError):
    """Invalid configuration or flags (exit code 2)."""


# -- formatting ------------------------------------------------------------------------------


def fmt(x) -> str:
    """17 significant digits; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """Serialise with :func:`fmt` for floats; non-finite floats become ``null``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def load_schema(name: str) -> dict:
    text = resources.files("apsidal").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def validate(obj, name: str) -> None:
    """Validate ``obj`` (after a JSON round trip) against a shipped schema."""
    jsonschema.validate(json.loads(to_json(obj)), load_schema(name))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue()


# -- configuration ----------------------------------------------------------------------------


def _schema_message(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        known = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - known)
        keys = ", ".join((path + "." if path else "") + k for k in extra)
        return f"unknown key {keys}"
    return f"{path or '<root>'}: {err.message}"


def load_config(path: str | None) -> dict:
    """Parse and validate a TOML configuration; an absent path gives ``{}``."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    except tomllib.TOMLDecodeError as err:
        raise UsageError(f"config {path}: {err}") from None
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    errors = sorted(jsonschema.Draft202012Validator(load_schema("config")).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise UsageError("config: " + _schema_message(errors[0]))
    model = cfg.get("model")
    if model is not None:
        fam = model["family"]
        extra = sorted(set(model) - {"family"} - _FAMILY_KEYS[fam])
        if extra:
            raise UsageError(f"config: key model.{extra[0]} does not apply to family {fam!r}")
    pert = cfg.get("perturbation")
    if pert is not None:
        allowed = {"kind", "epsilon"} | ({"field"} if pert["kind"] == "hamiltonian" else {"l11", "l13", "l33"})
        extra = sorted(set(pert) - allowed)
        if extra:
            raise UsageError(f"config: key perturbation.{extra[0]} does not apply to kind {pert['kind']!r}")
    return cfg


def build_spec(cfg: dict) -> SystemSpec:
    model = cfg.get("model")
    if model is None:
        raise UsageError("this command needs a [model] table (pass --config)")
    fam = model["family"]
    kappa = model.get("kappa", 1.0)
    if fam == "levi_civita":
        return SystemSpec.levi_civita(kappa, model.get("lambda", 0.0))
    if fam == "kepler":
        return SystemSpec.kepler(kappa)
    if fam == "harmonic":
        return SystemSpec.harmonic(kappa)
    if fam == "homogeneous":
        if "a" not in model:
            raise UsageError("config: model.a is required for the homogeneous family")
        return SystemSpec.homogeneous(kappa, model["a"])
    if fam == "logarithmic":
        return SystemSpec.logarithmic(kappa)
    if fam == "schwarzschild":
        return SystemSpec.schwarzschild(model.get("M", 1.0), model.get("E", 0.98))
    if "alpha" not in model or "V" not in model:
        raise UsageError("config: custom family needs model.alpha and model.V")
    return SystemSpec.custom(model["alpha"], model["V"], tuple(model.get("domain", (0.0, math.inf))))


def build_perturbation(cfg: dict, eps: float | None) -> PerturbationSpec:
    pert = cfg.get("perturbation")
    if pert is None:
        raise UsageError("this command needs a [perturbation] table (pass --config)")
    epsilon = pert.get("epsilon", 0.0) if eps is None else eps
    if pert["kind"] == "hamiltonian":
        return PerturbationSpec.hamiltonian(pert.get("field", "0"), epsilon)
    return PerturbationSpec.metric(pert.get("l11", "0"), pert.get("l13", "0"), pert.get("l33", "0"), epsilon)


def apply_quadrature(cfg: dict) -> None:
    q = cfg.get("quadrature", {})
    quad.configure(panels=q.get("panels"), rtol=q.get("rtol"), fail_rtol=q.get("fail_rtol"),
                   max_panels=q.get("max_panels"))


# -- flag parsing -----------------------------------------------------------------------------


def parse_range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from None
    return a, b


def parse_grid(text: str) -> tuple[int, int]:
    try:
        n, m = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}") from None
    if n < 1 or m < 1:
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return n, m


def parse_ratio(text: str) -> tuple[int, int]:
    try:
        p, q = (int(v) for v in text.split("/"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected p/q, got {text!r}") from None
    if p < 1 or q < 1:
        raise argparse.ArgumentTypeError("p and q must be positive")
    return p, q


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _check_L(L):
    if not L > 0:
        raise UsageError(f"angular momentum must satisfy L > 0 (got L={L})")


# -- commands ---------------------------------------------------------------------------------


def cmd_timemap(cfg, args):
    _require(args, "H", "L")
    _check_L(args.L)
    spec = build_spec(cfg)
    tm = time_maps(spec, args.H, args.L)
    out = {"H": tm.H, "L": tm.L, "T": tm.T, "Theta": tm.Theta, "Area": tm.Area, "P": tm.P}
    bars = dict(tm.errors)
    try:
        pt = timemap_partials(spec, args.H, args.L)
        out["partials"] = pt.as_dict()
        bars.update(pt.errors)
    except StepOutsideDomain as err:
        out["partials"] = None
        out["partials_note"] = str(err)
    out["error_bars"] = bars
    tp = tm.turning
    out["star_report"] = {"r_minus": tp.r_minus, "r_zero": tp.r_zero, "r_plus": tp.r_plus,
                          "star_ok": tp.star_ok, "conditions": tp.report["conditions"],
                          "notes": tp.report.get("notes", {})}
    return "timemap", out


def _scan_row(spec, H, L):
    if not L > 0:
        return [H, L, math.nan, math.nan, math.nan, "out_of_domain"]
    try:
        tm = time_maps(spec, H, L)
    except DomainError:
        return [H, L, math.nan, math.nan, math.nan, "out_of_domain"]
    except ConvergenceError:
        return [H, L, math.nan, math.nan, math.nan, "not_converged"]
    try:
        d = timemap_partials(spec, H, L).dTheta_dL
        status = "ok"
    except StepOutsideDomain:
        d, status = math.nan, "stencil_outside_domain"
    except ConvergenceError:
        d, status = math.nan, "partials_not_converged"
    return [H, L, tm.T, tm.Theta, d, status]


def cmd_scan(cfg, args):
    _require(args, "H_range", "L_range", "grid")
    spec = build_spec(cfg)
    n, m = args.grid
    Hs = np.linspace(*args.H_range, n) if n > 1 else np.array([args.H_range[0]])
    Ls = np.linspace(*args.L_range, m) if m > 1 else np.array([args.L_range[0]])
    cells = [(float(H), float(L)) for H in Hs for L in Ls]
    rows = parallel_map(lambda c: _scan_row(spec, *c), cells)
    header = ["H", "L", "T", "Theta", "dTheta_dL", "status"]
    return "scan", {"header": header, "rows": rows}


def cmd_resonance(cfg, args):
    _require(args, "H", "ratio")
    spec = build_spec(cfg)
    p, q = args.ratio
    bracket = args.L_range if args.L_range is not None else default_bracket(spec, args.H)
    res = resonance_find(spec, args.H, p, q, bracket)
    return "resonance", {"H": args.H, "p": res.p, "q": res.q, "L_star": res.L_star, "Theta": res.Theta,
                         "T": res.T, "minimal_period": res.minimal_period}


def cmd_nondegen(cfg, args):
    _require(args, "H", "L")
    _check_L(args.L)
    spec = build_spec(cfg)
    rep = nondegeneracy(spec, args.H, args.L)
    out = {"H": args.H, "L": args.L, **rep.as_dict()}
    if args.full:
        out["isoenergetic_determinant"] = isoenergetic_determinant(spec, args.H, args.L).as_dict()
        out["frequencies"] = frequencies(spec, args.H, args.L, args.n1).as_dict()
    return "nondegen", out


def cmd_schw(cfg, args):
    _require(args, "E")
    E, M = args.E, args.M
    out = {"E": E, "M": M, "L_E": L_E(E, M), "limit_P": limit_P(E, M), "limit_dTheta_dL": limit_dTheta_dL(E, M)}
    if args.schw_command == "scan":
        _require(args, "qmax")
        out["resonances"] = [
            {"L": e["L"], "p": e["p"], "q": e["q"], "dTheta_dL": e["dTheta_dL"],
             "dTheta_dL_error": e["dTheta_dL_error"], "verdict": e["verdict"], "flagged": e["flagged"]}
            for e in dense_resonance_scan(E, M, args.qmax)
        ]
    return "schw", out


def cmd_bifurcate(cfg, args):
    _require(args, "H", "ratio")
    spec = build_spec(cfg)
    pert = build_perturbation(cfg, args.eps)
    p, q = args.ratio
    res = bifurcate(spec, pert, args.H, p, q, seed_count=args.seeds, bracket=args.L_range)
    out = {
        "H_star": args.H, "p": p, "q": q, "L_star": res.L_star, "epsilon": res.epsilon,
        "continuum": bool(res.records) and all(r.class_tag == "parabolic" for r in res.records),
        "records": [r.as_dict() for r in res.records],
        "verification": [v.as_dict() for v in res.reports],
        "attempts": res.attempts,
    }
    return "bifurcate", out


def cmd_orbit(cfg, args):
    _require(args, "H", "L", "t_end")
    _check_L(args.L)
    spec = build_spec(cfg)
    pert = build_perturbation(cfg, args.eps) if "perturbation" in cfg else None
    state = section_lift(spec, pert, args.theta, args.L, args.H)
    traj = integrate(spec, pert, state, (0.0, args.t_end))
    header = ["t", "r", "theta", "p_r", "p_theta", "H_eps"]
    rows = [[t, *y, h] for t, y, h in zip(traj.t, traj.y, traj.H)]
    return "orbit", {"header": header, "rows": rows}


_TABULAR = {"scan", "orbit"}


def render(kind: str, out: dict, fmt_name: str) -> str:
    if kind in _TABULAR:
        if fmt_name == "json":
            return to_json([dict(zip(out["header"], row)) for row in out["rows"]]) + "\n"
        return csv_text(out["header"], out["rows"])
    if fmt_name == "csv":
        raise UsageError(f"command {kind} only writes JSON")
    validate(out, kind)
    return to_json(out) + "\n"


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a flag given before the command from being reset by the subparser
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path (default: stdout)")
    common.add_argument("--format", default=argparse.SUPPRESS, choices=("csv", "json"), help="output format")

    parser = argparse.ArgumentParser(prog="apsidal", description="Apsidal-angle time maps and periodic orbits.",
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common])

    p = add("timemap", "T, Theta, Area, P and partial derivatives at (H, L)")
    p.add_argument("--H", type=float)
    p.add_argument("--L", type=float)

    p = add("scan", "grid scan of T, Theta and dTheta/dL (CSV)")
    p.add_argument("--H-range", dest="H_range", type=parse_range)
    p.add_argument("--L-range", dest="L_range", type=parse_range)
    p.add_argument("--grid", type=parse_grid)

    p = add("resonance", "angular momentum with Theta = 2 pi p/q")
    p.add_argument("--H", type=float)
    p.add_argument("--ratio", type=parse_ratio)
    p.add_argument("--L-range", dest="L_range", type=parse_range)

    p = add("nondegen", "non-degeneracy verdicts at (H, L)")
    p.add_argument("--H", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--full", action="store_true", help="add the isoenergetic determinant and frequencies")
    p.add_argument("--n1", type=int, default=1, help="radial loops for tau_star (with --full)")

    p = add("schw", "Schwarzschild limits and resonance scan")
    schw_sub = p.add_subparsers(dest="schw_command", required=True)
    for name in ("limit", "scan"):
        s = schw_sub.add_parser(name, parents=[common])
        s.add_argument("--E", type=float)
        s.add_argument("--M", type=float, default=1.0)
        if name == "scan":
            s.add_argument("--qmax", type=int)

    p = add("bifurcate", "periodic orbits of the perturbed system at a resonance")
    p.add_argument("--H", type=float)
    p.add_argument("--ratio", type=parse_ratio)
    p.add_argument("--eps", type=float, help="override perturbation.epsilon (start of the halving ladder)")
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--L-range", dest="L_range", type=parse_range, help="bracket for the resonant L")

    p = add("orbit", "trajectory from the perihelion section (CSV)")
    p.add_argument("--H", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--eps", type=float)
    return parser


_COMMANDS = {
    "timemap": cmd_timemap, "scan": cmd_scan, "resonance": cmd_resonance, "nondegen": cmd_nondegen,
    "schw": cmd_schw, "bifurcate": cmd_bifurcate, "orbit": cmd_orbit,
}


_VALUE_FLAGS = {"--H", "--L", "--H-range", "--L-range", "--E", "--M", "--eps", "--theta", "--t-end"}


def _join_negative_values(argv):
    """Attach values such as ``-0.3:-0.2`` to their flag so argparse does not read them as options."""
    out, k = [], 0
    while k < len(argv):
        tok = argv[k]
        if tok in _VALUE_FLAGS and k + 1 < len(argv) and argv[k + 1].startswith("-"):
            out.append(f"{tok}={argv[k + 1]}")
            k += 2
            continue
        out.append(tok)
        k += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(list(sys.argv[1:] if argv is None else argv)))
    try:
        cfg = load_config(getattr(args, "config", None))
        apply_quadrature(cfg)
        kind, out = _COMMANDS[args.command](cfg, args)
        output = cfg.get("output", {})
        fmt_name = getattr(args, "format", None) or output.get("format") or ("csv" if kind in _TABULAR else "json")
        text = render(kind, out, fmt_name)
        path = getattr(args, "out", None) or output.get("path")
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except DomainError as err:
        print(f"apsidal: error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    except ConvergenceError as err:
        print(f"apsidal: error: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ApsidalError, ValueError) as err:
        print(f"apsidal: error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    if kind == "bifurcate" and not out["records"]:
        print("apsidal: no periodic orbit found after the epsilon ladder", file=sys.stderr)
        return EXIT_NO_ORBIT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
