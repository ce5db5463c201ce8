"""Command-line entry point: ``nondiv-lod {cordes,fem,lod,study}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex
from . import sparse as sps
from .coeffs import CordesError, FIELD_NAMES, RHS_NAMES, builtin_field, cordes_analyze
from .lod import CorrectorError, default_ell
from .mesh import uniform_mesh
from .mixed_fem import assemble, discrete_errors, exact_errors, solve_fine

CACHE_ENV = "NONDIV_LOD_CACHE_DIR"
DEFAULT_CACHE = ".nondiv_lod_cache"
CONFIG_KEYS = ("field", "rhs", "coarse_n", "fine_n", "ell", "epsilon", "compare", "out")


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    def __init__(self, path, lineno: Optional[int], msg: str):
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.lineno = lineno


# -- config files -------------------------------------------------------------

def _int_list(text: str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(t) for t in items)


def _epsilon(text: str) -> Optional[float]:
    text = text.strip()
    if text in ("", "default"):
        return None
    return float(Fraction(text))


def _config_value(key: str, text: str):
    if key in ("field", "rhs", "compare", "out"):
        if not text:
            raise ValueError("empty value")
        return text
    if key == "coarse_n":
        return _int_list(text)
    if key == "fine_n":
        return int(text)
    if key == "ell":
        return None if text in ("auto", "") else _int_list(text)
    if key == "epsilon":
        return _epsilon(text)
    raise KeyError(key)


def parse_config_text(text: str, path="<config>") -> ex.StudySpec:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(path, lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(path, lineno, f"unknown key {key!r}")
        if key in values:
            raise ConfigError(path, lineno, f"duplicate key {key!r}")
        try:
            values[key] = _config_value(key, value)
        except ValueError as exc:
            raise ConfigError(path, lineno, f"bad value for {key}: {exc}") from None
    spec = ex.StudySpec(**values)
    try:
        return spec.validate()
    except (ValueError, KeyError) as exc:
        raise ConfigError(path, None, str(exc).strip("'\"")) from None


def parse_config(path) -> ex.StudySpec:
    path = Path(path)
    return parse_config_text(path.read_text(), path)


def spec_to_config(spec: ex.StudySpec) -> str:
    lines = [f"field = {spec.field}", f"rhs = {spec.rhs}",
             "coarse_n = " + ",".join(str(n) for n in spec.coarse_n),
             f"fine_n = {spec.fine_n}",
             "ell = " + ("auto" if spec.ell is None else ",".join(str(e) for e in spec.ell)),
             "epsilon = " + ("default" if spec.epsilon is None else str(Fraction(spec.epsilon))),
             f"compare = {spec.compare}"]
    if spec.out is not None:
        lines.append(f"out = {spec.out}")
    return "\n".join(lines) + "\n"


# -- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _n_list(text: str) -> tuple:
    try:
        return _int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _eps_arg(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a number or fraction, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nondiv-lod",
                description="LOD multiscale solver for A:D^2u = f under the Cordes condition")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    c = sub.add_parser("cordes", help="print the Cordes analysis of a builtin coefficient")
    c.add_argument("field", choices=FIELD_NAMES)
    c.add_argument("--epsilon", type=_eps_arg)
    c.add_argument("--lam", type=float, help="shift for the lower-order case")

    def common(sp_):
        sp_.add_argument("--field", choices=FIELD_NAMES, default="monoscale")
        sp_.add_argument("--rhs", choices=RHS_NAMES)
        sp_.add_argument("--epsilon", type=_eps_arg)
        sp_.add_argument("--fine", type=int, help="fine cells per side")
        sp_.add_argument("--out", help="CSV output path")

    f = sub.add_parser("fem", help="mixed FEM baseline on one or more meshes")
    common(f)
    f.add_argument("--coarse", type=_n_list, default=(2, 4, 8, 16, 32, 64),
                   help="cells per side, comma separated")

    lo = sub.add_parser("lod", help="one LOD solve at a given coarse size and radius")
    common(lo)
    lo.add_argument("--coarse", type=int, default=8)
    lo.add_argument("--ell", type=int)
    lo.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    lo.add_argument("--no-cache", action="store_true")

    s = sub.add_parser("study", help="convergence or localization study (name or config file)")
    s.add_argument("study", help=f"one of {', '.join(sorted(ex.STUDIES))} or a config file")
    s.add_argument("--coarse", type=_n_list)
    s.add_argument("--fine", type=int)
    s.add_argument("--ell", type=_n_list)
    s.add_argument("--epsilon", type=_eps_arg)
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    s.add_argument("--no-cache", action="store_true")
    s.add_argument("--full-scale", action="store_true",
                   help="full-scale epsilon and fine mesh (slow)")
    s.add_argument("--no-timings", action="store_true",
                   help="write 0 in the seconds column for byte-reproducible CSV")
    return p


def _cache_dir(args) -> Optional[Path]:
    if getattr(args, "no_cache", False):
        return None
    return Path(os.environ.get(CACHE_ENV) or DEFAULT_CACHE)


def _default_rhs(field: str) -> str:
    return "monoscale_exact" if field == "monoscale" else "multiscale"


def _one_off_spec(args, coarse: tuple, ell=None) -> ex.StudySpec:
    rhs = args.rhs or _default_rhs(args.field)
    fine = args.fine or max(256, max(coarse))
    compare = "exact" if rhs == "monoscale_exact" else "reference"
    eps = args.epsilon
    if eps is None and args.field != "monoscale":
        eps = ex.DESK_EPSILON
    return ex.StudySpec(args.field, rhs, coarse, fine, ell, eps, compare, args.out).validate()


def _print_errors(label: str, H: float, ell, errs) -> None:
    tag = "" if ell is None else f" ell={ell}"
    print(f"{label} H={H:.6g}{tag} l2={errs.l2:.6e} h1={errs.h1:.6e} h2={errs.h2:.6e}")


def cmd_cordes(args) -> int:
    field = builtin_field(args.field, args.epsilon)
    print(f"{args.field}: {cordes_analyze(field, lam=args.lam).summary()}")
    return 0


def cmd_fem(args) -> int:
    spec = _one_off_spec(args, tuple(args.coarse))
    field, f, exact, gamma = ex._setup(spec)
    reference = ex._reference(spec, field, f, gamma) if spec.compare == "reference" else None
    report = ex.ErrorReport(spec)
    for n in sorted(spec.coarse_n):
        sol = solve_fine(assemble(uniform_mesh(n), field, gamma, f))
        errs = exact_errors(sol, exact) if reference is None else discrete_errors(sol, reference)
        _print_errors("fem", 1.0 / n, None, errs)
        report.rows.append(ex.ErrorRow(1.0 / n, None, errs, errs, 0.0))
    if spec.out:
        ex.write_report(report, spec.out, timings=False)
    return 0


def cmd_lod(args) -> int:
    ell = default_ell(1.0 / args.coarse) if args.ell is None else args.ell
    spec = _one_off_spec(args, (args.coarse,), (ell,))
    field, f, exact, gamma = ex._setup(spec)
    lod, qois = ex.lod_solve(args.coarse, ell, spec.fine_n, field, f, gamma,
                             args.threads, _cache_dir(args))
    if spec.compare == "exact":
        errs = exact_errors(lod.solution, exact)
    else:
        errs = discrete_errors(lod.solution, ex._reference(spec, field, f, gamma))
    _print_errors("lod", 1.0 / args.coarse, ell, errs)
    print(f"constraint_residual={lod.basis.constraint_residual(qois):.3e}")
    return 0


def _study_spec(args) -> tuple[ex.StudySpec, str]:
    path = Path(args.study)
    if args.study in ex.STUDIES:
        spec, name = ex.named_study(args.study, args.full_scale), args.study
    elif path.is_file():
        spec, name = parse_config(path), path.stem
    else:
        raise UsageError(f"unknown study {args.study!r} (not a study name or a config file)")
    overrides = {}
    if args.coarse is not None:
        overrides["coarse_n"] = args.coarse
        if spec.ell is not None and args.ell is None and not spec.is_localization:
            overrides["ell"] = None
    if args.fine is not None:
        overrides["fine_n"] = args.fine
    if args.ell is not None:
        overrides["ell"] = args.ell
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.out is not None:
        overrides["out"] = args.out
    spec = dataclasses.replace(spec, **overrides)
    try:
        spec.validate()
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    return spec, name


def cmd_study(args) -> int:
    spec, name = _study_spec(args)
    out = ex.default_output(spec, name)
    cache = _cache_dir(args)

    def progress(row):
        _print_errors("lod", row.H, row.ell, row.lod)
        if row.fem is not None:
            _print_errors("fem", row.H, None, row.fem)

    if spec.is_localization:
        rep = ex.run_localization_study(spec, args.threads, cache, progress)
        report = rep.as_report()
        written = ex.write_report(report, out, timings=not args.no_timings, x="ell")
        loc = out.with_name(f"{out.stem}_localization.dat")
        loc.write_text("# ell dof_distance_to_ideal h1_error_vs_ideal\n" + "".join(
            f"{r.ell} {ex._fmt(d)} {ex._fmt(e.h1)}\n"
            for r, d, e in zip(rep.rows, rep.localization, rep.against_ideal)))
        written.append(loc)
        print(f"fitted decay slope per ell: {rep.slope:.4f}")
    else:
        report = ex.run_convergence_study(spec, args.threads, cache, progress)
        written = ex.write_report(report, out, timings=not args.no_timings)
    for p in written:
        print(f"wrote {p}")
    return 0


COMMANDS = {"cordes": cmd_cordes, "fem": cmd_fem, "lod": cmd_lod, "study": cmd_study}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:            # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CordesError, ex.StudyError, CorrectorError, sps.SingularMatrixError) as exc:
        print(f"nondiv-lod: solver failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, KeyError, ValueError) as exc:
        print(f"nondiv-lod: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
