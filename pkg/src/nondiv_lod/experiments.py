"""Convergence and localization studies with CSV / gnuplot output."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import sparse as sps
from .coeffs import CoefficientField, builtin_field, builtin_rhs, cordes_analyze
from .lod import CorrectorError, compute_basis, default_ell, solve_lod
from .mesh import refine, uniform_mesh
from .mixed_fem import Errors, FineSolution, assemble, discrete_errors, exact_errors, solve_fine
from .qoi import build_qois

log = logging.getLogger(__name__)

COMPARE_MODES = ("exact", "reference")
CSV_HEADER = ("H,ell,lod_l2,lod_h1,lod_h2,fem_l2,fem_h1,fem_h2,"
              "eoc_lod_l2,eoc_lod_h1,eoc_lod_h2,seconds")

# ε used by the desk-scale multiscale studies (full-scale values live in coeffs)
DESK_EPSILON = 2.0 ** -5
IDEAL_MATCH = 1e-9        # below this an ell-solution counts as the ideal one


class StudyError(RuntimeError):
    """A solver failure annotated with the (H, ell) it happened at."""

    def __init__(self, H: float, ell, cause: Exception):
        self.H, self.ell, self.cause = H, ell, cause
        super().__init__(f"H={H:g}, ell={ell}: {cause}")


@dataclass(frozen=True)
class StudySpec:
    field: str = "monoscale"
    rhs: str = "monoscale_exact"
    coarse_n: tuple = (2, 4, 8, 16)
    fine_n: int = 256
    ell: Optional[tuple] = None          # None: ceil(|log2 H|) per H
    epsilon: Optional[float] = None      # None: the field's default
    compare: str = "exact"
    out: Optional[str] = None

    @property
    def H(self) -> tuple:
        return tuple(1.0 / n for n in self.coarse_n)

    @property
    def is_localization(self) -> bool:
        """One coarse mesh with several radii is a localization sweep."""
        return self.ell is not None and len(self.coarse_n) == 1 and len(self.ell) > 1

    def ells(self) -> list:
        if self.ell is None:
            return [default_ell(1.0 / n) for n in self.coarse_n]
        return list(self.ell)

    def validate(self) -> "StudySpec":
        if not self.coarse_n:
            raise ValueError("coarse_n is empty")
        for n in (*self.coarse_n, self.fine_n):
            if int(n) != n or n < 1 or (int(n) & (int(n) - 1)):
                raise ValueError(f"mesh sizes must be powers of two, got {n}")
        for n in self.coarse_n:
            if n > self.fine_n:
                raise ValueError(f"coarse n={n} is finer than fine n={self.fine_n}")
        if self.compare not in COMPARE_MODES:
            raise ValueError(f"compare must be one of {COMPARE_MODES}, got {self.compare!r}")
        if self.ell is not None:
            if any(int(e) != e or e < 0 for e in self.ell):
                raise ValueError("ell values must be nonnegative integers")
            if not self.is_localization and len(self.ell) != len(self.coarse_n):
                raise ValueError("ell list must have one entry per coarse size")
            if self.is_localization and any(b <= a for a, b in zip(self.ell, self.ell[1:])):
                raise ValueError("ell list of a localization study must be increasing")
        if self.epsilon is not None:
            if self.epsilon <= 0:
                raise ValueError("epsilon must be positive")
            cells = Fraction(self.epsilon) / Fraction(2, self.fine_n)
            if cells.denominator != 1:
                raise ValueError(f"epsilon={Fraction(self.epsilon)} is not an integer multiple "
                                 f"of the fine cell side 2/{self.fine_n}")
        builtin_field(self.field, self.epsilon)
        _, exact = builtin_rhs(self.rhs)
        if self.compare == "exact" and exact is None:
            raise ValueError(f"right-hand side {self.rhs!r} has no exact solution; "
                             "use compare = reference")
        return self


# named desk-scale studies
STUDIES = {
    "monoscale": StudySpec(),
    "monoscale-fem": StudySpec(coarse_n=(2, 4, 8, 16, 32, 64), fine_n=64),
    "checkerboard": StudySpec("checkerboard", "multiscale", epsilon=DESK_EPSILON,
                              compare="reference"),
    "layered": StudySpec("layered", "multiscale", epsilon=DESK_EPSILON, compare="reference"),
    "localization": StudySpec(coarse_n=(8,), fine_n=64, ell=tuple(range(7)),
                              compare="reference"),
}

# full-scale ε; the fine mesh must resolve it, which makes these slow
FULL_SCALE = {
    "checkerboard": StudySpec("checkerboard", "multiscale", coarse_n=(2, 4, 8, 16, 32),
                              fine_n=1024, epsilon=2.0 ** -7, compare="reference"),
    "layered": StudySpec("layered", "multiscale", coarse_n=(2, 4, 8, 16, 32),
                         fine_n=1024, epsilon=2.0 ** -6, compare="reference"),
}


def named_study(name: str, full_scale: bool = False) -> StudySpec:
    table = FULL_SCALE if full_scale and name in FULL_SCALE else STUDIES
    if name not in table:
        raise KeyError(f"unknown study {name!r}; known: {', '.join(sorted(STUDIES))}")
    return table[name]


@dataclass
class ErrorRow:
    H: float
    ell: Optional[int]
    lod: Errors
    fem: Optional[Errors]
    seconds: float
    constraint_residual: float = 0.0


@dataclass
class ErrorReport:
    spec: StudySpec
    rows: list = dc_field(default_factory=list)

    def column(self, method: str, norm: str) -> np.ndarray:
        return np.array([getattr(getattr(r, method), norm) for r in self.rows])

    def rates(self, method: str = "lod", norm: str = "l2") -> list:
        """EOC between consecutive rows, computed as log(e_prev/e)/log(H_prev/H)."""
        e = self.column(method, norm)
        H = np.array([r.H for r in self.rows])
        return [math.log(e[k - 1] / e[k]) / math.log(H[k - 1] / H[k])
                if e[k - 1] > 0 and e[k] > 0 and H[k - 1] != H[k] else math.nan
                for k in range(1, len(e))]


def eoc(errors: Sequence[float], Hs: Sequence[float]) -> list:
    """rate_k = log2(e_{k-1} / e_k) for mesh sizes halving at every step."""
    errors = [float(e) for e in errors]
    Hs = [float(h) for h in Hs]
    if len(errors) != len(Hs) or len(errors) < 2:
        raise ValueError("need equal-length lists with at least two entries")
    if any(not e > 0 for e in errors):
        raise ValueError("errors must be positive")
    if any(not h > 0 for h in Hs):
        raise ValueError("mesh sizes must be positive")
    for a, b in zip(Hs, Hs[1:]):
        if not math.isclose(a, 2.0 * b, rel_tol=1e-12):
            raise ValueError("mesh sizes must halve at every step")
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


# -- study drivers ------------------------------------------------------------

def _setup(spec: StudySpec):
    field = builtin_field(spec.field, spec.epsilon)
    f, exact = builtin_rhs(spec.rhs)
    report = cordes_analyze(field)
    return field, f, exact, report.gamma


def _reference(spec: StudySpec, field: CoefficientField, f, gamma) -> FineSolution:
    return solve_fine(assemble(uniform_mesh(spec.fine_n), field, gamma, f))


def _errors(sol: FineSolution, spec: StudySpec, exact, reference) -> Errors:
    if spec.compare == "exact":
        return exact_errors(sol, exact)
    return discrete_errors(sol, reference)


def lod_solve(n: int, ell: Optional[int], fine_n: int, field: CoefficientField, f, gamma,
              threads: int = 1, cache_dir=None):
    """Assemble on the refinement of the n x n coarse mesh and run the LOD pipeline."""
    coarse = uniform_mesh(n)
    fine = refine(coarse, int(round(math.log2(fine_n // n))))
    system = assemble(fine, field, gamma, f)
    qois = build_qois(coarse, fine, system.dofmap)
    basis = compute_basis(ell, system, qois, threads=threads, cache_dir=cache_dir)
    return solve_lod(basis, system), qois


def run_convergence_study(spec: StudySpec, threads: int = 1, cache_dir=None,
                          progress: Optional[Callable[[ErrorRow], None]] = None) -> ErrorReport:
    """Coarse-mesh mixed FEM and LOD at ell(H) for every H, rows by decreasing H."""
    spec.validate()
    field, f, exact, gamma = _setup(spec)
    reference = _reference(spec, field, f, gamma) if spec.compare == "reference" else None
    out = ErrorReport(spec)
    for n, ell in sorted(zip(spec.coarse_n, spec.ells())):
        H = 1.0 / n
        t0 = time.perf_counter()
        try:
            fem = _errors(solve_fine(assemble(uniform_mesh(n), field, gamma, f)),
                          spec, exact, reference)
            lod, qois = lod_solve(n, ell, spec.fine_n, field, f, gamma, threads, cache_dir)
        except (sps.SingularMatrixError, CorrectorError) as exc:
            raise StudyError(H, ell, exc) from exc
        row = ErrorRow(H, ell, _errors(lod.solution, spec, exact, reference), fem,
                       time.perf_counter() - t0, lod.basis.constraint_residual(qois))
        log.info("H=%g ell=%s lod=%s fem=%s", H, ell, row.lod, row.fem)
        out.rows.append(row)
        if progress is not None:
            progress(row)
    return out


@dataclass
class LocalizationReport:
    spec: StudySpec
    rows: list                  # ErrorRow per ell, lod errors against the fine reference
    localization: list          # relative dof-norm distance to the ideal LOD solution
    against_ideal: list         # Errors of the ell-solution relative to the ideal LOD solution
    ideal: Errors               # ideal LOD errors against the fine reference
    slope: float                # fitted d log(H1 error vs ideal) / d ell before the floor

    def as_report(self) -> ErrorReport:
        return ErrorReport(self.spec, self.rows)


def fit_decay(ells: Sequence[int], errors: Sequence[float], floor: float = 1e-12) -> float:
    """Least-squares slope of log(error) against ell over the points above ``floor``."""
    pts = [(e, math.log(v)) for e, v in zip(ells, errors) if v > floor]
    if len(pts) < 2:
        return math.nan
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def run_localization_study(spec: StudySpec, threads: int = 1, cache_dir=None,
                           progress: Optional[Callable[[ErrorRow], None]] = None
                           ) -> LocalizationReport:
    """LOD at fixed H for increasing ell, compared with the fine FEM and the ideal LOD."""
    spec.validate()
    if len(spec.coarse_n) != 1:
        raise ValueError("a localization study has exactly one coarse size")
    n = spec.coarse_n[0]
    H = 1.0 / n
    ells = spec.ells()
    if any(b <= a for a, b in zip(ells, ells[1:])):
        raise ValueError("ell list must be increasing")
    field, f, exact, gamma = _setup(spec)
    reference = _reference(spec, field, f, gamma)
    try:
        ideal, _ = lod_solve(n, None, spec.fine_n, field, f, gamma, threads, cache_dir)
    except (sps.SingularMatrixError, CorrectorError) as exc:
        raise StudyError(H, None, exc) from exc
    ideal_norm = np.linalg.norm(ideal.dofs)
    rows, dist, vs_ideal = [], [], []
    for ell in ells:
        t0 = time.perf_counter()
        try:
            lod, qois = lod_solve(n, ell, spec.fine_n, field, f, gamma, threads, cache_dir)
        except (sps.SingularMatrixError, CorrectorError) as exc:
            raise StudyError(H, ell, exc) from exc
        row = ErrorRow(H, ell, discrete_errors(lod.solution, reference), None,
                       time.perf_counter() - t0, lod.basis.constraint_residual(qois))
        rows.append(row)
        dist.append(float(np.linalg.norm(lod.dofs - ideal.dofs) / ideal_norm))
        vs_ideal.append(discrete_errors(lod.solution, ideal.solution))
        if progress is not None:
            progress(row)
    ideal_err = discrete_errors(ideal.solution, reference)
    slope = fit_decay(ells, [e.h1 for e in vs_ideal], floor=IDEAL_MATCH)
    return LocalizationReport(spec, rows, dist, vs_ideal, ideal_err, slope)


# -- output -------------------------------------------------------------------

def _fmt(v) -> str:
    return "%.12e" % (math.nan if v is None else v)


def csv_text(report: ErrorReport, timings: bool = True) -> str:
    """CSV in the fixed column layout; ``timings=False`` writes 0 seconds for reproducibility."""
    lines = [CSV_HEADER]
    rates = {k: [math.nan] + report.rates("lod", k) for k in ("l2", "h1", "h2")}
    nan3 = Errors(math.nan, math.nan, math.nan)
    for k, r in enumerate(report.rows):
        fem = r.fem if r.fem is not None else nan3
        cells = [_fmt(r.H), "" if r.ell is None else str(r.ell),
                 *map(_fmt, r.lod), *map(_fmt, fem),
                 _fmt(rates["l2"][k]), _fmt(rates["h1"][k]), _fmt(rates["h2"][k]),
                 _fmt(r.seconds if timings else 0.0)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dat_files(report: ErrorReport, x: str = "H") -> dict:
    """One gnuplot two-column file per curve, keyed by curve name."""
    out = {}
    for method in ("lod", "fem"):
        for norm in ("l2", "h1", "h2"):
            pts = [(getattr(r, x), getattr(getattr(r, method), norm)) for r in report.rows
                   if getattr(r, method) is not None]
            if not pts:
                continue
            body = "".join(f"{_fmt(a)} {_fmt(b)}\n" for a, b in pts)
            out[f"{method}_{norm}"] = f"# {x} {method}_{norm}\n" + body
    return out


def write_report(report: ErrorReport, path, timings: bool = True, x: str = "H") -> list:
    """Write the CSV and its companion .dat curves; returns the written paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(report, timings))
    written = [path]
    for name, text in dat_files(report, x).items():
        p = path.with_name(f"{path.stem}_{name}.dat")
        p.write_text(text)
        written.append(p)
    return written


def default_output(spec: StudySpec, name: str = "study") -> Path:
    return Path(spec.out) if spec.out else Path("results") / f"{name}.csv"
