"""Coefficient fields, right-hand sides and the Cordes check.

All evaluators are vectorized: they take an array of points with trailing
dimension 2 and return arrays with the same leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

PointFn = Callable[[np.ndarray], np.ndarray]

CHECKERBOARD_EPSILON = 2.0 ** -7
LAYERED_EPSILON = 2.0 ** -6
DELTA_MARGIN = 1e-9


class CordesError(ValueError):
    """The sampled coefficients violate the Cordes condition."""


def _sign(x):
    # sign(0) := +1
    return np.where(x >= 0.0, 1.0, -1.0)


def _zero_vector(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape)


def _zero_scalar(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class CoefficientField:
    A: PointFn
    name: str = "custom"
    b: PointFn = _zero_vector
    c: PointFn = _zero_scalar
    epsilon: Optional[float] = None
    has_lower_order: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.A(np.asarray(x, dtype=float))

    def scaled(self, s: float) -> "CoefficientField":
        A = self.A
        return CoefficientField(lambda x: s * A(x), name=f"{s:g}*{self.name}",
                                b=self.b, c=self.c, epsilon=self.epsilon,
                                has_lower_order=self.has_lower_order)


def monoscale_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s = _sign(np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]))
    out = np.empty(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = 2.0
    out[..., 1, 1] = 2.0
    out[..., 0, 1] = s
    out[..., 1, 0] = s
    return out


def layered_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s, c = np.sin(np.pi * x[..., 1]), np.cos(np.pi * x[..., 1])
    out = np.empty(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0 + np.arcsin(s * s)
    out[..., 0, 1] = s * c
    out[..., 1, 0] = s * c
    out[..., 1, 1] = 2.0 + c * c
    return out


def builtin_field(name: str, epsilon: Optional[float] = None) -> CoefficientField:
    """The monoscale, checkerboard and layered coefficients of the experiments."""
    if name == "monoscale":
        return CoefficientField(monoscale_matrix, name=name)
    if name == "checkerboard":
        eps = CHECKERBOARD_EPSILON if epsilon is None else float(epsilon)
        return CoefficientField(lambda x: monoscale_matrix(np.asarray(x) / eps),
                                name=name, epsilon=eps)
    if name == "layered":
        eps = LAYERED_EPSILON if epsilon is None else float(epsilon)
        return CoefficientField(lambda x: layered_matrix(np.asarray(x) / eps),
                                name=name, epsilon=eps)
    raise KeyError(f"unknown coefficient field {name!r}")


FIELD_NAMES = ("monoscale", "checkerboard", "layered")
RHS_NAMES = ("monoscale_exact", "multiscale")


# -- right-hand sides ---------------------------------------------------------

def g(t):
    t = np.asarray(t, dtype=float)
    return t * (1.0 - np.exp(1.0 - np.abs(t)))


def dg(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(1.0 - np.abs(t))
    return 1.0 - e + np.abs(t) * e


def d2g(t):
    t = np.asarray(t, dtype=float)
    return _sign(t) * np.exp(1.0 - np.abs(t)) * (2.0 - np.abs(t))


@dataclass(frozen=True)
class ExactSolution:
    """Exact solution with its gradient (..., 2) and Hessian (..., 2, 2)."""
    u: PointFn
    grad: PointFn
    hess: PointFn


def _product_u(x):
    x = np.asarray(x, dtype=float)
    return g(x[..., 0]) * g(x[..., 1])


def _product_grad(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([dg(x1) * g(x2), g(x1) * dg(x2)], axis=-1)


def _product_hess(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    out = np.empty(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = d2g(x1) * g(x2)
    out[..., 0, 1] = out[..., 1, 0] = dg(x1) * dg(x2)
    out[..., 1, 1] = g(x1) * d2g(x2)
    return out


MONOSCALE_EXACT = ExactSolution(_product_u, _product_grad, _product_hess)


def builtin_rhs(name: str) -> tuple[PointFn, Optional[ExactSolution]]:
    if name == "monoscale_exact":
        def f(x):
            return np.einsum("...ij,...ij->...", monoscale_matrix(x), _product_hess(x))
        return f, MONOSCALE_EXACT
    if name == "multiscale":
        def f(x):
            x = np.asarray(x, dtype=float)
            x1, x2 = x[..., 0], x[..., 1]
            return (x1 + np.cos(3.0 * np.pi * x1)) * x2 ** 3
        return f, None
    raise KeyError(f"unknown right-hand side {name!r}")


# -- Cordes analysis ----------------------------------------------------------

@dataclass(frozen=True)
class CordesReport:
    case: str
    delta: float
    lam: float
    worst_ratio: float
    gamma: PointFn
    gamma_min: float
    gamma_max: float
    zeta1: float
    zeta2: float

    def summary(self) -> str:
        return (f"case={self.case} delta={self.delta:.6f} lambda={self.lam:g} "
                f"worst_ratio={self.worst_ratio:.6f} zeta1={self.zeta1:.6f} "
                f"zeta2={self.zeta2:.6f} gamma_min={self.gamma_min:.6f} "
                f"gamma_max={self.gamma_max:.6f}")


def default_samples(n: int = 512, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """Nodes and cell centres of an n x n tensor grid on [-1, 1]^2, plus extra points.

    Nodes catch extrema on dyadic lines (e.g. the layer lines of the layered field).
    """
    s = np.sort(np.concatenate([np.linspace(-1.0, 1.0, n + 1),
                                -1.0 + (np.arange(n) + 0.5) * (2.0 / n)]))
    x, y = np.meshgrid(s, s)
    pts = np.column_stack([x.ravel(), y.ravel()])
    if extra is not None:
        pts = np.vstack([pts, np.asarray(extra, dtype=float).reshape(-1, 2)])
    return pts


def _gamma_function(field: CoefficientField, lam: float) -> PointFn:
    if lam == 0.0:
        def gamma(x):
            A = field.A(x)
            return np.trace(A, axis1=-2, axis2=-1) / np.einsum("...ij,...ij->...", A, A)
        return gamma

    def gamma(x):
        A, b, c = field.A(x), field.b(x), field.c(x)
        num = np.trace(A, axis1=-2, axis2=-1) + c / lam
        den = (np.einsum("...ij,...ij->...", A, A)
               + np.einsum("...i,...i->...", b, b) / (2.0 * lam) + c * c / lam ** 2)
        return num / den
    return gamma


def cordes_analyze(field: CoefficientField, samples: Optional[np.ndarray] = None,
                   lam: Optional[float] = None) -> CordesReport:
    """Sample the Cordes ratio and report delta, gamma bounds and ellipticity."""
    x = default_samples() if samples is None else np.asarray(samples, dtype=float)
    n = 2
    A = field.A(x)
    if not np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-12):
        raise ValueError("coefficient matrix is not symmetric at some sample")
    tr = np.trace(A, axis1=-2, axis2=-1)
    if np.any(tr <= 0.0):
        raise CordesError("tr A <= 0 at some sample")
    fro2 = np.einsum("...ij,...ij->...", A, A)
    b, c = field.b(x), field.c(x)
    if np.any(c < 0.0):
        raise ValueError("c must be nonnegative")
    lower = bool(np.any(b != 0.0) or np.any(c != 0.0))
    eig = np.linalg.eigvalsh(A)

    if not lower:
        case, lam_used = "C1", 0.0
        ratio = fro2 / tr ** 2
        raw = np.min(1.0 / ratio) - (n - 1)
    else:
        if lam is None or lam <= 0.0:
            raise ValueError("lower-order terms present: a positive lambda is required")
        case, lam_used = "C2", float(lam)
        num = fro2 + np.einsum("...i,...i->...", b, b) / (2.0 * lam) + c * c / lam ** 2
        ratio = num / (tr + c / lam) ** 2
        raw = np.min(1.0 / ratio) - n
    if raw <= 0.0:
        raise CordesError(f"Cordes condition violated (raw delta {raw:.3e})")
    delta = min(raw - DELTA_MARGIN, 1.0 - DELTA_MARGIN)
    gamma = _gamma_function(field, lam_used)
    gv = gamma(x)
    if np.any(gv <= 0.0):
        raise CordesError("gamma is not positive at some sample")
    return CordesReport(case=case, delta=float(delta), lam=lam_used,
                        worst_ratio=float(ratio.max()), gamma=gamma,
                        gamma_min=float(gv.min()), gamma_max=float(gv.max()),
                        zeta1=float(eig[..., 0].min()), zeta2=float(eig[..., -1].max()))
