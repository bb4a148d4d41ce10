"""Typical-jump-scale functional equation.

The density estimates and all bridge asymptotics are organized around a
slowly varying function of the level, obtained as the unique root of

    y * f'(y) - f(y) + k(y) = ln(level)

for a correction term ``k`` drawn from a small closed family.  The GENERAL
variant is the one entering the density estimates; G_ZERO carries an extra
third-derivative correction used for the sharp dominant-order analysis; the
SIMPLIFIED variant is the algebraic reduction available for the pure power
family.  Everything works in ``log_lambda = ln(level)`` so that levels up to
``exp(1e6)`` are representable.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import PchipInterpolator

from .exponent import JumpExponent

__all__ = [
    "Variant",
    "CorrectionTerm",
    "EquationSpec",
    "ScaleSolution",
    "SolverDomainError",
    "simplified_constants",
    "asymptotic_scale_limit",
    "cancellation_defect",
    "limit_ratios",
    "sensitivity_gap",
]

RESIDUAL_REL_TOL = 1e-10
CACHE_RATIO = 1.05  # geometric node spacing in log_lambda


class SolverDomainError(ValueError):
    """Level below the solvability floor; carries the computed floor."""

    def __init__(self, log_lambda: float, floor: float):
        super().__init__(
            f"log_lambda={log_lambda!r} is below the solvability floor {floor!r}"
        )
        self.floor = floor


class Variant(Enum):
    SIMPLIFIED = "simplified"
    GENERAL = "general"
    G_ZERO = "g0"
    CUSTOM_K = "custom"


@dataclass(frozen=True)
class CorrectionTerm:
    """Correction ``k(y) = a*ln y + b*ln f''(y) + d*y*f'''(y)/f''(y) + const``."""

    a: float = 0.0
    b: float = 0.0
    d: float = 0.0
    const: float = 0.0

    def value(self, fun: JumpExponent, y):
        y = np.asarray(y, dtype=float)
        out = np.full_like(y, self.const)
        if self.a:
            out = out + self.a * np.log(y)
        if self.b or self.d:
            d2 = fun.derivative(y, 2)
            if self.b:
                out = out + self.b * np.log(d2)
            if self.d:
                out = out + self.d * y * fun.derivative(y, 3) / d2
        return out if out.ndim else float(out)

    def slope(self, fun: JumpExponent, y):
        """k'(y).  The d-term's slope is a central difference of the closed
        form (it vanishes identically for pure powers, and the family caps
        derivatives of the exponent at order three)."""
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        if self.a:
            out = out + self.a / y
        if self.b:
            out = out + self.b * fun.derivative(y, 3) / fun.derivative(y, 2)
        if self.d:
            if fun.is_pure_power:
                pass  # y*f'''/f'' is constant
            else:
                h = 1e-5 * np.maximum(y, 1.0)

                def ratio(v):
                    return v * fun.derivative(v, 3) / fun.derivative(v, 2)

                out = out + self.d * (ratio(y + h) - ratio(y - h)) / (2 * h)
        return out if out.ndim else float(out)


def simplified_constants(alpha: float, n: int) -> tuple[float, float, float]:
    """Constants of the reduced pure-power equation ``g**alpha + C1*ln g = C2 + C3*ln(level)``."""
    if not alpha > 1.0:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    c1 = (2.0 - (alpha - 2.0) * n) / (2.0 * (alpha - 1.0))
    c2 = (math.log(alpha - 1.0) + n * math.log(alpha) - n * math.log(2.0 * math.pi)) / (
        2.0 * (alpha - 1.0)
    )
    c3 = 1.0 / (alpha - 1.0)
    return c1, c2, c3


def asymptotic_scale_limit(alpha: float) -> float:
    """Limit of ``scale(level) / ln(level)**(1/alpha)``."""
    if not alpha > 1.0:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    return (alpha - 1.0) ** (-1.0 / alpha)


@dataclass(frozen=True)
class EquationSpec:
    """Which instance of the functional equation to solve."""

    fun: JumpExponent
    n: int = 1
    variant: Variant = Variant.GENERAL
    custom_k: CorrectionTerm | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if self.variant is Variant.CUSTOM_K and self.custom_k is None:
            raise ValueError("CUSTOM_K variant requires a custom_k term")
        if self.variant is Variant.SIMPLIFIED and not (
            self.fun.is_pure_power and self.fun.scale == 1.0 and self.fun.offset == 0.0
        ):
            raise ValueError(
                "SIMPLIFIED variant is the algebraic reduction for the plain "
                "x**alpha exponent (scale 1, no perturbation, no offset)"
            )

    def correction(self) -> CorrectionTerm:
        """The k-term of this variant (derivative-side constants folded in)."""
        alpha, n = self.fun.alpha, self.n
        base_const = 0.5 * n * math.log(2.0 * math.pi) + 0.5 * (n - 1) * math.log(alpha - 1.0)
        if self.variant is Variant.GENERAL:
            return CorrectionTerm(a=1.0, b=-0.5 * n, d=0.0, const=base_const)
        if self.variant is Variant.G_ZERO:
            return CorrectionTerm(a=1.0, b=-0.5 * n, d=0.5 * n, const=base_const)
        if self.variant is Variant.CUSTOM_K:
            return self.custom_k
        raise ValueError("SIMPLIFIED variant has no correction term")


class ScaleSolution:
    """Root table of one functional-equation instance.

    ``value(log_lambda)`` returns the unique root at level ``exp(log_lambda)``
    with residual below ``1e-10 * max(1, |rhs|)``.  Roots are cached on a
    geometric ``log_lambda`` ladder (ratio 1.05) and served through a
    monotone cubic interpolant when the interpolated root already meets the
    residual contract; otherwise the exact solve runs and the node is added.
    The cache is append-only behind a lock, so concurrent readers are safe.
    """

    def __init__(self, spec: EquationSpec):
        self.spec = spec
        self._lock = threading.Lock()
        self._nodes_x: list[float] = []  # log_lambda, sorted
        self._nodes_y: list[float] = []
        self._interp = None
        if spec.variant is Variant.SIMPLIFIED:
            self._c1, self._c2, self._c3 = simplified_constants(spec.fun.alpha, spec.n)
            self._k = None
        else:
            self._k = spec.correction()
        self.y_floor, self.log_lambda_floor = self._compute_floor()

    # ------------------------------------------------------------------
    # the two sides of the equation

    def lhs(self, y):
        fun = self.spec.fun
        y = np.asarray(y, dtype=float)
        if self.spec.variant is Variant.SIMPLIFIED:
            out = (y**fun.alpha + self._c1 * np.log(y) - self._c2) / self._c3
        else:
            out = y * fun.derivative(y, 1) - fun.value(y) + self._k.value(fun, y)
        return out if out.ndim else float(out)

    def lhs_slope(self, y):
        fun = self.spec.fun
        y = np.asarray(y, dtype=float)
        if self.spec.variant is Variant.SIMPLIFIED:
            out = (fun.alpha * y ** (fun.alpha - 1.0) + self._c1 / y) / self._c3
        else:
            out = y * fun.derivative(y, 2) + self._k.slope(fun, y)
        return out if out.ndim else float(out)

    def residual(self, log_lambda: float, y: float) -> float:
        return self.lhs(y) - log_lambda

    # ------------------------------------------------------------------

    def value(self, log_lambda: float) -> float:
        """Root at level ``exp(log_lambda)``; SolverDomainError below the floor."""
        if not np.isfinite(log_lambda):
            raise ValueError(f"log_lambda must be finite, got {log_lambda!r}")
        if log_lambda <= self.log_lambda_floor:
            raise SolverDomainError(log_lambda, self.log_lambda_floor)
        tol = RESIDUAL_REL_TOL * max(1.0, abs(log_lambda))
        hit = self._cache_lookup(log_lambda)
        if hit is not None and abs(self.residual(log_lambda, hit)) <= tol:
            return hit
        root = self._solve_exact(log_lambda)
        self._cache_insert(log_lambda, root)
        return root

    def values(self, log_lambdas) -> np.ndarray:
        return np.array([self.value(x) for x in np.atleast_1d(log_lambdas)])

    def slope_log(self, log_lambda: float) -> float:
        """d(root)/d(log_lambda), from implicit differentiation of the equation."""
        y = self.value(log_lambda)
        return 1.0 / self.lhs_slope(y)

    # ------------------------------------------------------------------
    # internal machinery

    def _compute_floor(self) -> tuple[float, float]:
        # first grid point from which the left side is increasing all the way
        # up, times a safety factor e^2
        lo = max(self.spec.fun.convexity_threshold, 1e-8)
        grid = np.geomspace(lo, 1e8, 3001)
        slope = self.lhs_slope(grid)
        bad = np.nonzero(~(slope > 0.0))[0]
        if bad.size and bad[-1] == grid.size - 1:
            raise ValueError("equation left side is not eventually increasing")
        y_min = grid[0] if bad.size == 0 else grid[bad[-1] + 1]
        y_floor = float(y_min * math.e**2)
        return y_floor, float(self.lhs(y_floor))

    def _bracket_high(self, log_lambda: float) -> float:
        fun = self.spec.fun
        guess = max(
            2.0 * self.y_floor,
            (max(log_lambda, 1.0) / (fun.scale * (fun.alpha - 1.0))) ** (1.0 / fun.alpha) * 2.0,
        )
        hi = guess
        for _ in range(200):
            if self.lhs(hi) >= log_lambda:
                return hi
            hi *= 2.0
        raise RuntimeError(f"failed to bracket the root for log_lambda={log_lambda!r}")

    def _solve_exact(self, log_lambda: float) -> float:
        lo = self.y_floor
        hi = self._bracket_high(log_lambda)
        flo = self.lhs(lo) - log_lambda
        # bisection to absolute width 1e-13 (scaled for large roots)
        width_tol = max(1e-13, 1e-15 * hi)
        while hi - lo > width_tol:
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            fmid = self.lhs(mid) - log_lambda
            if (fmid < 0.0) == (flo < 0.0):
                lo, flo = mid, fmid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        # Newton polish
        for _ in range(3):
            step = (self.lhs(root) - log_lambda) / self.lhs_slope(root)
            new = root - step
            if new > 0.0:
                root = new
        return float(root)

    def _cache_lookup(self, log_lambda: float) -> float | None:
        with self._lock:
            if len(self._nodes_x) < 4:
                return None
            if not (self._nodes_x[0] <= log_lambda <= self._nodes_x[-1]):
                return None
            if self._interp is None:
                self._interp = PchipInterpolator(self._nodes_x, self._nodes_y)
            return float(self._interp(log_lambda))

    def _cache_insert(self, log_lambda: float, root: float):
        with self._lock:
            xs = self._nodes_x
            i = np.searchsorted(xs, log_lambda)
            # keep geometric spacing: skip nodes too close to a neighbor
            if i > 0 and log_lambda < xs[i - 1] * CACHE_RATIO and xs[i - 1] > 0:
                return
            if i < len(xs) and xs[i] > 0 and log_lambda > xs[i] / CACHE_RATIO:
                return
            xs.insert(i, log_lambda)
            self._nodes_y.insert(i, root)
            self._interp = None


# ----------------------------------------------------------------------
# diagnostics of the solution family


def cancellation_defect(sol: ScaleSolution, log_lambda: float, y: float, gamma: float = 4.0) -> float:
    """Defect of the cancellation relation at level ratio ``y``.

    Returns ``scale(L) * [f'(scale(y*L)) - f'(scale(L))] - ln y`` for
    ``L = exp(log_lambda)``; exactly zero at ``y = 1``.  ``y`` must lie in
    the admissible window ``[log_lambda**-gamma, log_lambda**gamma]``.
    """
    if y <= 0.0:
        raise ValueError(f"y must be positive, got {y}")
    if log_lambda <= 1.0:
        raise ValueError("cancellation window needs log_lambda > 1")
    if not (log_lambda**-gamma <= y <= log_lambda**gamma):
        raise ValueError(
            f"y={y} outside the admissible window for log_lambda={log_lambda}, gamma={gamma}"
        )
    if y == 1.0:
        return 0.0
    fun = sol.spec.fun
    g0 = sol.value(log_lambda)
    g1 = sol.value(log_lambda + math.log(y))
    return g0 * (fun.derivative(g1, 1) - fun.derivative(g0, 1)) - math.log(y)


def limit_ratios(sol: ScaleSolution, log_lambda: float) -> dict[str, float]:
    """The four asymptotic ratios of the solution at one level.

    Targets as the level grows: ``1/alpha``, ``1/(alpha-1)``,
    ``alpha/(alpha-1)``, ``1``.
    """
    fun = sol.spec.fun
    g = sol.value(log_lambda)
    f = fun.value(g)
    fp = fun.derivative(g, 1)
    slope = sol.lhs_slope(g)
    return {
        "log_slope": log_lambda / (g * slope),  # scale'(L)*L*ln L / scale
        "exponent_over_log": f / log_lambda,
        "drift_over_log": g * fp / log_lambda,
        "legendre_over_log": (g * fp - f) / log_lambda,
    }


def sensitivity_gap(sol0: ScaleSolution, sol1: ScaleSolution, log_lambda: float) -> float:
    """Gap ``scale0 * (f'(scale0) - f'(scale1))`` between two correction terms.

    Converges to the limit of ``k1 - k0`` when the two equations differ only
    in their correction term.
    """
    if sol0.spec.fun != sol1.spec.fun or sol0.spec.n != sol1.spec.n:
        raise ValueError("specs must share the same exponent and dimension")
    fun = sol0.spec.fun
    g0 = sol0.value(log_lambda)
    g1 = sol1.value(log_lambda)
    return g0 * (fun.derivative(g0, 1) - fun.derivative(g1, 1))
