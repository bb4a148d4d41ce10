"""Parametric family of light-tailed jump exponents.

The jump measure of the process is ``exp(-f(|z|)) dz`` on R^n.  Everything
in this package works with the family

    f(x) = scale * x**alpha * (1 + beta / ln(e + x)) + offset

with index ``alpha > 1``.  The optional multiplicative log-perturbation
``beta`` exercises the non-pure-power behaviour while keeping all three
derivatives in closed form.  The additive ``offset`` is how a normalized
exponent (total jump mass one) is represented: ``normalized(n)`` returns a
copy with ``offset`` increased by ``ln(mass(n))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

__all__ = ["JumpExponent", "QuadratureError"]

_SPHERE_SURFACE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature fails to reach its tolerance."""


def _logarg(x):
    # argument of the perturbation logarithm, ln(e + x)
    return np.log(np.e + x)


@dataclass(frozen=True)
class JumpExponent:
    """Smooth jump exponent ``f(x) = scale * x**alpha * (1 + beta/ln(e+x)) + offset``.

    Parameters
    ----------
    alpha : float
        Regular-variation index, must exceed 1 (light tails with finite mass).
    scale : float
        Positive multiplier of ``x**alpha``.
    beta : float or None
        Optional log-perturbation strength.  ``None`` selects the pure power
        family, for which several downstream closed forms become available.
    floor : float
        Radius below which ``f`` is frozen at ``f(floor)``.  All asymptotics
        only see large ``x``; the constant extension keeps the jump measure
        finite near the origin.
    offset : float
        Additive constant.  Non-zero only for normalized copies.

    The instance is immutable and safe to share across threads.
    """

    alpha: float
    scale: float = 1.0
    beta: float | None = None
    floor: float = 0.0
    offset: float = 0.0
    convexity_threshold: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.floor < 0.0:
            raise ValueError(f"floor must be nonnegative, got {self.floor}")
        object.__setattr__(self, "convexity_threshold", self._find_convexity_threshold())

    # ------------------------------------------------------------------
    # evaluation

    @property
    def is_pure_power(self) -> bool:
        return self.beta is None

    def value(self, x):
        """Evaluate ``f(x)`` for ``x >= 0`` (scalar or array)."""
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, self.floor)
        if self.beta is None:
            out = self.scale * xe**self.alpha + self.offset
        else:
            out = self.scale * xe**self.alpha * (1.0 + self.beta / _logarg(xe)) + self.offset
        return out if out.ndim else float(out)

    def derivative(self, x, order: int):
        """Closed-form derivative of the family, ``order`` in {1, 2, 3}.

        Below ``floor`` the extension is constant, so every derivative is 0
        there.
        """
        if order not in (1, 2, 3):
            raise ValueError(f"derivative order must be 1, 2 or 3, got {order}")
        x = np.asarray(x, dtype=float)
        a, c = self.alpha, self.scale
        frozen = x < self.floor
        xe = np.where(frozen, np.maximum(self.floor, 1.0), x)

        if self.beta is None:
            if order == 1:
                out = c * a * xe ** (a - 1)
            elif order == 2:
                out = c * a * (a - 1) * xe ** (a - 2)
            else:
                out = c * a * (a - 1) * (a - 2) * xe ** (a - 3)
        else:
            b = self.beta
            w = np.e + xe
            el = np.log(w)
            v = 1.0 / el
            vp = -1.0 / (w * el**2)
            vpp = (el + 2.0) / (w**2 * el**3)
            vppp = -(2.0 * el**2 + 6.0 * el + 6.0) / (w**3 * el**4)
            p1 = a * xe ** (a - 1)
            p2 = a * (a - 1) * xe ** (a - 2)
            p3 = a * (a - 1) * (a - 2) * xe ** (a - 3)
            if order == 1:
                out = c * (p1 + b * (p1 * v + xe**a * vp))
            elif order == 2:
                out = c * (p2 + b * (p2 * v + 2 * p1 * vp + xe**a * vpp))
            else:
                out = c * (p3 + b * (p3 * v + 3 * p2 * vp + 3 * p1 * vpp + xe**a * vppp))
        out = np.where(frozen, 0.0, out)
        return out if out.ndim else float(out)

    # ------------------------------------------------------------------
    # jump measure mass and normalization

    def mass(self, n: int) -> float:
        """Total jump mass ``integral_{R^n} exp(-f(|z|)) dz`` by radial quadrature."""
        if n not in _SPHERE_SURFACE:
            raise ValueError(f"dimension must be 1, 2 or 3, got {n}")
        surf = _SPHERE_SURFACE[n]

        def integrand(r):
            return np.exp(-self.value(r)) * r ** (n - 1)

        # split at a few scale-relevant points so quad sees the structure
        r1 = max(1.0, self.floor)
        r2 = (50.0 / self.scale) ** (1.0 / self.alpha) + r1
        total = 0.0
        total_err = 0.0
        for lo, hi in ((0.0, r1), (r1, r2), (r2, np.inf)):
            val, err = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=400)
            total += val
            total_err += err
        if not np.isfinite(total) or total <= 0.0 or total_err > 1e-6 * total + 1e-10:
            raise QuadratureError(
                f"jump mass quadrature failed: value={total!r}, error estimate={total_err!r}"
            )
        return surf * total

    def normalized(self, n: int) -> "JumpExponent":
        """Copy with ``offset`` shifted so the jump measure has mass one in R^n."""
        return replace(self, offset=self.offset + math.log(self.mass(n)))

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "scale": self.scale,
            "beta": self.beta,
            "domain_floor": self.floor,
        }
        if self.offset != 0.0:
            d["offset"] = self.offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JumpExponent":
        return cls(
            alpha=float(d["alpha"]),
            scale=float(d.get("scale", 1.0)),
            beta=None if d.get("beta") is None else float(d["beta"]),
            floor=float(d.get("domain_floor", 0.0)),
            offset=float(d.get("offset", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "JumpExponent":
        return cls.from_dict(json.loads(s))

    # ------------------------------------------------------------------
    # internals

    def _find_convexity_threshold(self) -> float:
        # smallest radius from which f' and f'' stay positive (scanned on a
        # log grid; exact 0 for the unperturbed power family)
        if self.beta is None or self.beta >= 0.0:
            return float(self.floor)
        grid = np.logspace(-6, 8, 1401)
        d1 = self.derivative(grid, 1)
        d2 = self.derivative(grid, 2)
        good = (d1 > 0.0) & (d2 > 0.0)
        bad = np.nonzero(~good)[0]
        if bad.size == 0:
            return float(self.floor)
        if bad[-1] == grid.size - 1:
            raise ValueError("exponent is not eventually increasing and convex")
        return float(max(self.floor, grid[bad[-1] + 1]))
