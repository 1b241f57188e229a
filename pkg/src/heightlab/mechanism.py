"""Branching mechanism, its inverse, and interaction functions.

The mechanism is parameterised directly by the linear coefficient ``alpha``::

    psi(lam) = alpha*lam + beta*lam**2 + int (exp(-lam z) - 1 + lam z) pi(dz)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .measures import LevyMeasure, ZeroMeasure, measure_from_dict

_BISECT_ITERS = 80


@dataclass(frozen=True)
class Mechanism:
    """Triple ``(alpha, beta, pi)``.

    Parameters
    ----------
    alpha : float
        Linear drift coefficient; ``E X_1 = -alpha``.
    beta : float
        Diffusion coefficient, must be positive.
    pi : LevyMeasure
        Jump measure on ``(0, inf)``.
    recurrent : bool
        When set, ``alpha >= 0`` is enforced (X does not drift to +inf).
    """

    alpha: float
    beta: float
    pi: LevyMeasure = field(default_factory=ZeroMeasure)
    recurrent: bool = True

    def __post_init__(self):
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.recurrent and self.alpha < 0:
            raise ValueError(f"alpha={self.alpha} < 0 lets X drift to +inf; pass recurrent=False to allow it")

    def jump_rate(self, eps: float) -> float:
        return self.pi.tail(eps)

    def big_jump_mean(self, eps: float) -> float:
        """``int_(eps, inf) z pi(dz)``, the compensator of retained jumps."""
        return self.pi.moment(1, eps, math.inf)

    def small_jump_variance(self, eps: float) -> float:
        """``int_(0, eps] z^2 pi(dz)``."""
        return self.pi.moment(2, 0.0, eps)

    def truncated(self, eps: float) -> "Mechanism":
        return Mechanism(self.alpha, self.beta, self.pi.restrict(eps), self.recurrent)

    def describe(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "pi": self.pi.describe()}


def psi(mech: Mechanism, lam):
    """Evaluate the branching mechanism at ``lam >= 0`` (scalar or array)."""
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0):
        raise ValueError("psi is only defined for lambda >= 0")
    if arr.ndim == 0:
        x = float(arr)
        return mech.alpha * x + mech.beta * x * x + mech.pi.laplace_integral(x)
    out = np.array([mech.alpha * x + mech.beta * x * x + mech.pi.laplace_integral(x) for x in arr.ravel()])
    return out.reshape(arr.shape)


def phi(mech: Mechanism, u: float, tol: float = 1e-12) -> float:
    """Inverse of ``psi`` on ``[0, inf)`` by bisection on ``[0, sqrt(u/beta)]``."""
    if u < 0:
        raise ValueError("phi needs u >= 0")
    if mech.alpha < 0:
        raise ValueError("psi is not monotone on [0, inf) when alpha < 0")
    if u == 0:
        return 0.0
    lo, hi = 0.0, math.sqrt(u / mech.beta)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if psi(mech, mid) < u:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    resid = abs(psi(mech, lam) - u)
    if resid > max(tol, 1e-9) * max(1.0, u):
        raise ArithmeticError(f"phi({u}) bisection residual {resid:.3e}")
    return lam


# ---------------------------------------------------------------- interaction


def _gauss_integral(fun, lo, hi, n=16):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return half * float(np.dot(weights, fun(mid + half * nodes)))


class InteractionFn:
    """Interaction function ``f`` with ``f(0) = 0`` and ``f' <= theta``.

    Evaluators accept numpy arrays. ``b`` is the localisation threshold
    (``inf`` for functions whose derivative is already bounded).
    """

    def __init__(self, f: Callable, fprime: Callable, theta: float, b: float = math.inf,
                 kind: str = "custom", params: dict | None = None):
        self._f = f
        self._fprime = fprime
        self.theta = float(theta)
        self.b = float(b)
        self.kind = kind
        self.params = dict(params or {})
        if abs(float(self.f(0.0))) > 1e-12:
            raise ValueError("interaction function must satisfy f(0) = 0")
        probe = np.linspace(0.0, min(self.b, 50.0) if np.isfinite(self.b) else 50.0, 501)
        if np.any(self.fprime(probe) > self.theta + 1e-9):
            raise ValueError(f"f' exceeds theta={self.theta} on the probe grid")

    def f(self, z):
        return self._f(np.asarray(z, dtype=float))

    def fprime(self, z):
        return self._fprime(np.asarray(z, dtype=float))

    @property
    def bounded_derivative(self) -> bool:
        return self.kind == "linear" or self.params.get("localized", False)

    def fprime_table(self, upper: float, n: int = 4097):
        """Tabulate ``f'`` on ``[0, upper]`` for the simulation kernels."""
        grid = np.linspace(0.0, upper, n)
        return grid, np.asarray(self.fprime(grid), dtype=float)

    def describe(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "b": self.b, **self.params}

    # constructors

    @classmethod
    def linear(cls, alpha: float) -> "InteractionFn":
        """``f(z) = -alpha z``."""
        a = float(alpha)
        return cls(lambda z: -a * z, lambda z: np.full_like(z, -a, dtype=float), -a,
                   kind="linear", params={"alpha": a})

    @classmethod
    def logistic(cls, growth: float, competition: float, b: float = math.inf) -> "InteractionFn":
        """``f(z) = growth z - competition z^2``."""
        r, k = float(growth), float(competition)
        if k < 0:
            raise ValueError("competition must be nonnegative")
        fn = cls(lambda z: r * z - k * z * z, lambda z: r - 2.0 * k * z, r,
                 kind="logistic", params={"growth": r, "competition": k})
        return fn if not np.isfinite(b) else localize(fn, b)

    @classmethod
    def polynomial(cls, coeffs, b: float = math.inf) -> "InteractionFn":
        """``f(z) = sum_k coeffs[k] z^(k+1)``; theta is scanned on [0, max(b, 50)]."""
        c = np.concatenate([[0.0], np.asarray(coeffs, dtype=float)])
        poly = np.polynomial.Polynomial(c)
        d = poly.deriv()
        top = b if np.isfinite(b) else 50.0
        scan = np.linspace(0.0, top, 20001)
        theta = float(np.max(d(scan)))
        if len(c) > 2 and c[-1] > 0:
            raise ValueError("leading coefficient must be <= 0 so that f' is bounded above")
        fn = cls(poly, d, theta, kind="polynomial", params={"coeffs": [float(v) for v in c[1:]]})
        return fn if not np.isfinite(b) else localize(fn, b)

    @classmethod
    def from_table(cls, z, fprime_values, b: float = math.inf) -> "InteractionFn":
        """Piecewise-linear ``f'`` given at nodes ``z`` (starting at 0); held flat beyond."""
        z = np.asarray(z, dtype=float)
        fp = np.asarray(fprime_values, dtype=float)
        if z[0] != 0 or np.any(np.diff(z) <= 0) or len(z) != len(fp):
            raise ValueError("table nodes must start at 0 and increase strictly")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (fp[1:] + fp[:-1]) * np.diff(z))])

        def fprime(u):
            return np.interp(u, z, fp)

        def f(u):
            u = np.asarray(u, dtype=float)
            k = np.clip(np.searchsorted(z, u, side="right") - 1, 0, len(z) - 1)
            dz = u - z[k]
            slope = np.where(k < len(z) - 1, (fp[np.minimum(k + 1, len(z) - 1)] - fp[k])
                             / np.where(k < len(z) - 1, z[np.minimum(k + 1, len(z) - 1)] - z[k], 1.0), 0.0)
            return cum[k] + fp[k] * dz + 0.5 * slope * dz * dz

        fn = cls(f, fprime, float(fp.max()), kind="custom-table",
                 params={"z": z.tolist(), "fprime": fp.tolist(), "localized": True})
        return fn if not np.isfinite(b) else localize(fn, b)


def _taper(u, b):
    """1 on [0, b], cosine down to 0 on [b, b+1], 0 beyond."""
    s = np.clip(u - b, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * s))


def localize(fn: InteractionFn, b: float) -> InteractionFn:
    """Return ``f_b``: equal to ``f`` on ``[0, b]`` with bounded derivative.

    ``f_b'(u) = f'(b) + w(u) (f'(u) - f'(b))`` where ``w`` is a cosine taper on
    ``[b, b+1]``. Beyond ``b+1`` the derivative is frozen at ``f'(b)``, so
    ``f_b'`` stays below ``theta``.
    """
    if not b > 0:
        raise ValueError("localization threshold b must be positive")
    if not np.isfinite(b) or fn.kind == "linear":
        return fn
    b = float(b)
    fb_edge = float(fn.fprime(b))
    f_at_b = float(fn.f(b))

    def fprime_b(u):
        u = np.asarray(u, dtype=float)
        w = _taper(u, b)
        inner = fn.fprime(np.minimum(u, b + 1.0))
        return np.where(u <= b, fn.fprime(np.minimum(u, b)), fb_edge + w * (inner - fb_edge))

    blend_total = _gauss_integral(fprime_b, b, b + 1.0, 32)

    def f_b(u):
        u = np.asarray(u, dtype=float)
        out = np.array(fn.f(np.minimum(u, b)), dtype=float)
        over = u > b
        if np.any(over):
            uo = np.atleast_1d(u)[np.atleast_1d(over)]
            vals = np.empty_like(uo)
            for i, v in enumerate(uo):
                top = min(v, b + 1.0)
                vals[i] = f_at_b + _gauss_integral(fprime_b, b, top, 32)
                if v > b + 1.0:
                    vals[i] = f_at_b + blend_total + fb_edge * (v - b - 1.0)
            if out.ndim == 0:
                return vals[0]
            out[over] = vals
        return out

    params = dict(fn.params)
    params["localized"] = True
    return InteractionFn(f_b, fprime_b, fn.theta, b=b, kind=fn.kind, params=params)


def interaction_from_dict(spec: dict) -> InteractionFn:
    kind = spec.get("kind", "linear")
    b = float(spec.get("b", math.inf))
    if kind == "linear":
        return InteractionFn.linear(spec.get("alpha", 0.0))
    if kind == "logistic":
        return InteractionFn.logistic(spec.get("growth", 1.0), spec.get("competition", 1.0), b)
    if kind == "polynomial":
        return InteractionFn.polynomial(spec["coeffs"], b)
    if kind == "custom-table":
        return InteractionFn.from_table(spec["z"], spec["fprime"], b)
    raise ValueError(f"unknown interaction kind {kind!r}")


def mechanism_from_dict(spec: dict) -> Mechanism:
    return Mechanism(float(spec.get("alpha", 0.0)), float(spec["beta"]), measure_from_dict(spec.get("pi", {})),
                     bool(spec.get("recurrent", True)))


# ---------------------------------------------------------------- extinction


class Extinction(str, enum.Enum):
    EXTINCT = "ExtinctAS"
    NOT_EXTINCT = "NotExtinctAS"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


def extinction_criterion(fn: InteractionFn, beta: float, u_max: float = 1e8,
                         divergence: float = 1e6, points_per_decade: int = 200) -> Extinction:
    """Decide whether ``int_1^inf exp(-(1/beta) int_1^u f(r)/r dr) du`` diverges.

    Divergence (partial integral above ``divergence``) means extinction a.s.
    Convergence is certified when the integrand stays below ``u^-2`` over the
    last decade before ``u_max``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = int(points_per_decade * math.log10(u_max)) + 1
    grid = np.geomspace(1.0, u_max, n)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (grid[1:] + grid[:-1])
    half = 0.5 * (grid[1:] - grid[:-1])
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    vals = np.asarray(fn.f(pts.ravel()), dtype=float).reshape(pts.shape) / pts
    inner = np.concatenate([[0.0], np.cumsum(half * (vals @ weights))]) / beta
    log_g = -inner
    # trapezoid in log space
    seg = np.logaddexp(log_g[1:], log_g[:-1]) + np.log(0.5 * np.diff(grid))
    log_partial = np.logaddexp.accumulate(seg)
    if np.any(log_partial > math.log(divergence)):
        return Extinction.EXTINCT
    last = grid >= u_max / 10.0
    if np.all(log_g[last] < -2.0 * np.log(grid[last])):
        return Extinction.NOT_EXTINCT
    return Extinction.INCONCLUSIVE
