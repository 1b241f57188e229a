"""Lévy measures on (0, inf) used as jump intensities.

Every measure must satisfy ``int (z^2 ^ z) pi(dz) < inf``. Each family exposes
its tail mass, partial moments, the Laplace-exponent integral
``int (exp(-lam z) - 1 + lam z) pi(dz)`` and inverse-CDF sampling of the
measure restricted to ``(eps, inf)``.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, special


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not converge; carries the error estimate."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (error estimate {residual:.3e})")
        self.residual = residual


def _quad(fun, lo, hi, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        kw = {"limit": 200, "epsabs": 1e-13, "epsrel": 1e-11}
        if points is not None and np.isfinite(hi):
            pts = [p for p in points if lo < p < hi]
            out = integrate.quad(fun, lo, hi, points=pts or None, full_output=1, **kw)
        else:
            out = integrate.quad(fun, lo, hi, full_output=1, **kw)
    value, abserr = out[0], out[1]
    if len(out) > 3 and abserr > 1e-7 * max(1.0, abs(value)):
        raise QuadratureError(f"quadrature on ({lo}, {hi}) did not converge", abserr)
    return value


class LevyMeasure:
    """Base class. Subclasses implement the interval functions below."""

    kind = "abstract"

    def tail(self, eps: float) -> float:
        """Mass of ``(eps, inf)``."""
        raise NotImplementedError

    def moment(self, k: int, lo: float = 0.0, hi: float = math.inf) -> float:
        """``int_(lo, hi] z^k pi(dz)``."""
        raise NotImplementedError

    def laplace_integral(self, lam: float, lo: float = 0.0) -> float:
        """``int_(lo, inf) (exp(-lam z) - 1 + lam z) pi(dz)``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int, eps: float) -> np.ndarray:
        """Draw ``size`` jump sizes from ``pi`` restricted to ``(eps, inf)``, normalised."""
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    def total_mass(self) -> float:
        return self.tail(0.0)

    def restrict(self, eps: float) -> "LevyMeasure":
        """The measure ``1_{z > eps} pi(dz)``."""
        if eps <= 0:
            return self
        return Restricted(self, eps)

    def check_integrability(self) -> None:
        small = self.moment(2, 0.0, 1.0)
        large = self.moment(1, 1.0, math.inf)
        if not (np.isfinite(small) and np.isfinite(large)):
            raise ValueError(f"{self.kind}: int (z^2 ^ z) pi(dz) is not finite")

    def describe(self) -> dict:
        return {"kind": self.kind}


class ZeroMeasure(LevyMeasure):
    kind = "zero"

    def tail(self, eps):
        return 0.0

    def moment(self, k, lo=0.0, hi=math.inf):
        return 0.0

    def laplace_integral(self, lam, lo=0.0):
        return 0.0

    def sample(self, rng, size, eps):
        if size:
            raise ValueError("cannot sample jumps from the zero measure")
        return np.empty(0)

    @property
    def is_zero(self):
        return True

    def restrict(self, eps):
        return self


class FiniteAtoms(LevyMeasure):
    """``sum_i m_i delta_{z_i}``."""

    kind = "atoms"

    def __init__(self, atoms):
        atoms = sorted((float(z), float(m)) for z, m in atoms)
        if not atoms:
            raise ValueError("FiniteAtoms needs at least one atom; use ZeroMeasure")
        for z, m in atoms:
            if not (z > 0 and m > 0 and np.isfinite(z) and np.isfinite(m)):
                raise ValueError(f"atom (z={z}, m={m}) must have z > 0 and m > 0")
        self.sizes = np.array([a[0] for a in atoms])
        self.masses = np.array([a[1] for a in atoms])

    def _sel(self, lo, hi):
        return (self.sizes > lo) & (self.sizes <= hi)

    def tail(self, eps):
        return float(self.masses[self.sizes > eps].sum())

    def moment(self, k, lo=0.0, hi=math.inf):
        s = self._sel(lo, hi)
        return float(np.sum(self.masses[s] * self.sizes[s] ** k))

    def laplace_integral(self, lam, lo=0.0):
        s = self.sizes > lo
        z = self.sizes[s]
        return float(np.sum(self.masses[s] * (np.expm1(-lam * z) + lam * z)))

    def sample(self, rng, size, eps):
        s = self.sizes > eps
        z, m = self.sizes[s], self.masses[s]
        if size and not len(z):
            raise ValueError(f"no atoms above eps={eps}")
        if not size:
            return np.empty(0)
        cdf = np.cumsum(m) / m.sum()
        return z[np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(z) - 1)]

    def describe(self):
        return {"kind": self.kind, "atoms": [[float(z), float(m)] for z, m in zip(self.sizes, self.masses)]}


class _DensityMeasure(LevyMeasure):
    """Measure with a density on ``(0, upper)``."""

    upper = math.inf

    def density(self, z):
        raise NotImplementedError

    def _breaks(self):
        return (1e-6, 1e-3, 1e-1, 1.0, 10.0)

    def tail(self, eps):
        if eps <= 0:
            return math.inf
        if eps >= self.upper:
            return 0.0
        return _quad(self.density, eps, self.upper, self._breaks())

    def moment(self, k, lo=0.0, hi=math.inf):
        hi = min(hi, self.upper)
        if hi <= lo:
            return 0.0
        return _quad(lambda z: z**k * self.density(z), lo, hi, self._breaks())

    def laplace_integral(self, lam, lo=0.0):
        if lam == 0:
            return 0.0

        def g(z):
            u = lam * z
            # expm1(-u) + u loses all digits for tiny u
            v = u * u * (0.5 - u / 6.0 + u * u / 24.0) if u < 1e-3 else math.expm1(-u) + u
            return v * self.density(z)

        return _quad(g, lo, self.upper, self._breaks())

    def _inverse_table(self, eps):
        cache = self.__dict__.setdefault("_tables", {})
        if eps not in cache:
            hi = self.upper if np.isfinite(self.upper) else eps * 1e7
            grid = np.geomspace(eps, hi, 4001)
            pieces = [_quad(self.density, a, b) for a, b in zip(grid[:-1], grid[1:])]
            cum = np.concatenate([[0.0], np.cumsum(pieces)])
            total = self.tail(eps)
            cache[eps] = (grid, cum, total)
        return cache[eps]

    def sample(self, rng, size, eps):
        if not size:
            return np.empty(0)
        grid, cum, total = self._inverse_table(eps)
        u = rng.random(size) * total
        out = np.interp(u, cum, np.log(grid))
        out = np.exp(out)
        beyond = u > cum[-1]
        if beyond.any():
            # mass above the table: exponential tail is negligible, clip to the top
            out[beyond] = grid[-1]
        return np.maximum(out, np.nextafter(eps, np.inf))


class TruncatedStable(_DensityMeasure):
    """``c z^{-1-a} dz`` on ``(0, cutoff)`` with ``1 < a < 2``."""

    kind = "stable"

    def __init__(self, index: float, scale: float, cutoff: float | None = None):
        if not 1.0 < index < 2.0:
            raise ValueError(f"stable index must lie in (1, 2), got {index}")
        if scale <= 0:
            raise ValueError("stable scale must be positive")
        if cutoff is not None and cutoff <= 0:
            raise ValueError("stable cutoff must be positive")
        self.index = float(index)
        self.scale = float(scale)
        self.cutoff = None if cutoff is None else float(cutoff)
        self.upper = math.inf if cutoff is None else float(cutoff)

    def density(self, z):
        return self.scale * z ** (-1.0 - self.index)

    def tail(self, eps):
        if eps <= 0:
            return math.inf
        if eps >= self.upper:
            return 0.0
        a, c = self.index, self.scale
        return c / a * (eps**-a - self.upper**-a)

    def moment(self, k, lo=0.0, hi=math.inf):
        a, c = self.index, self.scale
        hi = min(hi, self.upper)
        if hi <= lo:
            return 0.0
        p = k - a
        if p == 0:
            return c * (math.log(hi) - math.log(lo)) if lo > 0 and np.isfinite(hi) else math.inf
        if lo == 0 and p < 0:
            return math.inf
        if not np.isfinite(hi) and p > 0:
            return math.inf
        top = 0.0 if not np.isfinite(hi) else hi**p
        bottom = 0.0 if lo == 0 else lo**p
        return c / p * (top - bottom)

    def laplace_integral(self, lam, lo=0.0):
        if lam == 0:
            return 0.0
        if lo == 0 and self.cutoff is None:
            return self.scale * special.gamma(-self.index) * lam**self.index
        return super().laplace_integral(lam, lo)

    def sample(self, rng, size, eps):
        if not size:
            return np.empty(0)
        a = self.index
        top = 0.0 if self.cutoff is None else self.cutoff**-a
        u = rng.random(size)
        z = (eps**-a - u * (eps**-a - top)) ** (-1.0 / a)
        return np.maximum(z, np.nextafter(eps, np.inf))

    def describe(self):
        return {"kind": self.kind, "index": self.index, "scale": self.scale, "cutoff": self.cutoff}


class ExponentialDensity(_DensityMeasure):
    """Tempered density ``c z^{-1-p} exp(-rate z) dz`` with ``p < 2``."""

    kind = "exponential"

    def __init__(self, rate: float, scale: float, power: float = 0.0):
        if rate <= 0 or scale <= 0:
            raise ValueError("exponential density needs rate > 0 and scale > 0")
        if power >= 2:
            raise ValueError("power must be < 2 for int z^2 pi(dz) near 0 to be finite")
        self.rate = float(rate)
        self.scale = float(scale)
        self.power = float(power)

    def density(self, z):
        return self.scale * z ** (-1.0 - self.power) * math.exp(-self.rate * z)

    def _breaks(self):
        return tuple(b / self.rate for b in (1e-6, 1e-3, 1e-1, 1.0, 10.0))

    def tail(self, eps):
        if eps <= 0:
            return math.inf if self.power >= 0 else self.scale * self.rate**self.power * special.gamma(-self.power)
        return super().tail(eps)

    def moment(self, k, lo=0.0, hi=math.inf):
        p, c, r = self.power, self.scale, self.rate
        if lo == 0 and not np.isfinite(hi):
            s = k - p
            return c * special.gamma(s) / r**s if s > 0 else math.inf
        if lo == 0 and k - p <= 0:
            return math.inf
        return super().moment(k, lo, hi)

    def describe(self):
        return {"kind": self.kind, "rate": self.rate, "scale": self.scale, "power": self.power}


class Restricted(LevyMeasure):
    """``base`` restricted to ``(eps, inf)``."""

    def __init__(self, base: LevyMeasure, eps: float):
        self.base = base
        self.eps = float(eps)
        self.kind = f"{base.kind}|>{eps:g}"

    def tail(self, eps):
        return self.base.tail(max(eps, self.eps))

    def moment(self, k, lo=0.0, hi=math.inf):
        return self.base.moment(k, max(lo, self.eps), hi)

    def laplace_integral(self, lam, lo=0.0):
        return self.base.laplace_integral(lam, max(lo, self.eps))

    def sample(self, rng, size, eps):
        return self.base.sample(rng, size, max(eps, self.eps))

    def restrict(self, eps):
        return Restricted(self.base, max(eps, self.eps))

    def describe(self):
        return {"kind": "restricted", "eps": self.eps, "base": self.base.describe()}


def measure_from_dict(spec: dict) -> LevyMeasure:
    """Build a measure from the ``pi.*`` block of a config."""
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return ZeroMeasure()
    if kind == "atoms":
        return FiniteAtoms(spec["atoms"])
    if kind == "stable":
        m = TruncatedStable(spec["index"], spec["scale"], spec.get("cutoff"))
    elif kind == "exponential":
        m = ExponentialDensity(spec["rate"], spec["scale"], spec.get("power", 0.0))
    else:
        raise ValueError(f"unknown Lévy measure kind {kind!r}")
    m.check_integrability()
    return m
