"""Scalar special functions and bracketed root finding.

``exp_integral_e1`` and ``lambert_w0`` accept scalars or numpy arrays and
return the same shape; ``find_root`` is scalar only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

EULER_GAMMA = 0.57721566490153286061
_INV_E = math.exp(-1.0)

# Series below the crossover, continued fraction above. At x = 1 the series
# needs ~18 terms and the fraction ~35 iterations for full double accuracy.
_E1_CROSSOVER = 1.0
_E1_UNDERFLOW = 745.0


class RootFindingError(ArithmeticError):
    """Raised when a bracket is invalid or the search does not converge."""


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol_abs: float = 1e-12
    tol_rel: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.tol_abs <= 0 or self.tol_rel < 0:
            raise ValueError("tolerances must satisfy tol_abs > 0, tol_rel >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def _e1_series(x: np.ndarray) -> np.ndarray:
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for n in range(1, 60):
        term = term * (-x) / n
        contrib = term / n
        total -= contrib
        if np.all(np.abs(contrib) <= 1e-17 * np.abs(total)):
            break
    return -EULER_GAMMA - np.log(x) + total


def _e1_contfrac(x: np.ndarray) -> np.ndarray:
    # modified Lentz on E1(x) = e^-x / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...)))
    tiny = 1e-300
    b = x + 1.0
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 400):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if np.all(np.abs(delta - 1.0) <= 1e-16):
            break
    return h * np.exp(-x)


def exp_integral_e1(x):
    """Exponential integral E1(x) = int_x^inf e^-t / t dt for x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("exp_integral_e1 is defined for x > 0 only")
    out = np.zeros_like(arr)
    small = arr < _E1_CROSSOVER
    mid = (~small) & (arr < _E1_UNDERFLOW)
    if np.any(small):
        out[small] = _e1_series(arr[small])
    if np.any(mid):
        out[mid] = _e1_contfrac(arr[mid])
    if out.ndim == 0:
        return float(out)
    return out


def lambert_w0(x):
    """Principal branch of the Lambert W function, w * exp(w) = x, w >= -1."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < -_INV_E - 1e-15) or np.any(np.isnan(arr)):
        raise ValueError("lambert_w0 requires x >= -1/e")
    arr = np.maximum(arr, -_INV_E)

    # initial guesses: branch-point series near -1/e, log asymptotics for large x
    p = np.sqrt(np.maximum(2.0 * (math.e * arr + 1.0), 0.0))
    w = np.where(arr < -0.25, -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3,
                 np.log1p(np.maximum(arr, 0.0)))
    big = arr > 3.0
    if np.any(big):
        lx = np.log(arr[big])
        w[big] = lx - np.log(lx)

    # Halley iteration; the step is frozen at the branch point where w + 1 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(50):
            ew = np.exp(w)
            f = w * ew - arr
            wp1 = w + 1.0
            denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
            step = np.where(np.abs(wp1) > 1e-10, f / denom, 0.0)
            w = w - step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(w))):
                break
    w = np.where(arr == -_INV_E, -1.0, w)
    if w.ndim == 0:
        return float(w)
    return w


def find_root(f: Callable[[float], float], bracket: RootBracket) -> float:
    """Root of a continuous function on a sign-changing bracket.

    Bisection with secant acceleration. A secant step that fails to halve
    the bracket forces a plain bisection on the next step, so the bisection
    convergence guarantee is kept.
    """
    lo, hi = float(bracket.lo), float(bracket.hi)
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise RootFindingError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")

    use_secant = True
    for _ in range(bracket.max_iter):
        width = hi - lo
        x = 0.5 * (lo + hi)
        if use_secant and fhi != flo:
            xs = hi - fhi * (hi - lo) / (fhi - flo)
            if lo < xs < hi:
                x = xs
        fx = f(x)
        if abs(fx) <= bracket.tol_abs:
            return x
        if (fx < 0) == (flo < 0):
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
        use_secant = (hi - lo) <= 0.5 * width
        if hi - lo <= bracket.tol_rel * abs(x) + bracket.tol_abs:
            return lo if abs(flo) < abs(fhi) else hi
    raise RootFindingError(
        f"no convergence after {bracket.max_iter} iterations, bracket [{lo}, {hi}]")
