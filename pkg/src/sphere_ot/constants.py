"""Dimensional constants and hypothesis checks for the transport bounds.

The three constants are the root of ``w * exp(w) = 2``, and the two
dimension-dependent thresholds

    delta1(n) = Vol(S^{n-2}) / (n(n+1)(n+2)) * (2/pi)^{n+2} * J(n)
    delta2(n) = pi * Vol(S^n) * delta1(n)

with ``J(n)`` the integral of cos^{n+2} sin^{n-2} over a quarter period.
The checkers turn each sufficient condition into a signed margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .errors import DimensionTooSmall

_SIMPSON_TOL = 1e-13


@dataclass(frozen=True)
class HypothesisReport:
    """Outcome of one sufficient-condition check: lhs vs rhs with margin."""

    theorem_id: str
    lhs: float
    rhs: float
    margin: float
    satisfied: bool

    def as_dict(self) -> dict:
        return {
            "theorem": self.theorem_id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "satisfied": self.satisfied,
        }


@dataclass(frozen=True)
class TheoremConstants:
    """All constants for dimension n, with the sphere volume table."""

    n: int
    omega0: float
    delta1: float
    delta2: float
    thm11_threshold: float
    vol_sphere: tuple

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "omega0": self.omega0,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "thm11_threshold": self.thm11_threshold,
            "vol_sn": self.vol_sphere[self.n],
        }


@lru_cache(maxsize=1)
def omega0() -> float:
    """Unique positive root of ``w * exp(w) = 2``, by bisection."""
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if mid * math.exp(mid) < 2.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    assert abs(root * math.exp(root) - 2.0) < 1e-14
    return root


def sphere_volume(k: int) -> float:
    """Surface measure of S^k: ``2 pi^{(k+1)/2} / Gamma((k+1)/2)``."""
    if k < 0:
        raise DimensionTooSmall("sphere dimension must be nonnegative")
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def _simpson(f, a, fa, b, fb, fm):
    m = 0.5 * (a + b)
    return m, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adaptive_simpson(f, a, b, tol=_SIMPSON_TOL, depth=60, min_depth=6):
    """Classic adaptive Simpson with interval-halving error control.

    A mandatory minimum subdivision depth guards against the classic
    false-convergence of the first-level error estimate on symmetric
    integrands, whose half-interval errors can cancel exactly.
    """

    def recurse(a, fa, b, fb, fm, whole, tol, depth, forced):
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = f(lm)
        frm = f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        converged = abs(left + right - whole) <= 15.0 * tol and forced <= 0
        if depth <= 0 or converged:
            return left + right + (left + right - whole) / 15.0
        return recurse(
            a, fa, m, fm, flm, left, tol / 2.0, depth - 1, forced - 1
        ) + recurse(m, fm, b, fb, frm, right, tol / 2.0, depth - 1, forced - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return recurse(a, fa, b, fb, fm, whole, tol, depth, min_depth)


@lru_cache(maxsize=None)
def angular_integral(n: int) -> float:
    """Integral of cos^{n+2}(phi) sin^{n-2}(phi) over [0, pi/2]."""
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")

    def integrand(phi):
        return math.cos(phi) ** (n + 2) * math.sin(phi) ** (n - 2)

    return _adaptive_simpson(integrand, 0.0, 0.5 * math.pi)


@lru_cache(maxsize=None)
def delta1(n: int) -> float:
    """Displacement threshold constant for dimension n >= 2."""
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")
    return (
        sphere_volume(n - 2)
        / (n * (n + 1) * (n + 2))
        * (2.0 / math.pi) ** (n + 2)
        * angular_integral(n)
    )


@lru_cache(maxsize=None)
def delta2(n: int) -> float:
    """Sup-norm threshold constant, ``pi * Vol(S^n) * delta1(n)``."""
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")
    return (
        math.pi
        * sphere_volume(n - 2)
        * sphere_volume(n)
        / (n * (n + 1) * (n + 2))
        * (2.0 / math.pi) ** (n + 2)
        * angular_integral(n)
    )


def theorem_constants(n: int) -> TheoremConstants:
    """Bundle all constants for dimension n."""
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")
    return TheoremConstants(
        n=n,
        omega0=omega0(),
        delta1=delta1(n),
        delta2=delta2(n),
        thm11_threshold=(n - 1) * omega0() / math.pi,
        vol_sphere=tuple(sphere_volume(k) for k in range(n + 1)),
    )


def gradient_bound_from_values(density_ratio: float, grad_sum: float, n: int) -> float:
    """A-priori potential gradient bound from scalar inputs.

    ``density_ratio`` is max of the source density over min of the target
    density, ``grad_sum`` the summed sup norms of the two log-density
    gradients.  The bound is monotone in every argument; at the boundary
    inputs ``(exp((n-1) w0), (n-1) w0 / pi)`` it equals 2/pi exactly.
    """
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")
    return (1.0 / (n - 1)) * density_ratio ** (1.0 / (n - 1)) * grad_sum


def gradient_bound_thm41(f, g) -> float:
    """A-priori gradient bound evaluated on a pair of density fields."""
    ratio = math.exp(f.logrho.max() - g.logrho.min())
    grad_sum = f.sup_gradient_norm() + g.sup_gradient_norm()
    return gradient_bound_from_values(ratio, grad_sum, f.dim)


def wasserstein_gradient_bound(w2_squared: float, rho_min: float, n: int) -> float:
    """Displacement bound from the squared Wasserstein distance.

    Evaluates ``((1/rho_min) * n(n+1)(n+2) / Vol(S^{n-2}) / J(n) *
    W2^2)^{1/(n+2)}``; plugging in the threshold value
    ``rho_min * delta1(n)`` returns exactly 2/pi.
    """
    if n < 2:
        raise DimensionTooSmall("need dimension n >= 2")
    bracket = (
        (1.0 / rho_min)
        * n
        * (n + 1)
        * (n + 2)
        / sphere_volume(n - 2)
        / angular_integral(n)
        * w2_squared
    )
    return bracket ** (1.0 / (n + 2))


def check_thm11(f, g) -> HypothesisReport:
    """Strict smallness of summed log-density gradients.

    lhs is the summed sup of Riemannian gradient norms over the grid; the
    condition is strict, so a zero margin does not pass.
    """
    n = f.dim
    lhs = f.sup_gradient_norm() + g.sup_gradient_norm()
    rhs = (n - 1) * omega0() / math.pi
    return HypothesisReport(
        theorem_id="1.1", lhs=lhs, rhs=rhs, margin=rhs - lhs, satisfied=lhs < rhs
    )


def check_thm12(
    w2_squared: float, rho_min: float, rhobar_min: float, n: int
) -> HypothesisReport:
    """Squared Wasserstein distance against the delta1 threshold."""
    rhs = max(rho_min, rhobar_min) * delta1(n)
    return HypothesisReport(
        theorem_id="1.2",
        lhs=w2_squared,
        rhs=rhs,
        margin=rhs - w2_squared,
        satisfied=w2_squared <= rhs,
    )


def check_cor13(
    linf_gap: float, rho_min: float, rhobar_min: float, n: int
) -> HypothesisReport:
    """Sup-norm density gap against the delta2 threshold."""
    rhs = max(rho_min, rhobar_min) * delta2(n)
    return HypothesisReport(
        theorem_id="1.3",
        lhs=linf_gap,
        rhs=rhs,
        margin=rhs - linf_gap,
        satisfied=linf_gap <= rhs,
    )
