"""Constants and Monte Carlo checks for the a priori estimates.

The moment inequalities bound solution norms by data norms with constants
``d_p`` (explicit) and ``C_p`` (unspecified).  ``C_p`` is treated as a
multiplier: either configured, or fitted as the smallest value for which
the estimated margin clears a chosen number of standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidArgument

__all__ = [
    "PNormSettings",
    "AprioriResult",
    "lambda_p",
    "d_p",
    "smallness_advisory",
    "fit_multiplier",
    "check_apriori_Z",
    "check_apriori_pair",
]


@dataclass(frozen=True)
class PNormSettings:
    p: float
    K: float
    T: float

    def __post_init__(self):
        if not self.p > 1 or self.p == 2:
            raise InvalidArgument(f"p must lie in (1, 2) or (2, inf), got {self.p}")
        if not self.K >= 0 or not math.isfinite(self.K):
            raise InvalidArgument(f"K must be a finite nonnegative real, got {self.K}")
        if not self.T > 0:
            raise InvalidArgument(f"T must be positive, got {self.T}")


def lambda_p(p: float) -> float:
    """Moment constant appearing in ``d_p``; two branches around ``p = 2``."""
    if not p > 1 or p == 2:
        raise InvalidArgument(f"lambda_p defined for p in (1, 2) or (2, inf), got {p}")
    if p > 2:
        return (p / (p - 1)) ** (p * p / 2) * (p * (p - 1) / 2) ** (p / 2)
    return (4 / p) ** (p / 4) * 4 / (4 - p)


def _dp_denominator(s: PNormSettings) -> float:
    p, TK = s.p, s.T * s.K
    if p > 2:
        return 0.5 - 2 ** (p - 1) * TK ** (p / 2)
    return 0.5 - 2 ** (2 * p - 2) * TK ** (p / 2)


def d_p(settings: PNormSettings) -> Optional[float]:
    """Constant in front of ``E sup|Y|^p``; ``None`` when ``K, T`` are too large."""
    p, K, T = settings.p, settings.K, settings.T
    den = _dp_denominator(settings)
    if den <= 0:
        return None
    lead = 2 ** (3 * p / 2 - 2) if p > 2 else 2 ** (5 * p / 2 - 2)
    return lead / den * (K ** (p / 2) * (T + 1) ** (p / 2) + 2 ** (p / 2 - 1) * lambda_p(p) ** 2)


def smallness_advisory(settings: PNormSettings, q: float = 2.0, multiplier: float = 1.0) -> dict:
    """Executable reading of "K and T small enough".

    Reports ``d_p`` feasibility and the contraction surrogate
    ``K^(q/2) max(1, T^(q/2))``; the advisory holds when the surrogate
    times ``multiplier`` is below one.
    """
    if not q > 0 or multiplier < 0:
        raise InvalidArgument("q must be positive and the multiplier nonnegative")
    K, T = settings.K, settings.T
    contraction = K ** (q / 2) * max(1.0, T ** (q / 2))
    dp = d_p(settings)
    return {
        "p": settings.p,
        "q": q,
        "K": K,
        "T": T,
        "d_p": dp,
        "dp_feasible": dp is not None,
        "contraction": contraction,
        "multiplier": multiplier,
        "advisory": contraction * multiplier < 1,
    }


def _margin_ok(c: float, base, data, lhs, z: float) -> float:
    m = base + c * data - lhs
    return m.mean() - z * m.std(ddof=1) / math.sqrt(m.size)


def fit_multiplier(lhs, data, base=None, z: float = 3.0) -> float:
    """Smallest ``C >= 0`` with ``mean(m) >= z * se(m)`` for ``m = base + C data - lhs``."""
    lhs = np.asarray(lhs, dtype=float)
    data = np.asarray(data, dtype=float)
    base = np.zeros_like(lhs) if base is None else np.asarray(base, dtype=float)
    g = lambda c: _margin_ok(c, base, data, lhs, z)
    if g(0.0) >= 0:
        return 0.0
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
        if hi > 1e300:
            return math.inf
    c = brentq(g, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    while g(c) < 0:
        c = np.nextafter(c, math.inf)
    return float(c)


@dataclass
class AprioriResult:
    p: float
    lhs: float
    rhs: float
    margin: float
    stderr: float
    multiplier: float
    fitted_cp: float
    lhs_se: float = math.nan
    skipped: Optional[str] = None

    @property
    def margin_in_se(self) -> float:
        return self.margin / self.stderr if self.stderr > 0 else math.inf

    @classmethod
    def skipped_result(cls, p: float, reason: str) -> "AprioriResult":
        nan = math.nan
        return cls(p, nan, nan, nan, nan, nan, nan, skipped=reason)


def _moment_samples(solution, problem, settings: PNormSettings, ensemble):
    from .solver import terminal_values

    p = settings.p
    dt = problem.grid.dt
    xi = solution.xi if solution.xi is not None else terminal_values(problem, ensemble)
    Y, Z = solution.Y, solution.Z
    sup_y = np.linalg.norm(Y, axis=-1).max(axis=0) ** p
    z_q = (np.sum(Z ** 2, axis=(-2, -1)).sum(axis=0) * dt) ** (p / 2)
    f0 = np.asarray(problem.f_at_zero[:-1])
    data = np.linalg.norm(xi, axis=-1) ** p + (np.sum(f0 ** 2) * dt) ** (p / 2)
    return sup_y, z_q, data


def _check_preconditions(problem, settings) -> Optional[str]:
    if not problem.terminal.moment_finite(settings.p):
        return f"E|xi|^{settings.p:g} is infinite for this terminal condition"
    return None


def _result(p, lhs_s, base_s, data_s, cp, z, fitted) -> AprioriResult:
    M = lhs_s.size
    m = base_s + cp * data_s - lhs_s
    lhs = float(lhs_s.mean())
    return AprioriResult(p, lhs, float((base_s + cp * data_s).mean()), float(m.mean()),
                         float(m.std(ddof=1) / math.sqrt(M)), cp, fitted,
                         lhs_se=float(lhs_s.std(ddof=1) / math.sqrt(M)))


def check_apriori_Z(solution, problem, settings: PNormSettings, ensemble,
                    cp: Optional[float] = None, z: float = 3.0) -> AprioriResult:
    """``E (int |Z|^2)^(p/2)`` against ``d_p E sup|Y|^p + C_p E[|xi|^p + (int |f(.,0,0)|^2)^(p/2)]``.

    With ``cp=None`` the fitted multiplier is used for the margin.
    """
    reason = _check_preconditions(problem, settings)
    if reason:
        return AprioriResult.skipped_result(settings.p, reason)
    dp = d_p(settings)
    if dp is None:
        return AprioriResult.skipped_result(settings.p, "d_p infeasible: K and T too large")
    sup_y, z_q, data = _moment_samples(solution, problem, settings, ensemble)
    base = dp * sup_y
    fitted = fit_multiplier(z_q, data, base, z)
    return _result(settings.p, z_q, base, data, fitted if cp is None else cp, z, fitted)


def check_apriori_pair(solution, problem, settings: PNormSettings, ensemble,
                       cp: Optional[float] = None, z: float = 3.0) -> AprioriResult:
    """``E[sup|Y|^p + (int |Z|^2)^(p/2)]`` against ``C_p E[|xi|^p + (int |f(.,0,0)|^2)^(p/2)]``."""
    reason = _check_preconditions(problem, settings)
    if reason:
        return AprioriResult.skipped_result(settings.p, reason)
    sup_y, z_q, data = _moment_samples(solution, problem, settings, ensemble)
    lhs = sup_y + z_q
    base = np.zeros_like(lhs)
    fitted = fit_multiplier(lhs, data, None, z)
    return _result(settings.p, lhs, base, data, fitted if cp is None else cp, z, fitted)


def fit_over_suite(results: Iterable[AprioriResult]) -> float:
    """Largest fitted multiplier across scenarios (skipped ones ignored)."""
    vals = [r.fitted_cp for r in results if r.skipped is None]
    return max(vals) if vals else math.nan
