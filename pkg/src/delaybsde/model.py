"""Problem data: terminal conditions, delayed generators, market model.

A :class:`DelayedProblem` bundles everything the solver needs for

    Y(t) = xi + int_t^T f(s, Y_s, Z_s) ds - int_t^T Z(s) dW(s)

where ``Y_s, Z_s`` are the past segments read through a discrete delay
measure.  Assumption checks are empirical: declared constants are probed
with random segment pairs rather than analysed symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np
from scipy.special import log_ndtr, ndtr

from .delay_core import (
    Y_CHANNEL,
    Z_CHANNEL,
    DelayMeasure,
    SegmentFrame,
    TimeGrid,
    delay_average,
)
from .errors import InvalidArgument, NumericalFailure
from .stochastics import PathEnsemble, mean_stderr

__all__ = [
    "TerminalCondition",
    "GeneratorSpec",
    "DelayedProblem",
    "MarketModel",
    "ProbeResult",
    "PortfolioInsurance",
    "make_problem",
    "sample_terminal",
    "evaluate_generator",
    "check_lipschitz",
    "check_growth",
    "portfolio_insurance_problem",
    "pareto_tail_mean",
]

TERMINAL_KINDS = ("brownian", "abs_brownian", "uniform", "pareto", "constant",
                  "bounded", "insured")


@dataclass(frozen=True)
class TerminalCondition:
    """Integrable terminal value, a function of the path's ``W(T)``.

    Use the classmethod constructors; ``scale`` multiplies the sampled
    value (handy for homogeneity checks).
    """

    kind: str
    params: dict = field(default_factory=dict)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in TERMINAL_KINDS:
            raise InvalidArgument(f"unknown terminal kind {self.kind!r}")
        if self.kind == "pareto":
            a = self.params.get("tail_index")
            if a is None or not a > 1:
                raise InvalidArgument(
                    f"pareto tail index must exceed 1 for an integrable terminal value, got {a}")
            if not self.params.get("scale", 1.0) > 0:
                raise InvalidArgument("pareto scale must be positive")
        if self.kind == "uniform" and not self.params["high"] > self.params["low"]:
            raise InvalidArgument("uniform terminal needs high > low")

    @classmethod
    def brownian(cls, scale: float = 1.0) -> "TerminalCondition":
        return cls("brownian", {}, scale)

    @classmethod
    def abs_brownian(cls) -> "TerminalCondition":
        return cls("abs_brownian", {})

    @classmethod
    def constant(cls, value: float) -> "TerminalCondition":
        return cls("constant", {"value": float(value)})

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> "TerminalCondition":
        return cls("uniform", {"low": float(low), "high": float(high)})

    @classmethod
    def pareto(cls, tail_index: float, scale: float = 1.0) -> "TerminalCondition":
        return cls("pareto", {"tail_index": float(tail_index), "scale": float(scale)})

    @classmethod
    def bounded(cls, func: Callable[[np.ndarray], np.ndarray], bound: float) -> "TerminalCondition":
        """``func(W(T))`` with ``|func| <= bound``."""
        return cls("bounded", {"func": func, "bound": float(bound)})

    def scaled(self, c: float) -> "TerminalCondition":
        return replace(self, scale=self.scale * c)

    def ess_sup(self) -> float:
        """Essential supremum of the value (``inf`` when unbounded above)."""
        k, p = self.kind, self.params
        if k == "constant":
            v = p["value"] * self.scale
        elif k == "uniform":
            v = (p["high"] if self.scale >= 0 else p["low"]) * self.scale
        elif k == "bounded":
            v = p["bound"] * abs(self.scale)
        elif k == "insured":
            v = max(p["floor"], p["target"].ess_sup())
        elif k == "pareto" and self.scale < 0:
            v = -p["scale"] * abs(self.scale)
        else:
            v = math.inf
        return v

    def moment_finite(self, p: float) -> bool:
        """Whether ``E|xi|^p`` is finite."""
        if self.kind == "pareto":
            return p < self.params["tail_index"]
        if self.kind == "insured":
            return self.params["target"].moment_finite(p)
        return True


def sample_terminal(cond: TerminalCondition, ensemble: PathEnsemble, k: int = 1) -> np.ndarray:
    """One terminal draw per path, shape ``(M, k)``.

    Every kind is a deterministic function of the path's ``W(T)``; the
    Pareto kind maps the terminal Gaussian quantile through the Pareto
    inverse survival function.
    """
    WT = ensemble.W[-1]
    T = ensemble.grid.horizon
    kind, p = cond.kind, cond.params
    if kind == "brownian":
        if k > ensemble.dim:
            raise InvalidArgument(f"brownian terminal needs d >= k, got d={ensemble.dim}, k={k}")
        return cond.scale * WT[:, :k].copy()
    if kind == "constant":
        out = np.full(ensemble.n_paths, p["value"])
    elif kind == "abs_brownian":
        out = np.abs(WT[:, 0])
    elif kind == "uniform":
        out = p["low"] + (p["high"] - p["low"]) * ndtr(WT[:, 0] / math.sqrt(T))
    elif kind == "pareto":
        # survival U = Phi(-z) is uniform; xi = scale * U^(-1/a)
        log_u = log_ndtr(-WT[:, 0] / math.sqrt(T))
        out = p["scale"] * np.exp(-log_u / p["tail_index"])
    elif kind == "bounded":
        out = np.asarray(p["func"](WT), dtype=float).reshape(ensemble.n_paths)
    elif kind == "insured":
        base = sample_terminal(p["target"], ensemble, 1)[:, 0]
        out = p["floor"] + np.maximum(base - p["floor"], 0.0)
    if cond.scale != 1.0:
        out = cond.scale * out
    res = np.zeros((ensemble.n_paths, k))
    res[:, 0] = out
    return res


def pareto_tail_mean(tail_index: float, scale: float, level: float) -> float:
    """Closed form ``E[xi 1{xi > level}]`` for a Pareto(a, scale) variable."""
    a = tail_index
    if level <= scale:
        return a * scale / (a - 1)
    return a * scale ** a * level ** (1 - a) / (a - 1)


GENERATOR_KINDS = ("zero", "linear", "power", "custom")


@dataclass(frozen=True)
class GeneratorSpec:
    """Delayed driver ``f(t, Y_t, Z_t)``.

    ``linear``: ``intercept + coef_y * avg(Y) + coef_z * avg(Z) 1_d``.
    ``power``: ``gamma * avg[(g + |Y| + |Z|)^delta - g^delta]`` (placed on
    the diagonal direction ``1_k / sqrt(k)``).
    ``custom``: ``func(i, t, frame_y, frame_z, measure) -> (M, k)``.
    Averages are taken against the problem's delay measure.
    """

    kind: str = "zero"
    intercept: Any = 0.0
    coef_y: float = 0.0
    coef_z: float = 0.0
    gamma: float = 0.0
    delta: float = 0.5
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise InvalidArgument(f"unknown generator kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise InvalidArgument("custom generator needs a callable")
        if self.kind == "power" and not 0 < self.delta < 1:
            raise InvalidArgument(f"power generator exponent must be in (0, 1), got {self.delta}")

    @classmethod
    def zero(cls) -> "GeneratorSpec":
        return cls("zero")

    @classmethod
    def linear(cls, coef_y: float = 0.0, coef_z: float = 0.0, intercept=0.0) -> "GeneratorSpec":
        return cls("linear", intercept=intercept, coef_y=float(coef_y), coef_z=float(coef_z))

    @classmethod
    def constant(cls, value: float) -> "GeneratorSpec":
        return cls("linear", intercept=float(value))

    @classmethod
    def power(cls, gamma: float, delta: float) -> "GeneratorSpec":
        return cls("power", gamma=float(gamma), delta=float(delta))

    @classmethod
    def custom(cls, func: Callable) -> "GeneratorSpec":
        return cls("custom", func=func)

    def scaled(self, c: float) -> "GeneratorSpec":
        """Generator of the problem with data multiplied by ``c`` (linear kinds only)."""
        if self.kind == "zero":
            return self
        if self.kind != "linear":
            raise InvalidArgument(f"cannot rescale a {self.kind} generator")
        return replace(self, intercept=np.asarray(self.intercept) * c
                       if np.ndim(self.intercept) else self.intercept * c)


@dataclass(frozen=True)
class DelayedProblem:
    """Data of a delayed BSDE together with its declared constants.

    ``g_process`` and ``f_at_zero`` are grid functions on ``t_0..t_N``; both
    are taken to vanish before time 0.  ``f_at_zero`` stores the Euclidean
    norm ``|f(t, 0, 0)|``.
    """

    terminal: TerminalCondition
    generator: GeneratorSpec
    delay: DelayMeasure
    grid: TimeGrid
    k: int
    d: int
    lipschitz_K: float
    growth_gamma: float
    growth_delta: float
    g_process: np.ndarray = field(repr=False, compare=False)
    f_at_zero: np.ndarray = field(repr=False, compare=False)
    truncation: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.growth_delta < 1:
            raise InvalidArgument(
                f"growth exponent delta must lie in (0, 1), got {self.growth_delta}")
        if self.lipschitz_K < 0 or self.growth_gamma < 0:
            raise InvalidArgument("K and gamma must be nonnegative")
        if self.k < 1 or self.d < 1:
            raise InvalidArgument("dimensions k, d must be positive")
        if abs(self.delay.horizon - self.grid.horizon) > 1e-12 * self.grid.horizon \
                or abs(self.delay.dt - self.grid.dt) > 1e-12 * self.grid.dt:
            raise InvalidArgument("delay measure was built for a different grid")
        if len(self.g_process) != self.grid.n_points or np.any(np.asarray(self.g_process) < 0):
            raise InvalidArgument("g_process must be a nonnegative grid function")

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def truncated(self, level: Optional[float]) -> "DelayedProblem":
        """Same problem with terminal value and driver radially clipped at ``level``."""
        return replace(self, truncation=level)


def make_problem(grid: TimeGrid, terminal: TerminalCondition, generator: GeneratorSpec,
                 delay: DelayMeasure, k: int = 1, d: int = 1,
                 lipschitz_K: Optional[float] = None, growth_gamma: Optional[float] = None,
                 growth_delta: Optional[float] = None, g_process=None) -> DelayedProblem:
    """Assemble a :class:`DelayedProblem`, deriving constants where possible.

    The linear kind gets ``K = max(|coef_y|, |coef_z| sqrt(d))``; the power
    kind declares its own ``(gamma, delta)`` and has no finite ``K``.
    """
    gen = generator
    if lipschitz_K is None:
        if gen.kind == "zero":
            lipschitz_K = 0.0
        elif gen.kind == "linear":
            lipschitz_K = max(abs(gen.coef_y), abs(gen.coef_z) * math.sqrt(d))
        elif gen.kind == "power":
            lipschitz_K = math.inf
        else:
            raise InvalidArgument("custom generators must declare lipschitz_K")
    if growth_gamma is None:
        growth_gamma = {"zero": 0.0, "power": gen.gamma}.get(
            gen.kind, max(abs(gen.coef_y), abs(gen.coef_z) * math.sqrt(d)))
    if growth_delta is None:
        growth_delta = gen.delta if gen.kind == "power" else 0.5
    if g_process is None:
        g_process = np.zeros(grid.n_points)
    g_process = np.broadcast_to(np.asarray(g_process, dtype=float), (grid.n_points,)).copy()
    g_process.setflags(write=False)

    probe = DelayedProblem(terminal, gen, delay, grid, k, d, float(lipschitz_K),
                           float(growth_gamma), float(growth_delta), g_process,
                           np.zeros(grid.n_points))
    Y0 = np.zeros((grid.n_points, 1, k))
    Z0 = np.zeros((grid.n_steps, 1, k, d))
    f0 = np.array([np.linalg.norm(evaluate_generator(probe, i, Y0, Z0)[0])
                   for i in range(grid.n_steps)] + [0.0])
    f0[-1] = f0[-2] if grid.n_steps >= 1 else 0.0
    f0.setflags(write=False)
    return replace(probe, f_at_zero=f0)


def _as_frame(values, index: int, channel: str) -> SegmentFrame:
    if isinstance(values, SegmentFrame):
        return values.at(index)
    return SegmentFrame(np.asarray(values), index, channel)


def evaluate_generator(problem: DelayedProblem, time_index: int, frame_y, frame_z) -> np.ndarray:
    """Driver value at ``t_i`` on every path, shape ``(M, k)``.

    ``frame_y``/``frame_z`` are :class:`SegmentFrame` objects or raw arrays
    (``(N+1, M, k)`` and ``(N, M, k, d)``).  Negative time indices give
    exactly zero.
    """
    y_vals = frame_y.values if isinstance(frame_y, SegmentFrame) else np.asarray(frame_y)
    M = y_vals.shape[1]
    k = problem.k
    if time_index < 0:
        return np.zeros((M, k))
    gen = problem.generator
    alpha = problem.delay
    t = problem.grid.times[time_index]
    if gen.kind == "zero":
        return np.zeros((M, k))

    fy = _as_frame(frame_y, time_index, Y_CHANNEL)
    fz = _as_frame(frame_z, time_index, Z_CHANNEL)
    if gen.kind == "linear":
        b = gen.intercept
        b = float(np.asarray(b)[time_index]) if np.ndim(b) else float(b)
        out = np.full((M, k), b)
        if gen.coef_y:
            out = out + gen.coef_y * delay_average(fy, alpha)
        if gen.coef_z:
            out = out + gen.coef_z * delay_average(fz, alpha).sum(axis=-1)
    elif gen.kind == "power":
        g = problem.g_process
        acc = np.zeros(M)
        for w, off in zip(alpha.weights, alpha.offsets):
            j = time_index + off
            gj = g[j] if j >= 0 else 0.0
            ynorm = np.linalg.norm(fy.lookup(off), axis=-1)
            znorm = np.sqrt(np.sum(fz.lookup(off) ** 2, axis=(-2, -1)))
            acc = acc + w * ((gj + ynorm + znorm) ** gen.delta - gj ** gen.delta)
        out = np.repeat((gen.gamma * acc / math.sqrt(k))[:, None], k, axis=1)
    else:
        out = np.asarray(gen.func(time_index, t, fy, fz, alpha), dtype=float).reshape(M, k)

    bad = ~np.isfinite(out)
    if bad.any():
        path = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise NumericalFailure("non-finite generator value", module="model",
                               operation="evaluate_generator", time_index=time_index, path=path)
    return out


@dataclass
class ProbeResult:
    """Outcome of a randomized assumption probe."""

    worst_ratio: float
    n_used: int
    inconclusive: bool = False
    violation: bool = False


def _probe_segments(problem: DelayedProblem, ensemble: PathEnsemble, n: int,
                    rng: np.random.Generator, amp_range=(1e-6, 1e3)):
    """Random Y/Z segment arrays built from ensemble paths with log-uniform amplitudes."""
    N, k, d = problem.grid.n_steps, problem.k, problem.d
    paths = rng.integers(0, ensemble.n_paths, size=n)
    amp = np.exp(rng.uniform(np.log(amp_range[0]), np.log(amp_range[1]), size=n))
    base = ensemble.W[:, paths, :]
    y = np.empty((N + 1, n, k))
    for c in range(k):
        y[..., c] = base[..., c % ensemble.dim]
    y = amp[None, :, None] * (y + rng.standard_normal((1, n, k)))
    z = amp[None, :, None, None] * rng.standard_normal((N, n, k, d))
    return y, z, amp


PROBE_BATCH = 256


def _lipschitz_probes(problem: DelayedProblem, ensemble: PathEnsemble, n: int, seed: int):
    """Probe pairs drawn in fixed batches, so the first ``n`` never depend on the total."""
    N = problem.grid.n_steps
    parts = []
    for b in range(-(-n // PROBE_BATCH)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        m = PROBE_BATCH
        y, z, amp = _probe_segments(problem, ensemble, m, rng)
        # even probes shift the Y channel by a constant, odd ones perturb both channels
        y_only = np.arange(m) % 2 == 0
        scale = amp * np.exp(rng.uniform(np.log(1e-3), np.log(1e1), size=m))
        dy = np.where(y_only[None, :, None],
                      scale[None, :, None] * np.sign(rng.standard_normal((1, m, 1))),
                      scale[None, :, None] * rng.standard_normal(y.shape))
        dz = np.where(y_only[None, :, None, None], 0.0,
                      scale[None, :, None, None] * rng.standard_normal(z.shape))
        parts.append((y, z, dy, dz, rng.integers(0, N, size=m)))
    y, z, dy, dz = (np.concatenate([q[j] for q in parts], axis=1)[:, :n] for j in range(4))
    times = np.concatenate([q[4] for q in parts])[:n]
    return y, z, dy, dz, times


def check_lipschitz(problem: DelayedProblem, ensemble: PathEnsemble, n_probe_pairs: int = 2000,
                    seed: int = 0) -> ProbeResult:
    """Largest observed ``|f(y,z) - f(y',z')| / avg(|y-y'| + |z-z'|)``.

    Half of the pairs differ by a constant shift in the Y channel only, the
    rest by Gaussian noise in both channels.  The first ``n`` pairs are the
    same for every ``n_probe_pairs >= n``, so the result is nondecreasing in
    the probe count.
    """
    if n_probe_pairs < 1:
        raise InvalidArgument("need at least one probe pair")
    y, z, dy, dz, times = _lipschitz_probes(problem, ensemble, int(n_probe_pairs), seed)
    y2, z2 = y + dy, z + dz

    worst, used = 0.0, 0
    for i in np.unique(times):
        sel = times == i
        f1 = evaluate_generator(problem, int(i), y[:, sel], z[:, sel])
        f2 = evaluate_generator(problem, int(i), y2[:, sel], z2[:, sel])
        num = np.linalg.norm(f1 - f2, axis=-1)
        den = (delay_average(SegmentFrame(np.abs(dy[:, sel]), int(i)), problem.delay,
                             lambda v: np.linalg.norm(v, axis=-1))
               + delay_average(SegmentFrame(dz[:, sel], int(i), Z_CHANNEL), problem.delay,
                               lambda v: np.sqrt(np.sum(v ** 2, axis=(-2, -1)))))
        ok = den > 1e-300
        used += int(ok.sum())
        if ok.any():
            worst = max(worst, float(np.max(num[ok] / den[ok])))
    return ProbeResult(worst, used, inconclusive=used == 0)


def check_growth(problem: DelayedProblem, ensemble: PathEnsemble, n_probes: int = 2000,
                 seed: int = 0) -> ProbeResult:
    """Largest observed ``|f(y,z) - f(0,0)| / (gamma * avg((g + |y| + |z|)^delta))``.

    Amplitudes range up to ``1e6`` so linear growth shows up against a
    sublinear declared bound.  A zero right side with a nonzero left side
    is reported as a violation with infinite ratio.
    """
    if n_probes < 1:
        raise InvalidArgument("need at least one probe")
    rng = np.random.default_rng(seed)
    N = problem.grid.n_steps
    y, z, _ = _probe_segments(problem, ensemble, n_probes, rng, amp_range=(1e-3, 1e6))
    times = rng.integers(0, N, size=n_probes)
    g = problem.g_process
    gamma, delta = problem.growth_gamma, problem.growth_delta

    worst, used, violation = 0.0, 0, False
    for i in np.unique(times):
        i = int(i)
        sel = times == i
        ys, zs = y[:, sel], z[:, sel]
        f = evaluate_generator(problem, i, ys, zs)
        f0 = evaluate_generator(problem, i, np.zeros_like(ys), np.zeros_like(zs))
        lhs = np.linalg.norm(f - f0, axis=-1)
        rhs = np.zeros(lhs.shape)
        fy = SegmentFrame(ys, i)
        fz = SegmentFrame(zs, i, Z_CHANNEL)
        for w, off in zip(problem.delay.weights, problem.delay.offsets):
            j = i + off
            gj = g[j] if j >= 0 else 0.0
            yn = np.linalg.norm(fy.lookup(off), axis=-1)
            zn = np.sqrt(np.sum(fz.lookup(off) ** 2, axis=(-2, -1)))
            rhs = rhs + w * (gj + yn + zn) ** delta
        rhs = gamma * rhs
        zero_rhs = rhs <= 0
        if np.any(zero_rhs & (lhs > 0)):
            violation = True
            worst = math.inf
        ok = ~zero_rhs
        used += int(sel.sum())
        if ok.any() and worst < math.inf:
            worst = max(worst, float(np.max(lhs[ok] / rhs[ok])))
    return ProbeResult(worst, used, inconclusive=used == 0, violation=violation or worst > 1)


@dataclass(frozen=True)
class MarketModel:
    """Risk-free account and one risky asset with grid-function coefficients."""

    grid: TimeGrid
    rate: np.ndarray
    volatility: np.ndarray
    premium: np.ndarray
    initial_wealth: float = 1.0
    initial_price: float = 1.0

    @classmethod
    def constant(cls, grid: TimeGrid, rate: float, volatility: float, premium: float,
                 initial_wealth: float = 1.0, initial_price: float = 1.0) -> "MarketModel":
        full = lambda v: np.full(grid.n_points, float(v))
        return cls(grid, full(rate), full(volatility), full(premium), initial_wealth, initial_price)

    def __post_init__(self):
        for name in ("rate", "volatility", "premium"):
            if len(getattr(self, name)) != self.grid.n_points:
                raise InvalidArgument(f"{name} must be a grid function")
        if np.min(np.abs(self.volatility)) <= 1e-12:
            raise InvalidArgument("volatility must be bounded away from zero")
        if self.initial_price <= 0:
            raise InvalidArgument("initial bond price must be positive")

    @property
    def drift(self) -> np.ndarray:
        return self.rate + self.volatility * self.premium

    def discount_factors(self) -> np.ndarray:
        """``exp(-int_0^t r)`` on the grid (trapezoid rule)."""
        dt = self.grid.dt
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (self.rate[1:] + self.rate[:-1]) * dt)])
        return np.exp(-integral)

    def wealth(self, Y: np.ndarray) -> np.ndarray:
        """Undiscounted portfolio value from the discounted process, ``Y`` of shape ``(N+1, M, ...)``."""
        disc = self.discount_factors()
        return Y / disc.reshape((-1,) + (1,) * (Y.ndim - 1))

    def strategy(self, Z: np.ndarray) -> np.ndarray:
        """Amount held in the risky asset on each step, from ``Z`` of shape ``(N, M, ...)``."""
        disc = self.discount_factors()[:-1]
        sig = self.volatility[:-1]
        return Z / (sig * disc).reshape((-1,) + (1,) * (Z.ndim - 1))

    def risk_neutral_paths(self, ensemble: PathEnsemble) -> np.ndarray:
        """``W^Q(t) = W(t) + int_0^t theta`` for the first Brownian component."""
        dt = self.grid.dt
        shift = np.concatenate([[0.0], np.cumsum(self.premium[:-1] * dt)])
        return ensemble.W[:, :, 0] + shift[:, None]

    def asset_prices(self, ensemble: PathEnsemble) -> np.ndarray:
        """Exact log-Euler risky price on the grid under the real-world measure."""
        dt = self.grid.dt
        mu, sig = self.drift[:-1], self.volatility[:-1]
        incr = (mu - 0.5 * sig ** 2)[:, None] * dt + sig[:, None] * ensemble.dW[:, :, 0]
        logp = np.vstack([np.zeros((1, ensemble.n_paths)), np.cumsum(incr, axis=0)])
        return self.initial_price * np.exp(logp)


@dataclass
class PortfolioInsurance:
    """Insured-target problem with its analytic fixed-point characterization.

    A constant initial value ``Y(0) = guess`` solves the insured equation
    iff ``E[(xi - guess)^+] = 0``, i.e. ``xi <= guess`` almost surely; the
    solution is then ``Y = guess``, ``Z = 0``.
    """

    problem: DelayedProblem
    market: MarketModel
    target: TerminalCondition
    guess_Y0: float
    feasible: bool

    def analytic_solution(self):
        """``(Y, Z)`` as constants when feasible, else ``None``."""
        if not self.feasible:
            return None
        return self.guess_Y0, 0.0

    def excess_estimate(self, ensemble: PathEnsemble):
        """Monte Carlo mean and standard error of ``(xi - guess)^+``."""
        xi = sample_terminal(self.target, ensemble)[:, 0]
        return mean_stderr(np.maximum(xi - self.guess_Y0, 0.0))


def portfolio_insurance_problem(market: MarketModel, target: TerminalCondition,
                                guess_Y0: float) -> PortfolioInsurance:
    """Encode the insured target ``Y(0) + (xi - Y(0))^+`` with a proposed ``Y(0)``.

    The generated problem has zero driver and terminal value
    ``guess + (xi - guess)^+``; its delay atom sits at lag ``-T`` since the
    target reads the initial value.  Feasibility is decided analytically
    from the essential supremum of ``xi``.
    """
    from .delay_core import point_mass

    grid = market.grid
    insured = TerminalCondition("insured", {"target": target, "floor": float(guess_Y0)})
    problem = make_problem(grid, insured, GeneratorSpec.zero(), point_mass(grid, -grid.horizon))
    feasible = target.ess_sup() <= guess_Y0
    return PortfolioInsurance(problem, market, target, float(guess_Y0), bool(feasible))
