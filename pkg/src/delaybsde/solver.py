"""Regression backward sweep, Picard iteration and truncation diagnostics.

Each Picard step solves a BSDE whose driver is frozen at the previous
iterate, so a step is a single explicit backward sweep:

    Z_i = E_i[(Y_{i+1} - E_i Y_{i+1}) dW_i] / dt
    Y_i = E_i[Y_{i+1}] + f(t_i, Y^n_{t_i}, Z^n_{t_i}) dt

with ``E_i`` the least-squares projection at ``t_i``.  The driver term is
known at ``t_i`` and is kept outside the projection.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .estimates import PNormSettings, smallness_advisory
from .model import DelayedProblem, evaluate_generator, sample_terminal
from .stochastics import PathEnsemble, RegressionBasis, conditional_expectation, mc_norm, mean_stderr

logger = logging.getLogger(__name__)

__all__ = [
    "IterationRecord",
    "DiscreteSolution",
    "StoppingFamily",
    "LadderReport",
    "UniquenessReport",
    "truncate_scalar",
    "terminal_values",
    "generator_values",
    "zero_solution",
    "constant_solution",
    "backward_sweep",
    "picard_solve",
    "truncation_ladder",
    "class_D_norm",
    "stopping_indices",
    "uniqueness_probe",
]


def truncate_scalar(x, n: float):
    """Radial clipping ``q_n(x) = n x / max(|x|, n)``.

    A 0-d input is a scalar; otherwise the last axis is the vector axis.
    Inputs already inside the ball are returned unchanged, bit for bit.
    """
    if not n > 0:
        raise InvalidArgument(f"truncation level must be positive, got {n}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        r = abs(float(x))
        return x * (n / max(r, n))
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return x * (n / np.maximum(r, n))


@dataclass
class IterationRecord:
    iteration: int
    dY_sup_norm: float
    dZ_h_norm: float
    dY_class_d: float
    contraction_ratio: float


@dataclass
class DiscreteSolution:
    """Grid solution: ``Y`` is ``(N+1, M, k)``, ``Z`` is ``(N, M, k, d)``."""

    Y: np.ndarray
    Z: np.ndarray
    xi: Optional[np.ndarray] = None
    history: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    truncation_level: Optional[float] = None
    seed: Optional[int] = None
    chunk_size: Optional[int] = None
    advisory: Optional[dict] = None

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def Y0(self) -> np.ndarray:
        return self.Y[0].mean(axis=0)


def zero_solution(problem: DelayedProblem, ensemble: PathEnsemble) -> DiscreteSolution:
    N, M = problem.grid.n_steps, ensemble.n_paths
    return DiscreteSolution(np.zeros((N + 1, M, problem.k)), np.zeros((N, M, problem.k, problem.d)))


def constant_solution(problem: DelayedProblem, ensemble: PathEnsemble, value: float) -> DiscreteSolution:
    """Start with ``Y`` identically ``value`` and ``Z`` zero."""
    sol = zero_solution(problem, ensemble)
    sol.Y[...] = value
    return sol


def terminal_values(problem: DelayedProblem, ensemble: PathEnsemble) -> np.ndarray:
    """Terminal samples, clipped when the problem carries a truncation level."""
    xi = sample_terminal(problem.terminal, ensemble, problem.k)
    if problem.truncation is not None:
        xi = truncate_scalar(xi, problem.truncation)
    return xi


def generator_values(problem: DelayedProblem, Y: np.ndarray, Z: np.ndarray,
                     truncate: bool = True) -> np.ndarray:
    """Driver along a frozen iterate for ``i = 0..N-1``, shape ``(N, M, k)``."""
    N = problem.grid.n_steps
    F = np.stack([evaluate_generator(problem, i, Y, Z) for i in range(N)])
    if truncate and problem.truncation is not None:
        F = truncate_scalar(F, problem.truncation)
    return F


def _history_features(frozen: DiscreteSolution, problem: DelayedProblem, i: int) -> Optional[np.ndarray]:
    cols = []
    for off in problem.delay.offsets:
        j = i + off
        if off < 0 and j > 0:
            cols.append(frozen.Y[j])
    if not cols:
        return None
    return np.concatenate(cols, axis=1)


def backward_sweep(problem: DelayedProblem, ensemble: PathEnsemble, frozen: DiscreteSolution,
                   basis: RegressionBasis, xi: Optional[np.ndarray] = None) -> DiscreteSolution:
    """One Picard step with the driver evaluated on ``frozen``."""
    grid = problem.grid
    N, M, k, d = grid.n_steps, ensemble.n_paths, problem.k, problem.d
    dt = grid.dt
    if ensemble.grid.n_steps != N:
        raise InvalidArgument("ensemble and problem grids differ")
    if frozen.Y.shape != (N + 1, M, k) or frozen.Z.shape != (N, M, k, d):
        raise InvalidArgument("frozen iterate does not match the grid and ensemble")
    if xi is None:
        xi = terminal_values(problem, ensemble)

    F = generator_values(problem, frozen.Y, frozen.Z)
    Y = np.empty((N + 1, M, k))
    Z = np.empty((N, M, k, d))
    Y[N] = xi
    use_history = basis.history and problem.generator.kind != "zero"
    for i in range(N - 1, -1, -1):
        extra = _history_features(frozen, problem, i) if use_history else None
        cont = conditional_expectation(Y[i + 1], ensemble, i, basis, extra)
        resid = (Y[i + 1] - cont)[:, :, None] * ensemble.dW[i][:, None, :] / dt
        Z[i] = conditional_expectation(resid.reshape(M, k * d), ensemble, i, basis,
                                       extra).reshape(M, k, d)
        Y[i] = cont + F[i] * dt
    return DiscreteSolution(Y, Z, xi, truncation_level=problem.truncation,
                            seed=ensemble.seed, chunk_size=ensemble.chunk_size)


def _sup_abs(Y: np.ndarray) -> np.ndarray:
    """Per-path ``sup_t |Y(t)|``."""
    return np.linalg.norm(Y, axis=-1).max(axis=0)


def _h_norm_samples(Z: np.ndarray, dt: float) -> np.ndarray:
    """Per-path ``(sum_i |Z_i|^2 dt)^(1/2)``."""
    return np.sqrt(np.sum(Z ** 2, axis=(-2, -1)).sum(axis=0) * dt)


def _advisory_for(problem: DelayedProblem) -> dict:
    settings = PNormSettings(3.0, problem.lipschitz_K, problem.horizon) \
        if math.isfinite(problem.lipschitz_K) else None
    if settings is None:
        return {"contraction": math.inf, "advisory": False, "dp_feasible": False}
    return smallness_advisory(settings)


def picard_solve(problem: DelayedProblem, ensemble: PathEnsemble, basis: RegressionBasis,
                 max_iters: int = 20, tol: float = 1e-6, beta: float = 1.0,
                 start: Optional[DiscreteSolution] = None) -> DiscreteSolution:
    """Iterate :func:`backward_sweep` from ``start`` (zero by default).

    Stops when the MC ``S^beta`` distance of successive ``Y`` iterates and
    the ``H^beta`` distance of successive ``Z`` iterates are both below
    ``tol``.  Divergence is recorded, not raised.
    """
    if max_iters < 1 or not tol > 0:
        raise InvalidArgument("max_iters must be >= 1 and tol > 0")
    advisory = _advisory_for(problem)
    if not advisory["advisory"]:
        logger.info("smallness advisory fails (contraction surrogate %.4g); solving anyway",
                    advisory["contraction"])
    xi = terminal_values(problem, ensemble)
    prev = start if start is not None else zero_solution(problem, ensemble)
    dt = problem.grid.dt
    history: List[IterationRecord] = []
    converged = False
    cur = prev
    for n in range(1, max_iters + 1):
        cur = backward_sweep(problem, ensemble, prev, basis, xi)
        dY = cur.Y - prev.Y
        dy = mc_norm(_sup_abs(dY), beta)
        dz = mc_norm(_h_norm_samples(cur.Z - prev.Z, dt), beta)
        dcd = float(np.linalg.norm(dY, axis=-1).mean(axis=1).max())
        if not (math.isfinite(dy) and math.isfinite(dz)):
            raise NumericalFailure("non-finite iterate distance", module="solver",
                                   operation="picard_solve", iteration=n)
        if history and history[-1].dY_sup_norm > 0:
            ratio = dy / history[-1].dY_sup_norm
        else:
            ratio = math.nan
        history.append(IterationRecord(n, dy, dz, dcd, ratio))
        logger.debug("picard %d: dY=%.3e dZ=%.3e ratio=%.3g", n, dy, dz, ratio)
        if dy <= tol and dz <= tol:
            converged = True
            break
        prev = cur
    cur.history = history
    cur.converged = converged
    cur.advisory = advisory
    return cur


@dataclass(frozen=True)
class StoppingFamily:
    """Family of grid-valued stopping times.

    ``deterministic``: ``params["indices"]``.
    ``hitting_y``: first index with ``|Y_i| >= level`` for each level.
    ``hitting_qv``: first index with ``sum_{j<i} |Z_j|^2 dt >= level``.
    Each member is capped at ``N``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("deterministic", "hitting_y", "hitting_qv"):
            raise InvalidArgument(f"unknown stopping family {self.kind!r}")

    @classmethod
    def deterministic(cls, indices) -> "StoppingFamily":
        return cls("deterministic", {"indices": tuple(int(i) for i in indices)})

    @classmethod
    def hitting_y(cls, levels) -> "StoppingFamily":
        return cls("hitting_y", {"levels": tuple(float(v) for v in levels)})

    @classmethod
    def hitting_qv(cls, levels) -> "StoppingFamily":
        return cls("hitting_qv", {"levels": tuple(float(v) for v in levels)})


def _first_hit(mask: np.ndarray) -> np.ndarray:
    """First time index where ``mask`` holds along axis 0, else the last index."""
    n = mask.shape[0]
    hit = mask.any(axis=0)
    return np.where(hit, mask.argmax(axis=0), n - 1)


def stopping_indices(family: StoppingFamily, Y: np.ndarray, Z: Optional[np.ndarray] = None,
                     dt: float = 1.0) -> List[np.ndarray]:
    """Per-path stopping indices, one array per family member."""
    N = Y.shape[0] - 1
    M = Y.shape[1]
    if family.kind == "deterministic":
        return [np.full(M, min(max(i, 0), N)) for i in family.params["indices"]]
    if family.kind == "hitting_y":
        absY = np.linalg.norm(Y, axis=-1)
        return [_first_hit(absY >= lv) for lv in family.params["levels"]]
    if Z is None:
        raise InvalidArgument("quadratic-variation stopping needs Z")
    qv = np.zeros((N + 1, M))
    qv[1:] = np.cumsum(np.sum(Z ** 2, axis=(-2, -1)) * dt, axis=0)
    return [_first_hit(qv >= lv) for lv in family.params["levels"]]


def _class_D(Y: np.ndarray, families: Sequence[StoppingFamily], Z, dt) -> Tuple[float, np.ndarray]:
    absY = np.linalg.norm(Y, axis=-1)
    means = absY.mean(axis=1)
    best_i = int(np.argmax(means))
    best, samples = float(means[best_i]), absY[best_i]
    paths = np.arange(Y.shape[1])
    for fam in families:
        for tau in stopping_indices(fam, Y, Z, dt):
            vals = absY[tau, paths]
            v = float(vals.mean())
            if v > best:
                best, samples = v, vals
    return best, samples


def class_D_norm(solution, families: Optional[Sequence[StoppingFamily]] = None,
                 Z: Optional[np.ndarray] = None, dt: Optional[float] = None) -> float:
    """MC estimate of ``sup_tau E|Y(tau)|`` over grid times and ``families``.

    ``solution`` is a :class:`DiscreteSolution` or a raw ``(N+1, M, k)``
    array.  All deterministic grid times are always included.
    """
    if isinstance(solution, DiscreteSolution):
        Y, Z = solution.Y, solution.Z if Z is None else Z
    else:
        Y = np.asarray(solution, dtype=float)
    if dt is None:
        dt = 1.0 / max(Y.shape[0] - 1, 1)
    return _class_D(Y, families or [], Z, dt)[0]


@dataclass
class LadderReport:
    levels: List[float]
    solutions: List[DiscreteSolution]
    betas: Tuple[float, ...]
    rows: List[Dict[str, float]]


def _tail_quantity(problem: DelayedProblem, ensemble: PathEnsemble, sol: DiscreteSolution,
                   level: float) -> np.ndarray:
    """Per-path ``|xi| 1{|xi|>n} + sum_i |f_i| 1{|f_i|>n} dt`` on the untruncated data."""
    base = problem.truncated(None)
    xi = np.linalg.norm(sample_terminal(base.terminal, ensemble, base.k), axis=-1)
    tail = np.where(xi > level, xi, 0.0)
    if problem.generator.kind != "zero":
        f = np.linalg.norm(generator_values(base, sol.Y, sol.Z, truncate=False), axis=-1)
        tail = tail + np.where(f > level, f, 0.0).sum(axis=0) * problem.grid.dt
    return tail


def truncation_ladder(problem: DelayedProblem, levels: Sequence[float], ensemble: PathEnsemble,
                      basis: RegressionBasis, max_iters: int = 20, tol: float = 1e-6,
                      betas: Sequence[float] = (0.5, 0.9),
                      families: Optional[Sequence[StoppingFamily]] = None) -> LadderReport:
    """Solve with data clipped at each level and compare neighbouring levels.

    For each consecutive pair ``(n_j, n_{j+1})`` the row of level ``n_j``
    holds the ``E sup|dY|`` gap, the class-(D) gap, and for each ``beta``
    the moment ``E sup|dY|^beta`` next to the bound
    ``(E tail_n)^beta / (1 - beta)``.  The literal variant with the power
    inside the expectation is reported as ``e3_rhs_literal_*``.
    """
    levels = [float(v) for v in levels]
    if not levels or any(v <= 0 for v in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidArgument("levels must be positive and strictly increasing")
    if any(not 0 < b < 1 for b in betas):
        raise InvalidArgument("beta values must lie in (0, 1)")
    dt = problem.grid.dt
    sols = [picard_solve(problem.truncated(n), ensemble, basis, max_iters, tol) for n in levels]

    rows = []
    for j, n in enumerate(levels):
        row: Dict[str, float] = {"level": n, "converged": float(sols[j].converged)}
        if j + 1 < len(levels):
            diff = sols[j + 1].Y - sols[j].Y
            sup = _sup_abs(diff)
            row["gap_to_next_sup"], row["gap_to_next_sup_se"] = mean_stderr(sup)
            fams = list(families) if families is not None else \
                [StoppingFamily.hitting_y(np.quantile(sup, [0.5, 0.9, 0.99]))]
            gap, samples = _class_D(diff, fams, None, dt)
            row["gap_to_next_L1"] = gap
            # the t=0 estimate is a sample mean of the terminal gap, so its error is the terminal one
            row["gap_to_next_L1_se"] = max(mean_stderr(samples)[1],
                                           mean_stderr(np.linalg.norm(diff[-1], axis=-1))[1])
            tail = _tail_quantity(problem, ensemble, sols[j], n)
            tail_mean, tail_se = mean_stderr(tail)
            for b in betas:
                lhs, lhs_se = mean_stderr(sup ** b)
                rhs = tail_mean ** b / (1 - b)
                rhs_se = b * tail_mean ** (b - 1) * tail_se / (1 - b) if tail_mean > 0 else 0.0
                row[f"e3_lhs_{b:g}"] = lhs
                row[f"e3_lhs_se_{b:g}"] = lhs_se
                row[f"e3_rhs_{b:g}"] = rhs
                row[f"e3_rhs_se_{b:g}"] = rhs_se
                row[f"e3_rhs_literal_{b:g}"] = float(np.mean(tail ** b)) / (1 - b)
        rows.append(row)
    return LadderReport(levels, sols, tuple(betas), rows)


@dataclass
class UniquenessReport:
    solutions: List[DiscreteSolution]
    sup_gaps: Dict[Tuple[int, int], float]
    max_abs_gaps: Dict[Tuple[int, int], float]
    localized_gaps: Dict[Tuple[int, int, float], float]
    advisory: dict
    tol: float
    passed: Optional[bool]


def uniqueness_probe(problem: DelayedProblem, ensemble: PathEnsemble, basis: RegressionBasis,
                     starts: Sequence, tol: float = 1e-6, max_iters: int = 30,
                     levels: Sequence[float] = (0.5, 1.0, 2.0, 1e12)) -> UniquenessReport:
    """Run Picard from several starts and measure how far apart they end.

    ``starts`` holds :class:`DiscreteSolution` objects or constants for
    ``Y``.  Gaps are ``E sup_t |Y^a - Y^b|``; the localized gap restricts
    the supremum to ``t <= tau_n``, the first grid time at which
    ``sum (|Z^a|^2 + |Z^b|^2) dt`` reaches ``n``.
    """
    if len(starts) < 2:
        raise InvalidArgument("need at least two starts")
    inits = [s if isinstance(s, DiscreteSolution) else constant_solution(problem, ensemble, s)
             for s in starts]
    sols = [picard_solve(problem, ensemble, basis, max_iters, tol, start=s) for s in inits]
    dt = problem.grid.dt
    sup_gaps, max_gaps, loc = {}, {}, {}
    for a, b in itertools.combinations(range(len(sols)), 2):
        absd = np.linalg.norm(sols[a].Y - sols[b].Y, axis=-1)
        sup_gaps[(a, b)] = float(absd.max(axis=0).mean())
        max_gaps[(a, b)] = float(absd.max())
        Zsum = np.sum(sols[a].Z ** 2 + sols[b].Z ** 2, axis=(-2, -1))
        qv = np.zeros_like(absd)
        qv[1:] = np.cumsum(Zsum * dt, axis=0)
        idx = np.arange(absd.shape[0])[:, None]
        for lv in levels:
            tau = _first_hit(qv >= lv)
            masked = np.where(idx <= tau[None, :], absd, 0.0)
            loc[(a, b, float(lv))] = float(masked.max(axis=0).mean())
    advisory = _advisory_for(problem)
    passed = all(g <= 3 * tol for g in sup_gaps.values()) if advisory["advisory"] else None
    return UniquenessReport(sols, sup_gaps, max_gaps, loc, advisory, tol, passed)
