"""Brownian ensembles and regression estimates of conditional expectations."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .delay_core import TimeGrid
from .errors import InvalidArgument, NumericalFailure

__all__ = [
    "PathEnsemble",
    "RegressionBasis",
    "simulate",
    "conditional_expectation",
    "mc_norm",
    "mean_stderr",
]

DEFAULT_CHUNK = 4096


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated Brownian paths, time on axis 0.

    ``W`` has shape ``(N + 1, M, d)``, ``dW`` has shape ``(N, M, d)`` and
    ``dW[i] == W[i + 1] - W[i]`` holds bit-for-bit.
    """

    grid: TimeGrid
    n_paths: int
    dim: int
    seed: int
    chunk_size: int
    W: np.ndarray = field(repr=False, compare=False)
    dW: np.ndarray = field(repr=False, compare=False)


def simulate(grid: TimeGrid, n_paths: int, dim: int = 1, seed: int = 0,
             chunk_size: int = DEFAULT_CHUNK) -> PathEnsemble:
    """Draw ``n_paths`` Brownian paths of dimension ``dim`` on ``grid``.

    Paths are generated in chunks of ``chunk_size``; chunk ``c`` draws from
    an independent stream keyed by ``(seed, c)``, so the ensemble is a pure
    function of ``(grid, n_paths, dim, seed, chunk_size)``.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidArgument(f"n_paths must be a positive integer, got {n_paths}")
    if int(dim) != dim or dim < 1:
        raise InvalidArgument(f"dim must be a positive integer, got {dim}")
    if int(seed) != seed or seed < 0 or seed >= 2**64:
        raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {seed}")
    if int(chunk_size) != chunk_size or chunk_size < 1:
        raise InvalidArgument(f"chunk_size must be a positive integer, got {chunk_size}")
    n_paths, dim, seed, chunk_size = int(n_paths), int(dim), int(seed), int(chunk_size)

    N = grid.n_steps
    sqdt = math.sqrt(grid.dt)
    blocks = []
    for c, start in enumerate(range(0, n_paths, chunk_size)):
        m = min(chunk_size, n_paths - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(c,)))
        blocks.append(rng.standard_normal((N, m, dim)))
    normals = np.concatenate(blocks, axis=1)
    W = np.zeros((N + 1, n_paths, dim))
    np.cumsum(sqdt * normals, axis=0, out=W[1:])
    dW = np.diff(W, axis=0)
    W.setflags(write=False)
    dW.setflags(write=False)
    return PathEnsemble(grid, n_paths, dim, seed, chunk_size, W, dW)


@dataclass(frozen=True)
class RegressionBasis:
    """Basis for the least-squares projection at a fixed time.

    kind
        ``"polynomial"``: monomials of total degree ``<= degree`` in the
        standardised Brownian state ``W(t_i) / sqrt(t_i)``.
        ``"bins"``: indicators of ``degree`` equiprobable bins of the first
        Brownian component.
    ridge
        Tikhonov weight, relative to the mean diagonal of the Gram matrix.
    history
        When set, the solver appends lagged values of the frozen iterate as
        extra regressors (they are known at ``t_i``).
    """

    kind: str = "polynomial"
    degree: int = 3
    ridge: float = 1e-10
    history: bool = True

    def __post_init__(self):
        if self.kind not in ("polynomial", "bins"):
            raise InvalidArgument(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 0:
            raise InvalidArgument("polynomial degree must be >= 0")
        if self.kind == "bins" and self.degree < 1:
            raise InvalidArgument("bin count must be >= 1")
        if self.ridge < 0:
            raise InvalidArgument("ridge must be nonnegative")


def _state_features(ensemble: PathEnsemble, i: int, basis: RegressionBasis) -> np.ndarray:
    t = ensemble.grid.times[i]
    x = ensemble.W[i] / math.sqrt(t)
    M, d = x.shape
    if basis.kind == "polynomial":
        cols = []
        for deg in range(1, basis.degree + 1):
            for combo in itertools.combinations_with_replacement(range(d), deg):
                cols.append(np.prod(x[:, combo], axis=1))
        return np.column_stack(cols) if cols else np.empty((M, 0))
    edges = ndtri(np.arange(1, basis.degree) / basis.degree)
    which = np.searchsorted(edges, x[:, 0], side="right")
    return np.column_stack([(which == b).astype(float) for b in range(1, basis.degree)]) \
        if basis.degree > 1 else np.empty((M, 0))


def conditional_expectation(targets, ensemble: PathEnsemble, time_index: int,
                            basis: RegressionBasis,
                            extra_features: Optional[np.ndarray] = None) -> np.ndarray:
    """Least-squares estimate of ``E[targets | F_{t_i}]`` on every path.

    ``targets`` has shape ``(M,)`` or ``(M, q)``; the fit is done for all
    columns at once.  The intercept is fitted by centring and is never
    penalised, so constant targets are reproduced.  At ``time_index == 0``
    the estimate is the sample mean.
    """
    y = np.asarray(targets, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    M = ensemble.n_paths
    if y.shape[0] != M:
        raise InvalidArgument(f"targets have {y.shape[0]} rows, ensemble has {M} paths")
    if not 0 <= time_index <= ensemble.grid.n_steps:
        raise InvalidArgument(f"time_index {time_index} outside grid")

    mean = y.mean(axis=0)
    if time_index == 0:
        fitted = np.broadcast_to(mean, y.shape).copy()
        return fitted[:, 0] if squeeze else fitted

    X = _state_features(ensemble, time_index, basis)
    if extra_features is not None:
        extra = np.asarray(extra_features, dtype=float).reshape(M, -1)
        X = np.hstack([X, extra])
    if X.shape[1]:
        X = X - X.mean(axis=0)
        scale = np.sqrt((X * X).mean(axis=0))
        ref = np.maximum(scale.max(), 1.0)
        keep = scale > 1e-12 * ref
        X = X[:, keep] / scale[keep]
    if X.shape[1] == 0:
        fitted = np.broadcast_to(mean, y.shape).copy()
        return fitted[:, 0] if squeeze else fitted

    yc = y - mean
    G = X.T @ X / M
    n_feat = G.shape[0]
    lam = basis.ridge * np.trace(G) / n_feat
    A = G + lam * np.eye(n_feat)
    eig = np.linalg.eigvalsh(A)
    if not np.all(np.isfinite(eig)) or eig[0] <= 1e-13 * max(eig[-1], 1e-300):
        raise NumericalFailure("rank-deficient regression design",
                               module="stochastics", operation="conditional_expectation",
                               time_index=time_index)
    coef = np.linalg.solve(A, X.T @ yc / M)
    fitted = mean + X @ coef
    return fitted[:, 0] if squeeze else fitted


def mc_norm(values, p: float) -> float:
    """Empirical ``(mean |v|^p) ** min(1, 1/p)``."""
    if p <= 0:
        raise InvalidArgument(f"p must be positive, got {p}")
    v = np.abs(np.asarray(values, dtype=float))
    return float(np.mean(v ** p) ** min(1.0, 1.0 / p))


def mean_stderr(samples) -> tuple:
    """Sample mean and its standard error."""
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        return float(s.mean()), float("nan")
    return float(s.mean()), float(s.std(ddof=1) / math.sqrt(s.size))
