"""Variance machinery: stacked estimating equations and the stratified bootstrap.

Every estimator registers its working-model scores and target-parameter
equations as blocks of one stack; the sandwich covariance A^{-1} B A^{-T} / n
is then a single generic computation.  The bootstrap resamples rows with
replacement within each stratum, with one independent RNG substream per
replicate so results do not depend on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataset import CompositeDataset
from .errors import SingularBread, TooManyFailures, TransportError, UnsolvedStack

STACK_RESIDUAL_TOL = 1e-6
THREADS_ENV = "TRANSPORT_META_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def norm_quantile(level: float) -> float:
    return float(stats.norm.ppf(0.5 * (1.0 + level)))


def wald_ci(point: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    half = norm_quantile(level) * float(np.sqrt(max(variance, 0.0)))
    return (point - half, point + half)


@dataclass
class StackBlock:
    """One block of estimating functions with its own-parameter Jacobian.

    ``scores`` is (n, k) with zeros on rows outside the block's fit;
    ``jac_self`` is the (k, k) derivative of the averaged block equations
    with respect to the block's own parameters.
    """

    name: str
    scores: np.ndarray
    jac_self: np.ndarray
    theta: np.ndarray


@dataclass
class EstimatingStack:
    """Jointly stacked estimating equations evaluated at the fitted values."""

    theta: np.ndarray
    scores: np.ndarray
    bread: np.ndarray
    slices: dict[str, slice]
    target: str

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def index_of(self, name: str) -> slice:
        return self.slices[name]


def build_stack(blocks: list[StackBlock], cross: dict[tuple[str, str], np.ndarray],
                target: str) -> EstimatingStack:
    """Assemble blocks and cross-derivatives into one stack.

    ``cross[(a, b)]`` is the derivative of block ``a``'s averaged equations
    with respect to block ``b``'s parameters.  Raises UnsolvedStack when the
    equations do not sum to ~0, which would indicate an estimator bug.
    """
    n = blocks[0].scores.shape[0]
    sizes = [b.scores.shape[1] for b in blocks]
    K = sum(sizes)
    slices: dict[str, slice] = {}
    offset = 0
    for b, k in zip(blocks, sizes):
        if b.scores.shape[0] != n:
            raise UnsolvedStack(f"block {b.name!r} has {b.scores.shape[0]} rows, expected {n}")
        slices[b.name] = slice(offset, offset + k)
        offset += k
    scores = np.concatenate([b.scores for b in blocks], axis=1)
    theta = np.concatenate([np.atleast_1d(b.theta) for b in blocks])
    bread = np.zeros((K, K))
    for b in blocks:
        sl = slices[b.name]
        bread[sl, sl] = b.jac_self
    for (an, bn), mat in cross.items():
        bread[slices[an], slices[bn]] = mat
    col_sums = np.abs(scores.sum(axis=0))
    col_scale = np.abs(scores).sum(axis=0)
    bad = col_sums > STACK_RESIDUAL_TOL * np.maximum(1.0, col_scale)
    if bad.any() or not np.all(np.isfinite(col_sums)):
        raise UnsolvedStack(
            "stacked equations do not vanish at the fit "
            f"(max |sum| = {col_sums.max():.3g})"
        )
    return EstimatingStack(theta=theta, scores=scores, bread=bread, slices=slices, target=target)


@dataclass
class SandwichResult:
    cov: np.ndarray
    variance: float
    se: float
    ci: tuple[float, float]
    level: float


def sandwich_variance(stack: EstimatingStack, n: int | None = None,
                      level: float = 0.95) -> SandwichResult:
    """Covariance A^{-1} B A^{-T} / n of the stacked parameters.

    The returned variance/CI are for the stack's target parameter, which must
    be scalar.
    """
    n = stack.n if n is None else n
    A = stack.bread
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1e-12:
        raise SingularBread("bread matrix of the stacked equations is singular")
    B = stack.scores.T @ stack.scores / n
    Ainv = np.linalg.inv(A)
    cov = Ainv @ B @ Ainv.T / n
    tsl = stack.slices[stack.target]
    if tsl.stop - tsl.start != 1:
        raise UnsolvedStack("target block must hold a single parameter")
    var = float(cov[tsl.start, tsl.start])
    var = max(var, 0.0)
    point = float(stack.theta[tsl.start])
    return SandwichResult(
        cov=cov, variance=var, se=float(np.sqrt(var)),
        ci=wald_ci(point, var, level), level=level,
    )


# --- bootstrap ---------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapConfig:
    """Stratified nonparametric bootstrap settings.

    Replicate ``r`` draws from an RNG seeded by ``(seed, r)``, so results are
    identical for any worker count.  Failed replicates (estimation errors)
    are dropped and counted; more than ``max_failure_fraction`` failing is an
    error.
    """

    replicates: int = 1000
    seed: int = 0
    stratified: bool = True
    level: float = 0.95
    max_failure_fraction: float = 0.10

    def __post_init__(self):
        if self.replicates < 2:
            raise TooManyFailures("bootstrap needs at least 2 replicates")


@dataclass
class BootstrapResult:
    variance: np.ndarray
    se: np.ndarray
    percentile_ci: np.ndarray
    wald_ci: np.ndarray
    level: float
    replicates_requested: int
    replicates_effective: int
    n_failed: int
    estimates: np.ndarray = field(repr=False)


def resample_indices(data: CompositeDataset, rng: np.random.Generator,
                     stratified: bool = True) -> np.ndarray:
    """Row indices for one bootstrap replicate (within-stratum when stratified)."""
    if not stratified:
        return rng.integers(0, data.n, data.n)
    parts = []
    for s in range(data.m + 1):
        idx = np.flatnonzero(data.s == s)
        parts.append(idx[rng.integers(0, len(idx), len(idx))])
    return np.concatenate(parts)


def bootstrap_ci(data: CompositeDataset, estimator, config: BootstrapConfig) -> BootstrapResult:
    """Bootstrap an estimator closure; the closure maps a dataset to a float
    or a 1-d vector of floats (several estimators sharing one resample).
    """
    probe = np.atleast_1d(np.asarray(estimator(data), dtype=np.float64))
    width = probe.shape[0]
    values = np.full((config.replicates, width), np.nan)
    failed = np.zeros(config.replicates, dtype=bool)

    def one(r: int):
        rng = np.random.default_rng([config.seed, r])
        idx = resample_indices(data, rng, config.stratified)
        try:
            values[r] = np.atleast_1d(np.asarray(estimator(data.subset(idx)), dtype=np.float64))
        except TransportError:
            failed[r] = True

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(config.replicates)))
    else:
        for r in range(config.replicates):
            one(r)

    n_failed = int(failed.sum())
    if n_failed > config.max_failure_fraction * config.replicates:
        raise TooManyFailures(
            f"{n_failed}/{config.replicates} bootstrap replicates failed "
            f"(limit {config.max_failure_fraction:.0%})"
        )
    good = values[~failed]
    var = good.var(axis=0, ddof=1) if len(good) > 1 else np.zeros(width)
    se = np.sqrt(var)
    alpha = 1.0 - config.level
    lo = np.quantile(good, alpha / 2.0, axis=0)
    hi = np.quantile(good, 1.0 - alpha / 2.0, axis=0)
    zq = norm_quantile(config.level)
    wald = np.column_stack([probe - zq * se, probe + zq * se])
    return BootstrapResult(
        variance=var, se=se,
        percentile_ci=np.column_stack([lo, hi]),
        wald_ci=wald,
        level=config.level,
        replicates_requested=config.replicates,
        replicates_effective=int(len(good)),
        n_failed=n_failed,
        estimates=values,
    )
