"""Synthetic data under the stratified biased-sampling model.

A world fixes the number of trials, per-stratum sampling proportions and
covariate laws, per-trial randomization, and counterfactual mean functions
shared across strata (optional per-stratum shifts deliberately break that
sharing).  Stratum sizes use largest-remainder rounding so they sum exactly
to n; every draw flows from one seed, and replicate seeds can be passed as
(base, replicate) pairs for independent substreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import CompositeDataset
from .errors import InvalidWorld

PROB_TABLE_TOL = 1e-12


@dataclass(frozen=True)
class LinearMean:
    """Mean function a + b*x of a scalar covariate."""

    intercept: float
    slope: float = 0.0

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class DiscreteCovariate:
    levels: tuple[float, ...]
    probs: Mapping[int, tuple[float, ...]]  # stratum -> level probabilities


@dataclass(frozen=True)
class NormalCovariate:
    mean: Mapping[int, float]  # stratum -> mean
    sd: float = 1.0            # shared scale keeps participation log-odds linear


@dataclass(frozen=True)
class AdherenceMechanism:
    """All-or-nothing adherence: one post-assignment binary covariate L and a
    binary received treatment A over the same two arm labels."""

    received_one: str                       # the arm label coded as "received = 1"
    l_prob: Mapping[tuple[float, str], float]         # (x level, assigned) -> Pr[L=1]
    a_prob: Mapping[tuple[float, str, int], float]    # (x level, assigned, l) -> Pr[A=received_one]
    l_coef: float = 0.0                     # additive effect of L on the outcome


@dataclass(frozen=True)
class SimWorld:
    """Complete generative specification with known counterfactual means."""

    m: int
    proportions: tuple[float, ...]
    covariate: DiscreteCovariate | NormalCovariate
    arms: tuple[str, ...]
    randomization: Mapping
    mu: Mapping[str, LinearMean]
    stratum_shift: Mapping = field(default_factory=dict)
    noise_sd: float = 1.0
    adherence: AdherenceMechanism | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise InvalidWorld("need at least one trial")
        if len(self.proportions) != self.m + 1:
            raise InvalidWorld(f"need {self.m + 1} sampling proportions, got {len(self.proportions)}")
        if any(p <= 0 for p in self.proportions):
            raise InvalidWorld("sampling proportions must be positive")
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise InvalidWorld("sampling proportions must sum to 1")
        if isinstance(self.covariate, DiscreteCovariate):
            for s in range(self.m + 1):
                probs = self._level_probs(s)
                if abs(sum(probs) - 1.0) > PROB_TABLE_TOL:
                    raise InvalidWorld(f"covariate probabilities for stratum {s} sum to {sum(probs)}")
        for s in range(1, self.m + 1):
            table = self.arm_probs(s)
            if abs(sum(table.values()) - 1.0) > 1e-9 or any(p <= 0 for p in table.values()):
                raise InvalidWorld(f"randomization for trial {s} is not a positive distribution")
        for arm in self.arms:
            if arm not in self.mu:
                raise InvalidWorld(f"no mean function for arm {arm!r}")
        if self.adherence is not None and not isinstance(self.covariate, DiscreteCovariate):
            raise InvalidWorld("adherence worlds need a discrete covariate law")

    def _level_probs(self, s: int) -> tuple[float, ...]:
        probs = self.covariate.probs
        return tuple(probs[s] if s in probs else probs[str(s)])

    def arm_probs(self, s: int) -> dict[str, float]:
        table = self.randomization
        if s in table or str(s) in table:
            table = table.get(s, table.get(str(s)))
        return {arm: float(table[arm]) for arm in self.arms if arm in table}

    def conditional_mean(self, arm: str, x, stratum: int | None = None):
        base = self.mu[arm](x)
        if stratum is not None:
            base = base + self.stratum_shift.get((arm, stratum), 0.0)
        return base


def _stratum_sizes(proportions: Sequence[float], n: int) -> list[int]:
    quotas = np.asarray(proportions) * n
    base = np.floor(quotas).astype(int)
    short = n - int(base.sum())
    frac = quotas - base
    order = sorted(range(len(base)), key=lambda j: (-frac[j], j))
    for j in order[:short]:
        base[j] += 1
    return base.tolist()


def _draw_x(world: SimWorld, s: int, size: int, rng: np.random.Generator) -> np.ndarray:
    cov = world.covariate
    if isinstance(cov, DiscreteCovariate):
        return rng.choice(np.asarray(cov.levels, dtype=np.float64),
                          size=size, p=np.asarray(world._level_probs(s)))
    mean = cov.mean[s] if s in cov.mean else cov.mean[str(s)]
    return rng.normal(mean, cov.sd, size)


def simulate(world: SimWorld, n: int, seed=None) -> tuple[CompositeDataset, dict]:
    """Draw a composite dataset of total size n plus its hidden truth record."""
    if n < world.m + 1:
        raise InvalidWorld(f"n={n} cannot cover {world.m + 1} strata")
    rng = np.random.default_rng(world.seed if seed is None else seed)
    sizes = _stratum_sizes(world.proportions, n)
    arms = world.arms
    ids, s_vals, z_codes, y_vals, x_vals = [], [], [], [], []
    a_codes, l_vals = [], []
    adh = world.adherence
    z_labels = tuple(sorted(arms))
    code_of = {arm: z_labels.index(arm) for arm in arms}
    for s, size in enumerate(sizes):
        x = _draw_x(world, s, size, rng)
        x_vals.append(x)
        s_vals.append(np.full(size, s, dtype=np.int64))
        ids.extend(f"s{s}-{i}" for i in range(size))
        if s == 0:
            z_codes.append(np.full(size, -1, dtype=np.int64))
            y_vals.append(np.full(size, np.nan))
            a_codes.append(np.full(size, -1, dtype=np.int64))
            l_vals.append(np.full(size, np.nan))
            continue
        table = world.arm_probs(s)
        draw = rng.choice(len(arms), size=size, p=[table[a] for a in arms])
        z_lab = np.asarray(arms, dtype=object)[draw]
        z_codes.append(np.asarray([code_of[a] for a in z_lab], dtype=np.int64))
        noise = rng.normal(0.0, world.noise_sd, size)
        if adh is None:
            mean = np.array([world.conditional_mean(zl, xi, s)
                             for zl, xi in zip(z_lab, x)])
            y_vals.append(mean + noise)
            a_codes.append(np.full(size, -1, dtype=np.int64))
            l_vals.append(np.full(size, np.nan))
        else:
            pl = np.array([adh.l_prob[(xi, zl)] for xi, zl in zip(x, z_lab)])
            l = (rng.random(size) < pl).astype(np.float64)
            pa = np.array([adh.a_prob[(xi, zl, int(li))]
                           for xi, zl, li in zip(x, z_lab, l)])
            other = next(a for a in arms if a != adh.received_one)
            a_lab = np.where(rng.random(size) < pa, adh.received_one, other)
            mean = np.array([world.conditional_mean(al, xi, s)
                             for al, xi in zip(a_lab, x)])
            y_vals.append(mean + adh.l_coef * l + noise)
            a_codes.append(np.asarray([code_of[a] for a in a_lab], dtype=np.int64))
            l_vals.append(l)

    data = CompositeDataset(
        ids=ids,
        s=np.concatenate(s_vals),
        z_codes=np.concatenate(z_codes),
        y=np.concatenate(y_vals),
        x=np.concatenate(x_vals).reshape(-1, 1),
        covariate_names=("x1",),
        z_labels=z_labels,
        a_codes=np.concatenate(a_codes) if adh is not None else None,
        a_labels=z_labels if adh is not None else (),
        l=np.concatenate(l_vals).reshape(-1, 1) if adh is not None else None,
        l_names=("l1",) if adh is not None else (),
    )
    return data, truth_record(world)


def _target_expectation(world: SimWorld, fn) -> float:
    cov = world.covariate
    if isinstance(cov, DiscreteCovariate):
        probs = world._level_probs(0)
        return float(sum(p * fn(x) for p, x in zip(probs, cov.levels)))
    mean = cov.mean[0] if 0 in cov.mean else cov.mean["0"]
    return float(fn(mean))  # linear mean functions: E f(X) = f(E X)


def truth_itt(world: SimWorld, z: str, z_prime: str) -> float:
    """E[Y^z - Y^z' | S=0] in closed form (per-stratum shifts never touch the
    target population: they model trial-specific deviations)."""
    return _target_expectation(world, lambda x: world.mu[z](x) - world.mu[z_prime](x))


def truth_pp(world: SimWorld, z: str, a: str, z_prime: str, a_prime: str) -> float:
    """E[Y^{z,a} - Y^{z',a'} | S=0] for all-or-nothing adherence worlds."""
    adh = world.adherence
    if adh is None:
        raise InvalidWorld("world has no adherence mechanism")

    def fn(x):
        return (world.mu[a](x) + adh.l_coef * adh.l_prob[(x, z)]
                - world.mu[a_prime](x) - adh.l_coef * adh.l_prob[(x, z_prime)])

    return _target_expectation(world, fn)


def truth_record(world: SimWorld) -> dict:
    itt = {}
    for z in world.arms:
        for zp in world.arms:
            if z != zp:
                itt[f"{z} vs {zp}"] = truth_itt(world, z, zp)
    record = {"itt": itt}
    if world.adherence is not None:
        pp = {}
        for z in world.arms:
            for zp in world.arms:
                if z != zp:
                    pp[f"({z},{z}) vs ({zp},{zp})"] = truth_pp(world, z, z, zp, zp)
        record["pp"] = pp
    return record
