"""Exact enumeration of the identification functionals on discrete data.

No model fitting happens here: every conditional probability is an exact
cell proportion and every conditional mean an exact cell mean, so the
outcome-model and weighting forms of each functional agree to float
precision.  That equality, and agreement with the model-based estimators
under saturated designs, is what the test suite leans on.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .dataset import CompositeDataset
from .errors import EmptyCell
from .simulation import SimWorld, truth_itt, truth_pp

PSI_OUTCOME = "psi-outcome"        # single trial, outcome-model form
PSI_WEIGHTING = "psi-weighting"    # single trial, weighting form
PHI_OUTCOME = "phi-outcome"        # pooled, common-mean-difference form
PHI_WEIGHTING = "phi-weighting"    # pooled, weighting form
THETA = "theta"                    # target-averaged nested mean, one (z, a)
LAMBDA = "lambda"                  # target-averaged pooled per-protocol difference
PP = "pp"                          # per-protocol contrast


@dataclass(frozen=True)
class OracleResult:
    functional: str
    value: float
    computed_by: str


def _xkeys(data: CompositeDataset):
    return [tuple(row) for row in data.x]


def _cell_means(values):
    return float(np.mean(values))


class _Cells:
    """Index rows by covariate pattern and stratum/arm for exact arithmetic."""

    def __init__(self, data: CompositeDataset):
        self.data = data
        keys = _xkeys(data)
        self.keys = keys
        self.target_counts: dict = defaultdict(int)
        self.by_xs: dict = defaultdict(list)          # (x, s) -> rows
        self.by_xsz: dict = defaultdict(list)         # (x, s, zcode) -> rows
        for i in range(data.n):
            x = keys[i]
            s = int(data.s[i])
            if s == 0:
                self.target_counts[x] += 1
            else:
                self.by_xs[(x, s)].append(i)
                self.by_xsz[(x, s, int(data.z_codes[i]))].append(i)
        self.n0 = sum(self.target_counts.values())

    def target_distribution(self):
        for x, c in sorted(self.target_counts.items()):
            yield x, c / self.n0

    def arm_mean(self, x, s, zcode) -> float:
        rows = self.by_xsz.get((x, s, zcode))
        if not rows:
            label = self.data.z_labels[zcode]
            raise EmptyCell(f"no rows with X={x}, S={s}, Z={label!r}")
        return _cell_means(self.data.y[rows])

    def trial_diff(self, x, s, cz, czp) -> float:
        return self.arm_mean(x, s, cz) - self.arm_mean(x, s, czp)

    def pooled_diff(self, x, cz, czp, trials) -> float:
        """Trial-size-weighted conditional mean difference at x."""
        total = 0
        acc = 0.0
        for s in trials:
            rows = self.by_xs.get((x, s))
            if not rows:
                continue
            acc += len(rows) * self.trial_diff(x, s, cz, czp)
            total += len(rows)
        if total == 0:
            raise EmptyCell(f"no trial rows with X={x}")
        return acc / total


def _empirical(data: CompositeDataset, which: str, z: str, z_prime: str,
               s_star=None, contrast=None) -> float:
    cz, czp = data.z_code(z), data.z_code(z_prime)
    cells = _Cells(data)
    if cells.n0 == 0:
        raise EmptyCell("no target rows")

    if which == PSI_OUTCOME:
        return sum(w * cells.trial_diff(x, s_star, cz, czp)
                   for x, w in cells.target_distribution())

    if which == PSI_WEIGHTING:
        # literal weighting form with exact cell probabilities
        for x, _ in cells.target_distribution():  # positivity, loud
            cells.trial_diff(x, s_star, cz, czp)
        total = 0.0
        for (x, s, zc), rows in cells.by_xsz.items():
            if s != s_star or zc not in (cz, czp):
                continue
            n_x0 = cells.target_counts.get(x, 0)
            if n_x0 == 0:
                continue
            n_xs = len(cells.by_xs[(x, s)])
            prob = len(rows) / n_xs
            sign = 1.0 if zc == cz else -1.0
            odds = n_x0 / n_xs
            total += sign * float(np.sum(data.y[rows])) / prob * odds
        return total / cells.n0

    trials = list(data.trials)

    if which == PHI_OUTCOME:
        return sum(w * cells.pooled_diff(x, cz, czp, trials)
                   for x, w in cells.target_distribution())

    if which == PHI_WEIGHTING:
        for x, _ in cells.target_distribution():  # same support requirements
            cells.pooled_diff(x, cz, czp, trials)
        total = 0.0
        for (x, s, zc), rows in cells.by_xsz.items():
            if zc not in (cz, czp):
                continue
            n_x0 = cells.target_counts.get(x, 0)
            if n_x0 == 0:
                continue
            n_xS = sum(len(cells.by_xs.get((x, t), ())) for t in trials)
            prob = len(rows) / len(cells.by_xs[(x, s)])
            sign = 1.0 if zc == cz else -1.0
            odds = n_x0 / n_xS
            total += sign * float(np.sum(data.y[rows])) / prob * odds
        return total / cells.n0

    raise EmptyCell(f"unknown functional {which!r}")


def _theta_at(data: CompositeDataset, x, s, z: str, a: str) -> float:
    """Nested expectation E[E[Y | X, S, Z, L, A=a] | X, S, Z=z] at one x cell."""
    cz = data.z_code(z)
    ca = data.a_code(a)
    keys = _xkeys(data)
    arm_rows = [i for i in range(data.n)
                if keys[i] == x and int(data.s[i]) == s and int(data.z_codes[i]) == cz]
    if not arm_rows:
        raise EmptyCell(f"no rows with X={x}, S={s}, Z={z!r}")
    by_l: dict = defaultdict(list)
    for i in arm_rows:
        lkey = () if data.l is None else tuple(data.l[i])
        by_l[lkey].append(i)
    total = 0.0
    for lkey, rows in by_l.items():
        a_rows = [i for i in rows if int(data.a_codes[i]) == ca]
        if not a_rows:
            raise EmptyCell(f"no rows with X={x}, S={s}, Z={z!r}, L={lkey}, A={a!r}")
        total += len(rows) / len(arm_rows) * _cell_means(data.y[a_rows])
    return total


def _per_protocol(data: CompositeDataset, contrast, s_star=None) -> float:
    z, a, zp, ap = contrast
    cells = _Cells(data)
    trials = [s_star] if s_star is not None else list(data.trials)
    total = 0.0
    for x, w in cells.target_distribution():
        sizes = {s: len(cells.by_xs.get((x, s), ())) for s in trials}
        n_xS = sum(sizes.values())
        if n_xS == 0:
            raise EmptyCell(f"no trial rows with X={x}")
        lam = sum(
            sizes[s] / n_xS * (_theta_at(data, x, s, z, a) - _theta_at(data, x, s, zp, ap))
            for s in trials if sizes[s]
        )
        total += w * lam
    return total


def enumerate_functional(source, which: str, z: str, z_prime: str,
                         s_star: int | None = None,
                         contrast=None) -> OracleResult:
    """Evaluate one identification functional exactly.

    ``source`` is a discrete-covariate dataset (empirical enumeration) or a
    SimWorld (population closed form).  ``contrast`` holds (z, a, z', a') for
    the per-protocol functionals.
    """
    if isinstance(source, SimWorld):
        if which in (PSI_OUTCOME, PSI_WEIGHTING, PHI_OUTCOME, PHI_WEIGHTING):
            value = truth_itt(source, z, z_prime)
        elif which == PP:
            value = truth_pp(source, *contrast)
        else:
            raise EmptyCell(f"no closed form for functional {which!r}")
        return OracleResult(functional=which, value=value, computed_by="population closed form")

    data: CompositeDataset = source
    if which in (PSI_OUTCOME, PSI_WEIGHTING, PHI_OUTCOME, PHI_WEIGHTING):
        if z == z_prime:
            value = 0.0
        else:
            value = _empirical(data, which, z, z_prime, s_star=s_star)
    elif which == PP:
        if (contrast[0], contrast[1]) == (contrast[2], contrast[3]):
            value = 0.0
        else:
            value = _per_protocol(data, contrast, s_star=s_star)
    else:
        raise EmptyCell(f"unknown functional {which!r}")
    return OracleResult(functional=which, value=float(value),
                        computed_by="empirical enumeration")


def enumerate_theta(data: CompositeDataset, s_star: int, z: str, a: str) -> OracleResult:
    """Target-averaged nested mean for one (assigned, received) pair."""
    cells = _Cells(data)
    value = sum(w * _theta_at(data, x, s_star, z, a)
                for x, w in cells.target_distribution())
    return OracleResult(functional=THETA, value=float(value),
                        computed_by="empirical enumeration")


def enumerate_lambda(data: CompositeDataset, contrast) -> OracleResult:
    """Target-averaged common per-protocol difference pooled over trials."""
    value = _per_protocol(data, contrast, s_star=None)
    return OracleResult(functional=LAMBDA, value=float(value),
                        computed_by="empirical enumeration")
