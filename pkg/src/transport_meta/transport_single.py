"""Transport the effect of one trial to the target population.

Two estimators: outcome-model standardization over the target covariate
distribution (psi_te) and inverse-odds weighting of trial outcomes (psi_w).
Both normalize by the target sample size, and both can absorb a
user-specified bias adjustment evaluated on the target rows (sensitivity
analysis).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import CompositeDataset
from .errors import ArmMissing
from .estimates import ContrastEstimate
from .glm import LINEAR, DesignSpec, FittedGlm, fit_design, main_effects
from .inference import EstimatingStack, StackBlock, build_stack, sandwich_variance, wald_ci
from .models import (
    EstimatedTreatment,
    KnownTreatment,
    check_trial_arms,
    fit_treatment_models,
    participation_odds,
)


@dataclass
class CateModel:
    """Conditional-mean-difference model: an outcome-model pair or a
    transformed-outcome regression (pooled path)."""

    h_z: FittedGlm | None = None
    h_zprime: FittedGlm | None = None
    g_estimator: FittedGlm | None = None


@dataclass
class PsiTeResult:
    estimate: ContrastEstimate
    cate: CateModel
    stack: EstimatingStack | None
    config: dict[str, Any] = field(default_factory=dict)


@dataclass
class PsiWResult:
    estimate: ContrastEstimate
    participation: FittedGlm
    treatment: Any
    stack: EstimatingStack | None
    config: dict[str, Any] = field(default_factory=dict)


@dataclass
class UnadjustedResult:
    estimate: ContrastEstimate
    stack: EstimatingStack | None


def _zero_estimate(name: str, z: str, source: str, n_used: dict, level: float) -> ContrastEstimate:
    return ContrastEstimate(
        estimator=name, z=z, z_prime=z, source=source, point=0.0,
        variance=0.0, ci=(0.0, 0.0), level=level, ci_method="degenerate",
        n_used=n_used,
    )


def _target_quantities(data: CompositeDataset):
    target = data.stratum_view("target")
    i0 = np.zeros(data.n)
    i0[target] = 1.0
    return target, i0, len(target) / data.n


def estimate_psi_te(data: CompositeDataset, s_star: int, z: str, z_prime: str,
                    outcome_design: DesignSpec | None = None, *,
                    family: str = LINEAR, variance: str = "sandwich",
                    level: float = 0.95,
                    bias_values: np.ndarray | None = None) -> PsiTeResult:
    """Outcome-model transport of the (z vs z_prime) effect of trial ``s_star``.

    Fits one outcome model per arm on the trial rows, then averages the
    difference of model predictions over the target sample.
    """
    data.stratum_view(s_star)
    n_used = {
        "target": data.n_s.get(0, 0),
        f"trial_{s_star}": data.n_s.get(s_star, 0),
    }
    if z == z_prime:
        return PsiTeResult(
            estimate=_zero_estimate("psi_te", z, str(s_star), n_used, level),
            cate=CateModel(), stack=None,
        )
    check_trial_arms(data, [s_star], z, z_prime, single=True)
    design = outcome_design if outcome_design is not None else main_effects(data.covariate_names)
    columns = data.columns()
    cz, czp = data.z_code(z), data.z_code(z_prime)
    rows_z = np.flatnonzero((data.s == s_star) & (data.z_codes == cz))
    rows_zp = np.flatnonzero((data.s == s_star) & (data.z_codes == czp))
    n_used["arm_z"], n_used["arm_zprime"] = len(rows_z), len(rows_zp)
    y = np.where(np.isnan(data.y), 0.0, data.y)
    h_z = fit_design(columns, rows_z, y, design, family)
    h_zp = fit_design(columns, rows_zp, y, design, family)

    target, i0, pi0 = _target_quantities(data)
    mu_z, mu_zp = h_z.mean(), h_zp.mean()
    diff = mu_z - mu_zp
    u = np.zeros(data.n) if bias_values is None else np.asarray(bias_values, dtype=np.float64)
    point = float(np.mean(diff[target] + u[target]))

    estimate = ContrastEstimate(
        estimator="psi_te", z=z, z_prime=z_prime, source=str(s_star),
        point=point, level=level, n_used=n_used,
    )
    cfg = {"s_star": s_star, "z": z, "z_prime": z_prime, "design": design,
           "family": family, "level": level}
    if variance == "none":
        return PsiTeResult(estimate=estimate, cate=CateModel(h_z=h_z, h_zprime=h_zp),
                           stack=None, config=cfg)

    psi_scores = (i0 * (diff + u - point))[:, None]
    blocks = [
        StackBlock("h_z", h_z.score_matrix(), h_z.score_jacobian(data.n), h_z.beta),
        StackBlock("h_zp", h_zp.score_matrix(), h_zp.score_jacobian(data.n), h_zp.beta),
        StackBlock("psi", psi_scores, np.array([[-pi0]]), np.array([point])),
    ]
    d_z, d_zp = h_z.d_mean_dbeta(), h_zp.d_mean_dbeta()
    cross = {
        ("psi", "h_z"): (i0[:, None] * d_z).mean(axis=0, keepdims=True),
        ("psi", "h_zp"): -(i0[:, None] * d_zp).mean(axis=0, keepdims=True),
    }
    stack = build_stack(blocks, cross, target="psi")
    sand = sandwich_variance(stack, data.n, level)
    estimate.variance, estimate.ci, estimate.ci_method = sand.variance, sand.ci, "sandwich"
    return PsiTeResult(estimate=estimate, cate=CateModel(h_z=h_z, h_zprime=h_zp),
                       stack=stack, config=cfg)


def estimate_psi_w(data: CompositeDataset, s_star: int, z: str, z_prime: str,
                   participation_design: DesignSpec | None = None,
                   treatment=None, *,
                   variance: str = "sandwich", level: float = 0.95,
                   truncate_odds_at: float | None = None,
                   odds_warning_cap: float = 100.0,
                   bias_values: np.ndarray | None = None) -> PsiWResult:
    """Weighting transport of the (z vs z_prime) effect of trial ``s_star``.

    Weights are inverse assignment probabilities times the target-vs-trial
    participation odds, the latter fitted only on the target + s_star rows.
    """
    trial_rows = data.stratum_view(s_star)
    n_used = {"target": data.n_s.get(0, 0), f"trial_{s_star}": len(trial_rows)}
    if z == z_prime:
        return PsiWResult(
            estimate=_zero_estimate("psi_w", z, str(s_star), n_used, level),
            participation=None, treatment=None, stack=None,
        )
    check_trial_arms(data, [s_star], z, z_prime, single=True)
    if treatment is None:
        treatment = EstimatedTreatment()
    part_design = (participation_design if participation_design is not None
                   else main_effects(data.covariate_names))

    target, i0, pi0 = _target_quantities(data)
    n0 = len(target)
    cz, czp = data.z_code(z), data.z_code(z_prime)
    in_trial = data.s == s_star
    iz = (in_trial & (data.z_codes == cz)).astype(np.float64)
    izp = (in_trial & (data.z_codes == czp)).astype(np.float64)
    n_used["arm_z"], n_used["arm_zprime"] = int(iz.sum()), int(izp.sum())

    pair_rows = np.flatnonzero((data.s == 0) | in_trial)
    contributing = np.flatnonzero((iz + izp) > 0)
    odds = participation_odds(data, pair_rows, part_design, contributing,
                              truncate_odds_at, odds_warning_cap)

    tm = fit_treatment_models(data, [s_star], treatment, z, z_prime)[s_star]

    y = np.where(np.isnan(data.y), 0.0, data.y)
    w = np.zeros(data.n)
    rows_z = np.flatnonzero(iz > 0)
    rows_zp = np.flatnonzero(izp > 0)
    w[rows_z] = odds.odds[rows_z] / tm.prob(data, z)[rows_z]
    w[rows_zp] = -odds.odds[rows_zp] / tm.prob(data, z_prime)[rows_zp]
    wy = w * y
    u = np.zeros(data.n) if bias_values is None else np.asarray(bias_values, dtype=np.float64)
    point = float(wy.sum() / n0 + u[target].mean())

    estimate = ContrastEstimate(
        estimator="psi_w", z=z, z_prime=z_prime, source=str(s_star),
        point=point, level=level, n_used=n_used, warnings=list(odds.warnings),
    )
    cfg = {"s_star": s_star, "z": z, "z_prime": z_prime,
           "participation_design": part_design, "treatment": treatment,
           "level": level, "truncate_odds_at": truncate_odds_at,
           "odds_warning_cap": odds_warning_cap}
    if variance == "none":
        return PsiWResult(estimate=estimate, participation=odds.model,
                          treatment=tm, stack=None, config=cfg)

    psi_scores = (wy + i0 * (u - point))[:, None]
    part_model = odds.model
    blocks = [
        StackBlock("participation", part_model.score_matrix(),
                   part_model.score_jacobian(data.n), part_model.beta),
        StackBlock("psi", psi_scores, np.array([[-pi0]]), np.array([point])),
    ]
    act = odds.active.astype(np.float64)
    cross = {
        ("psi", "participation"):
            ((act * wy)[:, None] * part_model.X).mean(axis=0, keepdims=True),
    }
    if tm.n_params:
        blocks.insert(1, StackBlock("treatment", tm.model.score_matrix(),
                                    tm.model.score_jacobian(data.n), tm.model.beta.ravel()))
        d_term = (iz[:, None] * tm.d_inv_prob(data, z)
                  - izp[:, None] * tm.d_inv_prob(data, z_prime))
        cross[("psi", "treatment")] = \
            ((odds.odds * y)[:, None] * d_term).mean(axis=0, keepdims=True)
    stack = build_stack(blocks, cross, target="psi")
    sand = sandwich_variance(stack, data.n, level)
    estimate.variance, estimate.ci, estimate.ci_method = sand.variance, sand.ci, "sandwich"
    return PsiWResult(estimate=estimate, participation=odds.model, treatment=tm,
                      stack=stack, config=cfg)


def unadjusted_trial_effect(data: CompositeDataset, s: int, z: str, z_prime: str, *,
                            variance: str = "sandwich", level: float = 0.95) -> UnadjustedResult:
    """Crude arm-mean difference within one stratum.

    ``s = 0`` is allowed on benchmark/emulation datasets whose target rows
    carry outcomes; those live on the benchmark columns, so this is the only
    estimator that can see them.
    """
    if s == 0:
        if data.bench_y is None:
            raise ArmMissing("target sample carries no treatment/outcome data")
        z_codes, y = data.bench_z_codes, data.bench_y
        member = data.s == 0
    else:
        data.stratum_view(s)
        z_codes, y = data.z_codes, data.y
        member = data.s == s
    if z == z_prime:
        return UnadjustedResult(
            estimate=_zero_estimate("unadjusted", z, str(s), {}, level), stack=None)
    cz, czp = data.z_code(z), data.z_code(z_prime)
    iz = (member & (z_codes == cz)).astype(np.float64)
    izp = (member & (z_codes == czp)).astype(np.float64)
    nz, nzp = int(iz.sum()), int(izp.sum())
    if nz == 0 or nzp == 0:
        raise ArmMissing(f"stratum {s} lacks arm {z if nz == 0 else z_prime!r}")
    ysafe = np.where(np.isnan(y), 0.0, y)
    mu_z = float((iz * ysafe).sum() / nz)
    mu_zp = float((izp * ysafe).sum() / nzp)
    point = mu_z - mu_zp
    n_used = {"arm_z": nz, "arm_zprime": nzp}
    estimate = ContrastEstimate(
        estimator="unadjusted", z=z, z_prime=z_prime, source=str(s),
        point=point, level=level, n_used=n_used,
    )
    if variance == "none":
        return UnadjustedResult(estimate=estimate, stack=None)
    n = data.n
    blocks = [
        StackBlock("mu_z", (iz * (ysafe - mu_z))[:, None],
                   np.array([[-nz / n]]), np.array([mu_z])),
        StackBlock("mu_zp", (izp * (ysafe - mu_zp))[:, None],
                   np.array([[-nzp / n]]), np.array([mu_zp])),
        StackBlock("delta", np.full((n, 1), mu_z - mu_zp - point),
                   np.array([[-1.0]]), np.array([point])),
    ]
    cross = {
        ("delta", "mu_z"): np.array([[1.0]]),
        ("delta", "mu_zp"): np.array([[-1.0]]),
    }
    stack = build_stack(blocks, cross, target="delta")
    sand = sandwich_variance(stack, n, level)
    estimate.variance, estimate.ci, estimate.ci_method = sand.variance, sand.ci, "sandwich"
    return UnadjustedResult(estimate=estimate, stack=stack)
