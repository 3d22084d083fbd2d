"""Pool every trial in the collection and transport the common effect.

The common conditional mean difference is estimated by regressing an
inverse-probability transformed outcome on covariates over all trial rows
(phi_te), or bypassed entirely with inverse-odds weighting of trial
outcomes (phi_w).  Assignment models are fitted per trial, so trials may
randomize with different ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import CompositeDataset
from .errors import TrialLacksArm
from .estimates import ContrastEstimate
from .glm import LINEAR, DesignSpec, FittedGlm, fit_design, main_effects
from .inference import EstimatingStack, StackBlock, build_stack, sandwich_variance
from .models import (
    EstimatedTreatment,
    check_trial_arms,
    fit_treatment_models,
    participation_odds,
)
from .transport_single import (
    _target_quantities,
    _zero_estimate,
    estimate_psi_te,
    estimate_psi_w,
    unadjusted_trial_effect,
)


@dataclass
class TauModel:
    """Linear model of the transformed outcome over the pooled trial rows."""

    t_fit: FittedGlm
    treatment_models: dict
    design: DesignSpec


@dataclass
class OmegaWeights:
    """Per-row pooled inverse-probability treatment weights (zero off-trial)."""

    values: np.ndarray


@dataclass
class UTransform:
    u: np.ndarray
    treatment_models: dict
    iz: np.ndarray
    izp: np.ndarray
    pooled_mask: np.ndarray
    trials: tuple[int, ...]


@dataclass
class PhiTeResult:
    estimate: ContrastEstimate
    tau: TauModel | None
    stack: EstimatingStack | None
    config: dict[str, Any] = field(default_factory=dict)


@dataclass
class PhiWResult:
    estimate: ContrastEstimate
    participation: FittedGlm | None
    treatment_models: dict | None
    omega: OmegaWeights | None
    stack: EstimatingStack | None
    config: dict[str, Any] = field(default_factory=dict)


@dataclass
class SweepResult:
    estimates: list[ContrastEstimate]
    failures: dict[int, str]


def effective_trials(data: CompositeDataset, z: str, z_prime: str,
                     restrict_collection: bool):
    """Trials usable for this contrast; optionally drop those lacking an arm."""
    if not restrict_collection:
        check_trial_arms(data, data.trials, z, z_prime)
        return list(data.trials), []
    kept, dropped = [], []
    for s in data.trials:
        arms = set(data.trial_arms(s))
        (kept if {z, z_prime} <= arms else dropped).append(s)
    if not kept:
        raise TrialLacksArm(f"no trial carries both arms {z!r} and {z_prime!r}")
    return kept, dropped


def build_transformed_outcome(data: CompositeDataset, z: str, z_prime: str,
                              treatment_models=None,
                              trials=None) -> UTransform:
    """Per-row transformed outcome U over the pooled trial rows.

    U is the inverse-probability contrast of Y for rows assigned z or
    z_prime and zero for other arms; its conditional mean given covariates
    equals the trial's conditional mean difference.
    """
    trials = list(data.trials) if trials is None else list(trials)
    check_trial_arms(data, trials, z, z_prime)
    if treatment_models is None:
        treatment_models = EstimatedTreatment()
    fitted = fit_treatment_models(data, trials, treatment_models, z, z_prime)
    cz, czp = data.z_code(z), data.z_code(z_prime)
    pooled_mask = np.isin(data.s, trials)
    iz = (pooled_mask & (data.z_codes == cz)).astype(np.float64)
    izp = (pooled_mask & (data.z_codes == czp)).astype(np.float64)
    y = np.where(np.isnan(data.y), 0.0, data.y)
    u = np.zeros(data.n)
    for s in trials:
        tm = fitted[s]
        in_s = data.s == s
        rows_z = np.flatnonzero(in_s & (iz > 0))
        rows_zp = np.flatnonzero(in_s & (izp > 0))
        u[rows_z] = y[rows_z] / tm.prob(data, z)[rows_z]
        u[rows_zp] = -y[rows_zp] / tm.prob(data, z_prime)[rows_zp]
    return UTransform(u=u, treatment_models=fitted, iz=iz, izp=izp,
                      pooled_mask=pooled_mask, trials=tuple(trials))


def _treatment_blocks(data, ut: UTransform):
    blocks = []
    for s in ut.trials:
        tm = ut.treatment_models[s]
        if tm.n_params:
            blocks.append(StackBlock(f"treatment_{s}", tm.model.score_matrix(),
                                     tm.model.score_jacobian(data.n), tm.model.beta.ravel()))
    return blocks


def _du_dgamma(data, ut: UTransform, s, z, z_prime, scale):
    """(n, k_s) derivative of scale_i * U-like terms wrt trial-s assignment params."""
    tm = ut.treatment_models[s]
    in_s = (data.s == s).astype(np.float64)
    d = (ut.iz * in_s)[:, None] * tm.d_inv_prob(data, z) \
        - (ut.izp * in_s)[:, None] * tm.d_inv_prob(data, z_prime)
    return scale[:, None] * d


def estimate_phi_te(data: CompositeDataset, z: str, z_prime: str,
                    tau_design: DesignSpec | None = None,
                    treatment_models=None, *,
                    restrict_collection: bool = False,
                    variance: str = "sandwich", level: float = 0.95) -> PhiTeResult:
    """Pooled outcome-model estimator: regress U on covariates, standardize
    the fitted common mean difference to the target sample."""
    n_used = {"target": data.n_s.get(0, 0), "pooled": int((data.s > 0).sum())}
    if z == z_prime:
        return PhiTeResult(estimate=_zero_estimate("phi_te", z, "pooled", n_used, level),
                           tau=None, stack=None)
    trials, dropped = effective_trials(data, z, z_prime, restrict_collection)
    design = tau_design if tau_design is not None else main_effects(data.covariate_names)
    ut = build_transformed_outcome(data, z, z_prime, treatment_models, trials)
    pooled_rows = np.flatnonzero(ut.pooled_mask)
    n_used["pooled"] = len(pooled_rows)
    t_fit = fit_design(data.columns(), pooled_rows, ut.u, design, LINEAR)
    target, i0, pi0 = _target_quantities(data)
    t_hat = t_fit.mean()
    point = float(t_hat[target].mean())

    warnings = []
    if dropped:
        warnings.append({"kind": "restricted_collection", "dropped_trials": dropped,
                         "effective_trials": list(trials)})
    estimate = ContrastEstimate(
        estimator="phi_te", z=z, z_prime=z_prime, source="pooled",
        point=point, level=level, n_used=n_used, warnings=warnings,
    )
    tau = TauModel(t_fit=t_fit, treatment_models=ut.treatment_models, design=design)
    cfg = {"z": z, "z_prime": z_prime, "design": design,
           "treatment": treatment_models, "restrict_collection": restrict_collection,
           "level": level}
    if variance == "none":
        return PhiTeResult(estimate=estimate, tau=tau, stack=None, config=cfg)

    blocks = _treatment_blocks(data, ut)
    blocks.append(StackBlock("tau", t_fit.score_matrix(),
                             t_fit.score_jacobian(data.n), t_fit.beta))
    phi_scores = (i0 * (t_hat - point))[:, None]
    blocks.append(StackBlock("phi", phi_scores, np.array([[-pi0]]), np.array([point])))
    cross = {("phi", "tau"): (i0[:, None] * t_fit.X).mean(axis=0, keepdims=True)}
    y = np.where(np.isnan(data.y), 0.0, data.y)
    for s in trials:
        tm = ut.treatment_models[s]
        if tm.n_params:
            du = _du_dgamma(data, ut, s, z, z_prime, y)
            cross[("tau", f"treatment_{s}")] = t_fit.X.T @ du / data.n
    stack = build_stack(blocks, cross, target="phi")
    sand = sandwich_variance(stack, data.n, level)
    estimate.variance, estimate.ci, estimate.ci_method = sand.variance, sand.ci, "sandwich"
    return PhiTeResult(estimate=estimate, tau=tau, stack=stack, config=cfg)


def estimate_phi_w(data: CompositeDataset, z: str, z_prime: str,
                   participation_design: DesignSpec | None = None,
                   treatment_models=None, *,
                   restrict_collection: bool = False,
                   variance: str = "sandwich", level: float = 0.95,
                   truncate_odds_at: float | None = None,
                   odds_warning_cap: float = 100.0) -> PhiWResult:
    """Pooled weighting estimator: inverse assignment probabilities times the
    target-vs-collection participation odds."""
    n_used = {"target": data.n_s.get(0, 0), "pooled": int((data.s > 0).sum())}
    if z == z_prime:
        return PhiWResult(estimate=_zero_estimate("phi_w", z, "pooled", n_used, level),
                          participation=None, treatment_models=None, omega=None, stack=None)
    trials, dropped = effective_trials(data, z, z_prime, restrict_collection)
    part_design = (participation_design if participation_design is not None
                   else main_effects(data.covariate_names))
    ut = build_transformed_outcome(data, z, z_prime, treatment_models, trials)
    pooled_rows = np.flatnonzero(ut.pooled_mask)
    n_used["pooled"] = len(pooled_rows)
    target, i0, pi0 = _target_quantities(data)
    n0 = len(target)

    fit_rows = np.flatnonzero((data.s == 0) | ut.pooled_mask)
    contributing = np.flatnonzero((ut.iz + ut.izp) > 0)
    odds = participation_odds(data, fit_rows, part_design, contributing,
                              truncate_odds_at, odds_warning_cap)

    # inverse-probability treatment part of the weight, zero off the contrast arms
    omega = np.zeros(data.n)
    for s in trials:
        tm = ut.treatment_models[s]
        in_s = data.s == s
        rows_z = np.flatnonzero(in_s & (ut.iz > 0))
        rows_zp = np.flatnonzero(in_s & (ut.izp > 0))
        omega[rows_z] = 1.0 / tm.prob(data, z)[rows_z]
        omega[rows_zp] = -1.0 / tm.prob(data, z_prime)[rows_zp]
    y = np.where(np.isnan(data.y), 0.0, data.y)
    wy = omega * odds.odds * y
    point = float(wy.sum() / n0)

    warnings = list(odds.warnings)
    if dropped:
        warnings.append({"kind": "restricted_collection", "dropped_trials": dropped,
                         "effective_trials": list(trials)})
    estimate = ContrastEstimate(
        estimator="phi_w", z=z, z_prime=z_prime, source="pooled",
        point=point, level=level, n_used=n_used, warnings=warnings,
    )
    cfg = {"z": z, "z_prime": z_prime, "participation_design": part_design,
           "treatment": treatment_models, "restrict_collection": restrict_collection,
           "level": level, "truncate_odds_at": truncate_odds_at,
           "odds_warning_cap": odds_warning_cap}
    if variance == "none":
        return PhiWResult(estimate=estimate, participation=odds.model,
                          treatment_models=ut.treatment_models,
                          omega=OmegaWeights(omega), stack=None, config=cfg)

    part_model = odds.model
    blocks = [StackBlock("participation", part_model.score_matrix(),
                         part_model.score_jacobian(data.n), part_model.beta)]
    blocks.extend(_treatment_blocks(data, ut))
    phi_scores = (wy - i0 * point)[:, None]
    blocks.append(StackBlock("phi", phi_scores, np.array([[-pi0]]), np.array([point])))
    act = odds.active.astype(np.float64)
    cross = {
        ("phi", "participation"):
            ((act * wy)[:, None] * part_model.X).mean(axis=0, keepdims=True),
    }
    for s in trials:
        tm = ut.treatment_models[s]
        if tm.n_params:
            du = _du_dgamma(data, ut, s, z, z_prime, odds.odds * y)
            cross[("phi", f"treatment_{s}")] = du.mean(axis=0, keepdims=True)
    stack = build_stack(blocks, cross, target="phi")
    sand = sandwich_variance(stack, data.n, level)
    estimate.variance, estimate.ci, estimate.ci_method = sand.variance, sand.ci, "sandwich"
    return PhiWResult(estimate=estimate, participation=odds.model,
                      treatment_models=ut.treatment_models, omega=OmegaWeights(omega),
                      stack=stack, config=cfg)


def per_trial_transport_sweep(data: CompositeDataset, z: str, z_prime: str, *,
                              outcome_design: DesignSpec | None = None,
                              participation_design: DesignSpec | None = None,
                              treatment=None, family: str = LINEAR,
                              include_unadjusted: bool = True,
                              variance: str = "sandwich",
                              level: float = 0.95) -> SweepResult:
    """psi_te and psi_w (plus crude differences) for every trial, one table."""
    estimates: list[ContrastEstimate] = []
    failures: dict[int, str] = {}
    for s in data.trials:
        try:
            row: list[ContrastEstimate] = []
            if include_unadjusted:
                row.append(unadjusted_trial_effect(data, s, z, z_prime,
                                                   variance=variance, level=level).estimate)
            row.append(estimate_psi_te(data, s, z, z_prime, outcome_design,
                                       family=family, variance=variance, level=level).estimate)
            row.append(estimate_psi_w(data, s, z, z_prime, participation_design,
                                      treatment, variance=variance, level=level).estimate)
            estimates.extend(row)
        except Exception as exc:  # noqa: BLE001 - per-trial failures must not kill the sweep
            failures[s] = f"{type(exc).__name__}: {exc}"
    return SweepResult(estimates=estimates, failures=failures)
