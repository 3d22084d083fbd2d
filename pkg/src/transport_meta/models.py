"""Treatment-probability and participation-odds model plumbing.

Treatment assignment probabilities Pr[Z = z | X, S] are either supplied
(documented randomization ratios) or estimated per trial: a binary logistic
fit when the trial has two observed arms, a multinomial fit otherwise.
Participation odds Pr[S = 0 | ...] / Pr[S != 0 | ...] come from a binary
logistic fit of the target indicator, so the odds equal exp(linear
predictor) and their derivative with respect to the coefficients is simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dataset import CompositeDataset
from .errors import ArmMissing, ConfigError, ProbabilityOutOfRange, TrialLacksArm
from .glm import BINARY_LOGIT, MULTINOMIAL_LOGIT, DesignSpec, FittedGlm, fit_design


@dataclass(frozen=True)
class KnownTreatment:
    """Known assignment probabilities: flat {arm: p} or nested {trial: {arm: p}}."""

    probabilities: Mapping

    def prob_for(self, trial: int, arm: str) -> float:
        table = self.probabilities
        if trial in table or str(trial) in table:
            table = table.get(trial, table.get(str(trial)))
        try:
            p = float(table[arm])
        except (KeyError, TypeError):
            raise ConfigError(
                f"no known treatment probability for arm {arm!r} in trial {trial}"
            ) from None
        if not 0.0 < p < 1.0:
            raise ProbabilityOutOfRange(
                f"known probability {p} for arm {arm!r} in trial {trial} is outside (0, 1)"
            )
        return p


@dataclass(frozen=True)
class EstimatedTreatment:
    """Estimate Pr[Z | X, S] per trial with this design (default intercept-only)."""

    design: DesignSpec = DesignSpec()


@dataclass
class TrialTreatmentModel:
    """Fitted (or known) treatment-assignment probabilities for one trial."""

    trial: int
    kind: str  # "known" | "binary" | "multinomial"
    rows: np.ndarray
    model: FittedGlm | None = None
    known: dict[str, float] | None = None
    arm_codes: tuple[int, ...] = ()
    response_code: int | None = None  # binary fits: arm coded as 1

    @property
    def n_params(self) -> int:
        return 0 if self.model is None else self.model.n_params

    def prob(self, data: CompositeDataset, arm: str) -> np.ndarray:
        """Pr[Z = arm | X, S = trial] on every row (meaningful on trial rows)."""
        n = data.n
        if self.kind == "known":
            return np.full(n, self.known[arm])
        code = data.z_code(arm)
        if self.kind == "binary":
            p1 = self.model.mean()
            return p1 if code == self.response_code else 1.0 - p1
        return self.model.prob_of(code)

    def d_inv_prob(self, data: CompositeDataset, arm: str) -> np.ndarray:
        """(n, n_params) derivative of 1 / Pr[Z = arm | X, S] wrt the fit params.

        Rows off this trial get whatever the model extrapolates; callers mask
        them out, so denominators are only clipped to keep those rows finite.
        """
        if self.kind == "known":
            return np.zeros((data.n, 0))
        X = self.model.X
        code = data.z_code(arm)
        if self.kind == "binary":
            p1 = np.clip(self.model.mean(), 1e-300, 1.0 - 1e-16)
            if code == self.response_code:
                w = -(1.0 - p1) / p1
            else:
                w = p1 / (1.0 - p1)
            return w[:, None] * X
        probs = self.model.prob_matrix()
        cats = self.model.categories
        k = cats.index(code)
        p_k = np.clip(probs[:, k], 1e-300, None)
        pieces = []
        for l in range(1, len(cats)):
            delta = 1.0 if l == k else 0.0
            w = -(delta - probs[:, l]) / p_k
            pieces.append(w[:, None] * X)
        return np.concatenate(pieces, axis=1)


def check_trial_arms(data: CompositeDataset, trials, z: str, z_prime: str,
                     single: bool = False):
    """Every trial must carry both contrast arms; error names the offenders."""
    offenders = []
    for s in trials:
        arms = set(data.trial_arms(s))
        missing = {z, z_prime} - arms
        if missing:
            offenders.append((s, sorted(missing)))
    if offenders:
        msg = "; ".join(f"trial {s} lacks arm(s) {miss}" for s, miss in offenders)
        raise (ArmMissing if single else TrialLacksArm)(msg)


def fit_treatment_models(data: CompositeDataset, trials, spec,
                         z: str, z_prime: str) -> dict[int, TrialTreatmentModel]:
    """One treatment model per trial, over all of that trial's observed arms."""
    out: dict[int, TrialTreatmentModel] = {}
    columns = data.columns()
    for s in trials:
        rows = data.stratum_view(s)
        if isinstance(spec, KnownTreatment):
            known = {arm: spec.prob_for(s, arm) for arm in {z, z_prime}}
            out[s] = TrialTreatmentModel(trial=s, kind="known", rows=rows, known=known)
            continue
        if not isinstance(spec, EstimatedTreatment):
            raise ConfigError(f"bad treatment model spec {spec!r}")
        codes = tuple(int(c) for c in np.unique(data.z_codes[rows]) if c >= 0)
        if len(codes) < 2:
            raise TrialLacksArm(f"trial {s} has a single arm; cannot estimate assignment model")
        if len(codes) == 2:
            resp_code = codes[1]
            response = (data.z_codes == resp_code).astype(np.float64)
            model = fit_design(columns, rows, response, spec.design, BINARY_LOGIT)
            out[s] = TrialTreatmentModel(
                trial=s, kind="binary", rows=rows, model=model,
                arm_codes=codes, response_code=resp_code,
            )
        else:
            model = fit_design(columns, rows, _codes_to_index(data.z_codes, codes),
                               spec.design, MULTINOMIAL_LOGIT, categories=codes)
            out[s] = TrialTreatmentModel(
                trial=s, kind="multinomial", rows=rows, model=model, arm_codes=codes,
            )
    return out


def _codes_to_index(z_codes: np.ndarray, codes: tuple[int, ...]) -> np.ndarray:
    """Map arm codes to 0..K-1 category indices (rows off the trial get 0)."""
    idx = np.zeros(len(z_codes), dtype=np.float64)
    for i, c in enumerate(codes):
        idx[z_codes == c] = float(i)
    return idx


@dataclass
class ParticipationOdds:
    """Fitted target-participation odds exp(alpha' x), optionally truncated."""

    model: FittedGlm
    odds: np.ndarray
    untruncated: np.ndarray
    active: np.ndarray  # rows whose odds still vary with alpha (not capped)
    warnings: list[dict] = field(default_factory=list)


def participation_odds(data: CompositeDataset, fit_rows: np.ndarray,
                       design: DesignSpec, contributing: np.ndarray,
                       truncate_at: float | None = None,
                       warn_cap: float = 100.0) -> ParticipationOdds:
    """Fit Pr[S=0 | ...] on ``fit_rows`` and return odds over all rows.

    ``contributing`` is an index array of the trial rows whose odds actually
    enter a weighting estimator; truncation (an odds quantile in (0, 1]) and
    the extreme-weight warning look only at those rows.
    """
    response = (data.s == 0).astype(np.float64)
    model = fit_design(data.columns(), fit_rows, response, design, BINARY_LOGIT)
    eta = model.linear_predictor()
    odds = np.exp(eta)
    warnings: list[dict] = []
    contributing = np.asarray(contributing, dtype=np.int64)
    used = odds[contributing]
    if used.size and float(used.max()) > warn_cap:
        warnings.append({
            "kind": "extreme_weight",
            "max_odds": float(used.max()),
            "cap": warn_cap,
            "n_above": int((used > warn_cap).sum()),
        })
    active = np.ones(data.n, dtype=bool)
    truncated = odds
    if truncate_at is not None:
        if not 0.0 < truncate_at <= 1.0:
            raise ConfigError(f"truncation quantile must be in (0, 1], got {truncate_at}")
        cap_value = float(np.quantile(used, truncate_at)) if used.size else np.inf
        truncated = np.minimum(odds, cap_value)
        active = odds <= cap_value
        warnings.append({
            "kind": "odds_truncated",
            "quantile": truncate_at,
            "cap_value": cap_value,
            "n_capped": int((used > cap_value).sum()),
        })
    return ParticipationOdds(model=model, odds=truncated, untruncated=odds,
                             active=active, warnings=warnings)
