"""Working models: linear, binary-logistic, and multinomial-logistic regression.

Fitting is maximum likelihood by Newton's method (iteratively reweighted
least squares) with step halving, no regularization anywhere.  Fitted models
expose per-row score contributions and averaged score Jacobians so that any
estimator built on top can be stacked into one sandwich variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import CompositeDataset
from .errors import (
    ConfigError,
    DimensionMismatch,
    InsufficientRows,
    NotConverged,
    Separation,
    Singular,
    UnknownCategory,
)

MAX_ITER = 100
COEF_TOL = 1e-8
SCORE_TOL = 1e-8
SEPARATION_PROB = 1e-10
RANK_TOL = 1e-10

LINEAR = "linear"
BINARY_LOGIT = "binary-logit"
MULTINOMIAL_LOGIT = "multinomial-logit"


@dataclass(frozen=True)
class DesignSpec:
    """Ordered covariate terms, with optional pairwise interactions "a:b".

    The intercept (default on) is prepended automatically and is not a term.
    """

    terms: tuple[str, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ConfigError(f"duplicate design terms in {self.terms}")

    @property
    def dim(self) -> int:
        return len(self.terms) + (1 if self.intercept else 0)


def main_effects(names: Sequence[str]) -> DesignSpec:
    return DesignSpec(terms=tuple(names))


def build_design(columns: Mapping[str, np.ndarray], spec: DesignSpec):
    """Design matrix over all rows of `columns`, plus feature names."""
    cols = []
    names = []
    n = None
    if spec.intercept:
        names.append("(intercept)")
    for term in spec.terms:
        parts = term.split(":")
        vals = None
        for p in parts:
            if p not in columns:
                raise ConfigError(f"design term {term!r}: unknown covariate {p!r}")
            v = np.asarray(columns[p], dtype=np.float64)
            vals = v if vals is None else vals * v
        cols.append(vals)
        names.append(term)
        n = len(vals)
    if n is None:
        n = len(next(iter(columns.values()))) if columns else 0
    if spec.intercept:
        cols.insert(0, np.ones(n))
    if not cols:
        raise ConfigError("empty design (no intercept and no terms)")
    return np.column_stack(cols), names


def _check_rank(xf: np.ndarray, names: Sequence[str]):
    if xf.shape[0] < xf.shape[1]:
        raise InsufficientRows(
            f"{xf.shape[0]} rows cannot identify {xf.shape[1]} coefficients"
        )
    sv = np.linalg.svd(xf, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < RANK_TOL:
        _, _, vt = np.linalg.svd(xf)
        null = np.abs(vt[-1])
        offenders = [nm for nm, w in zip(names, null) if w > 1e-3 * null.max()]
        raise Singular(f"design matrix is rank deficient; offending columns: {offenders}")


@dataclass
class FittedGlm:
    """A fitted working model plus everything the sandwich needs.

    ``beta`` is a vector for linear/binary fits and a (K-1, p) matrix for
    multinomial fits (first category is the reference).  ``X`` and ``y`` span
    the full dataset; ``fit_rows`` marks the rows the likelihood used.
    """

    family: str
    beta: np.ndarray
    design: DesignSpec
    fit_rows: np.ndarray
    converged: bool
    iterations: int
    feature_names: list[str]
    X: np.ndarray
    y: np.ndarray
    categories: tuple | None = None

    @property
    def n_params(self) -> int:
        return int(self.beta.size)

    # -- predictions -------------------------------------------------------

    def linear_predictor(self, X: np.ndarray | None = None) -> np.ndarray:
        X = self.X if X is None else X
        if self.family == MULTINOMIAL_LOGIT:
            return X @ self.beta.T
        return X @ self.beta

    def mean(self, X: np.ndarray | None = None) -> np.ndarray:
        """E[response | design row]; probability of 1 for binary fits."""
        eta = self.linear_predictor(X)
        if self.family == LINEAR:
            return eta
        if self.family == BINARY_LOGIT:
            return _expit(eta)
        raise UnknownCategory("multinomial fits predict per-category probabilities")

    def prob_matrix(self, X: np.ndarray | None = None) -> np.ndarray:
        """(n, K) category probabilities for multinomial fits."""
        if self.family != MULTINOMIAL_LOGIT:
            raise UnknownCategory("prob_matrix is for multinomial fits")
        eta = self.linear_predictor(X)
        full = np.column_stack([np.zeros(len(eta)), eta])
        full -= full.max(axis=1, keepdims=True)
        e = np.exp(full)
        return e / e.sum(axis=1, keepdims=True)

    def prob_of(self, category, X: np.ndarray | None = None) -> np.ndarray:
        if self.family == BINARY_LOGIT:
            p1 = self.mean(X)
            if category == 1:
                return p1
            if category == 0:
                return 1.0 - p1
            raise UnknownCategory(f"binary fit has categories (0, 1), not {category!r}")
        probs = self.prob_matrix(X)
        try:
            k = self.categories.index(category)
        except (ValueError, AttributeError):
            raise UnknownCategory(
                f"unknown category {category!r}; have {self.categories}"
            ) from None
        return probs[:, k]

    def d_mean_dbeta(self, X: np.ndarray | None = None) -> np.ndarray:
        """(n, p) derivative of the predicted mean wrt beta (linear/binary)."""
        X = self.X if X is None else X
        if self.family == LINEAR:
            return X
        if self.family == BINARY_LOGIT:
            p = _expit(X @ self.beta)
            return (p * (1.0 - p))[:, None] * X
        raise UnknownCategory("d_mean_dbeta is for linear/binary fits")

    # -- estimating-function pieces -----------------------------------------

    def score_matrix(self) -> np.ndarray:
        """(n, n_params) per-row scores; zero outside fit rows."""
        n = self.X.shape[0]
        out = np.zeros((n, self.n_params))
        rows = self.fit_rows
        Xf = self.X[rows]
        if self.family == LINEAR:
            resid = self.y[rows] - Xf @ self.beta
            out[rows] = Xf * resid[:, None]
        elif self.family == BINARY_LOGIT:
            p = _expit(Xf @ self.beta)
            out[rows] = Xf * (self.y[rows] - p)[:, None]
        else:
            probs = self.prob_matrix(Xf)
            ycode = self.y[rows].astype(np.int64)
            p_ = Xf.shape[1]
            for k in range(1, len(self.categories)):
                ind = (ycode == k).astype(np.float64)
                out[rows, (k - 1) * p_: k * p_] = Xf * (ind - probs[:, k])[:, None]
        return out

    def score_jacobian(self, n_total: int) -> np.ndarray:
        """(n_params, n_params) averaged derivative of per-row scores wrt beta.

        The average is over ``n_total`` rows so blocks from fits on different
        row subsets stack consistently.
        """
        rows = self.fit_rows
        Xf = self.X[rows]
        p_ = Xf.shape[1]
        if self.family == LINEAR:
            return -(Xf.T @ Xf) / n_total
        if self.family == BINARY_LOGIT:
            p = _expit(Xf @ self.beta)
            w = p * (1.0 - p)
            return -(Xf.T @ (w[:, None] * Xf)) / n_total
        probs = self.prob_matrix(Xf)
        K = len(self.categories)
        out = np.zeros((self.n_params, self.n_params))
        for k in range(1, K):
            for l in range(1, K):
                w = probs[:, k] * ((1.0 if k == l else 0.0) - probs[:, l])
                out[(k - 1) * p_: k * p_, (l - 1) * p_: l * p_] = -(Xf.T @ (w[:, None] * Xf)) / n_total
        return out


def _expit(eta):
    out = np.empty_like(eta, dtype=np.float64)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _binary_nll(eta, y):
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _fit_linear(X, y, rows, names):
    Xf, yf = X[rows], y[rows]
    if Xf.shape[0] < Xf.shape[1] + 1:
        raise InsufficientRows(
            f"linear fit needs at least {Xf.shape[1] + 1} rows, got {Xf.shape[0]}"
        )
    _check_rank(Xf, names)
    beta = np.linalg.solve(Xf.T @ Xf, Xf.T @ yf)
    return beta, True, 1


def _fit_binary(X, y, rows, names):
    Xf, yf = X[rows], y[rows].astype(np.float64)
    if Xf.shape[0] < Xf.shape[1] + 1:
        raise InsufficientRows(
            f"logistic fit needs at least {Xf.shape[1] + 1} rows, got {Xf.shape[0]}"
        )
    _check_rank(Xf, names)
    p_dim = Xf.shape[1]
    beta = np.zeros(p_dim)
    nll = _binary_nll(Xf @ beta, yf)
    for it in range(1, MAX_ITER + 1):
        eta = Xf @ beta
        prob = _expit(eta)
        score = Xf.T @ (yf - prob)
        if np.max(np.abs(score)) < SCORE_TOL:
            return beta, True, it
        w = prob * (1.0 - prob)
        hess = Xf.T @ (w[:, None] * Xf)
        try:
            delta = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            raise Separation("logistic fit: information matrix collapsed (fitted probabilities at 0/1)") from None
        step = 1.0
        new_beta = beta + delta
        new_nll = _binary_nll(Xf @ new_beta, yf)
        halvings = 0
        while not np.isfinite(new_nll) or new_nll > nll + 1e-12:
            step /= 2.0
            halvings += 1
            if halvings > 40:
                raise NotConverged("logistic fit: step halving exhausted")
            new_beta = beta + step * delta
            new_nll = _binary_nll(Xf @ new_beta, yf)
        prob_new = _expit(Xf @ new_beta)
        obs_prob = np.where(yf == 1.0, prob_new, 1.0 - prob_new)
        if obs_prob.min() < SEPARATION_PROB and np.abs(new_beta).max() > np.abs(beta).max():
            raise Separation(
                "logistic fit is separating: a fitted probability fell below "
                f"{SEPARATION_PROB} with coefficients still growing"
            )
        moved = np.max(np.abs(new_beta - beta))
        beta, nll = new_beta, new_nll
        if moved < COEF_TOL:
            return beta, True, it
    raise NotConverged(f"logistic fit did not converge in {MAX_ITER} iterations")


def _fit_multinomial(X, ycode, rows, names, n_categories):
    Xf = X[rows]
    yf = ycode[rows].astype(np.int64)
    p_dim = Xf.shape[1]
    K = n_categories
    n_par = (K - 1) * p_dim
    if Xf.shape[0] < n_par + 1:
        raise InsufficientRows(
            f"multinomial fit needs at least {n_par + 1} rows, got {Xf.shape[0]}"
        )
    _check_rank(Xf, names)

    def probs_of(beta):
        eta = np.column_stack([np.zeros(len(Xf)), Xf @ beta.T])
        eta -= eta.max(axis=1, keepdims=True)
        e = np.exp(eta)
        return e / e.sum(axis=1, keepdims=True)

    def nll_of(beta):
        pr = probs_of(beta)
        return float(-np.sum(np.log(pr[np.arange(len(yf)), yf])))

    beta = np.zeros((K - 1, p_dim))
    nll = nll_of(beta)
    ind = np.zeros((len(yf), K))
    ind[np.arange(len(yf)), yf] = 1.0
    for it in range(1, MAX_ITER + 1):
        pr = probs_of(beta)
        score = np.concatenate([Xf.T @ (ind[:, k] - pr[:, k]) for k in range(1, K)])
        if np.max(np.abs(score)) < SCORE_TOL:
            return beta, True, it
        hess = np.zeros((n_par, n_par))
        for k in range(1, K):
            for l in range(1, K):
                w = pr[:, k] * ((1.0 if k == l else 0.0) - pr[:, l])
                hess[(k - 1) * p_dim: k * p_dim, (l - 1) * p_dim: l * p_dim] = Xf.T @ (w[:, None] * Xf)
        try:
            delta = np.linalg.solve(hess, score).reshape(K - 1, p_dim)
        except np.linalg.LinAlgError:
            raise Separation("multinomial fit: information matrix collapsed") from None
        step = 1.0
        new_beta = beta + delta
        new_nll = nll_of(new_beta)
        halvings = 0
        while not np.isfinite(new_nll) or new_nll > nll + 1e-12:
            step /= 2.0
            halvings += 1
            if halvings > 40:
                raise NotConverged("multinomial fit: step halving exhausted")
            new_beta = beta + step * delta
            new_nll = nll_of(new_beta)
        pr_new = probs_of(new_beta)
        obs_prob = pr_new[np.arange(len(yf)), yf]
        if obs_prob.min() < SEPARATION_PROB and np.abs(new_beta).max() > np.abs(beta).max():
            raise Separation(
                "multinomial fit is separating: a fitted category probability "
                f"fell below {SEPARATION_PROB} with coefficients still growing"
            )
        moved = np.max(np.abs(new_beta - beta))
        beta, nll = new_beta, new_nll
        if moved < COEF_TOL:
            return beta, True, it
    raise NotConverged(f"multinomial fit did not converge in {MAX_ITER} iterations")


def fit_design(columns: Mapping[str, np.ndarray], rows: np.ndarray, response: np.ndarray,
               design: DesignSpec, family: str, categories: tuple | None = None) -> FittedGlm:
    """Fit a working model given a column mapping (the low-level entry point).

    ``response`` spans all rows; only ``rows`` enter the likelihood.  For
    multinomial fits, ``response`` holds integer codes indexing ``categories``
    (first category is the reference).
    """
    X, names = build_design(columns, design)
    rows = np.asarray(rows, dtype=np.int64)
    y = np.asarray(response, dtype=np.float64)
    if family == LINEAR:
        beta, conv, it = _fit_linear(X, y, rows, names)
    elif family == BINARY_LOGIT:
        vals = np.unique(y[rows])
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ConfigError(f"binary-logit response must be 0/1, saw values {vals}")
        beta, conv, it = _fit_binary(X, y, rows, names)
    elif family == MULTINOMIAL_LOGIT:
        if categories is None:
            raise ConfigError("multinomial fits need an explicit category order")
        beta, conv, it = _fit_multinomial(X, y, rows, names, len(categories))
    else:
        raise ConfigError(f"unknown family {family!r}")
    return FittedGlm(
        family=family, beta=beta, design=design, fit_rows=rows, converged=conv,
        iterations=it, feature_names=names, X=X, y=y,
        categories=tuple(categories) if categories is not None else None,
    )


def fit_glm(data: CompositeDataset, rows: np.ndarray, response, design: DesignSpec,
            family: str, categories: tuple | None = None) -> FittedGlm:
    """Fit a working model on dataset rows.

    ``response`` is either an array over all rows or the string "Y" for the
    outcome column.
    """
    if isinstance(response, str):
        if response != "Y":
            raise ConfigError(f"string response must be 'Y', got {response!r}")
        response = data.y
    return fit_design(data.columns(include_l=True), rows, response, design, family, categories)


def predict(model: FittedGlm, x, target="mean"):
    """Predict at one term-value vector (term order of the design, no intercept).

    ``target`` is "mean" for linear/binary fits or ``("prob", category)`` for
    multinomial fits.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if len(x) != len(model.design.terms):
        raise DimensionMismatch(
            f"expected {len(model.design.terms)} term values, got {len(x)}"
        )
    row = np.concatenate([[1.0], x]) if model.design.intercept else x
    row = row.reshape(1, -1)
    if target == "mean":
        return float(model.mean(row)[0])
    if isinstance(target, tuple) and len(target) == 2 and target[0] == "prob":
        return float(model.prob_of(target[1], row)[0])
    raise ConfigError(f"unknown prediction target {target!r}")


def score_contributions(model: FittedGlm, data: CompositeDataset):
    """Per-row score vectors plus the averaged score Jacobian.

    Rows outside the fit contribute zero score.  The Jacobian is averaged
    over all ``data.n`` rows, matching how stacked sandwich blocks combine.
    """
    if model.X.shape[0] != data.n:
        raise DimensionMismatch("model was not fitted on this dataset")
    return model.score_matrix(), model.score_jacobian(data.n)
