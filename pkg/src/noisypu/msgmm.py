"""Multi-sample Gaussian mixture model (MSGMM).

The unlabeled sample is modelled as ``alpha N(u1, S1) + (1-alpha) N(u0, S0)``
and the labeled sample as ``beta N(u1, S1) + (1-beta) N(u0, S0)``: both
mixtures share their components and differ only in the mixing weight. All
parameters are fitted jointly by EM on the combined likelihood.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .base import PriorEstimate, PUDataset, as_generator, check_pu
from .exceptions import (DegenerateComponentError, EstimationFailedError,
                         InvalidInputError)

logger = logging.getLogger(__name__)

MIN_MASS = 1e-8
REG_SCALE = 1e-6
INIT_ALPHA, INIT_BETA = 0.3, 0.7


@dataclass
class MsGmmParams:
    alpha: float
    beta: float
    u0: np.ndarray
    u1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray

    def swapped(self):
        """Same model with component identities exchanged."""
        return MsGmmParams(1 - self.alpha, 1 - self.beta, self.u1.copy(),
                           self.u0.copy(), self.sigma1.copy(), self.sigma0.copy())

    def to_dict(self):
        return {
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "u0": np.asarray(self.u0).tolist(),
            "u1": np.asarray(self.u1).tolist(),
            "sigma0": np.asarray(self.sigma0).tolist(),
            "sigma1": np.asarray(self.sigma1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["alpha"]), float(d["beta"]), np.asarray(d["u0"], float),
                   np.asarray(d["u1"], float), np.asarray(d["sigma0"], float),
                   np.asarray(d["sigma1"], float))


@dataclass
class Responsibilities:
    """Posterior probability of the positive component for each point."""

    w_u: np.ndarray
    w_l: np.ndarray


@dataclass
class FitResult:
    params: MsGmmParams
    estimate: PriorEstimate
    log_likelihood: float
    n_iter: int
    history: list = field(default_factory=list)


def log_gaussian(X, mean, cov):
    """Row-wise log density of ``N(mean, cov)``."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DegenerateComponentError("covariance is not positive definite") from None
    z = np.linalg.solve(chol, (X - mean).T)
    maha = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * np.log(2 * np.pi) + logdet + maha)


def _log_joint(X, prop, params):
    """Log of ``prop phi1(x)`` and ``(1-prop) phi0(x)`` as two columns."""
    with np.errstate(divide="ignore"):
        l1 = np.log(prop) + log_gaussian(X, params.u1, params.sigma1)
        l0 = np.log(1.0 - prop) + log_gaussian(X, params.u0, params.sigma0)
    return l1, l0


def e_step(data, params):
    """Responsibilities of the positive component in ``U`` and ``L``."""
    out = []
    for X, prop in ((data.unlabeled, params.alpha), (data.labeled, params.beta)):
        if len(X) == 0:
            out.append(np.empty(0))
            continue
        l1, l0 = _log_joint(X, prop, params)
        norm = np.logaddexp(l1, l0)
        if not np.all(np.isfinite(norm)):
            raise DegenerateComponentError("both component densities vanish at a point")
        out.append(np.exp(l1 - norm))
    return Responsibilities(*out)


def log_likelihood(data, params):
    """Combined log-likelihood of ``U`` and ``L`` under their mixtures."""
    total = 0.0
    for X, prop in ((data.unlabeled, params.alpha), (data.labeled, params.beta)):
        if len(X) == 0:
            continue
        l1, l0 = _log_joint(X, prop, params)
        total += float(np.logaddexp(l1, l0).sum())
    return total


def _regularize(cov, reg_scale):
    d = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    eps = reg_scale * np.trace(cov) / d
    return cov + max(eps, np.finfo(float).tiny) * np.eye(d)


def m_step(data, resp, previous=None, reg_scale=REG_SCALE):
    """Update all parameters from responsibilities.

    Covariances are taken around the means of ``previous`` when given (the
    centring used by the EM updates of the joint model); without it they
    are taken around the freshly updated means.

    Parameters
    ----------
    data : PUDataset
    resp : Responsibilities
    previous : MsGmmParams, optional
    reg_scale : float
        ``reg_scale * trace(S) / d`` is added to each covariance diagonal.
    """
    U, L = data.unlabeled, data.labeled
    X = np.vstack([U, L]) if len(L) else U
    w1 = np.concatenate([resp.w_u, resp.w_l])
    w0 = 1.0 - w1
    n1, n0 = w1.sum(), w0.sum()
    if n1 < MIN_MASS or n0 < MIN_MASS:
        raise DegenerateComponentError(
            f"component responsibility mass too small (n0={n0:.3g}, n1={n1:.3g})"
        )
    alpha = float(resp.w_u.mean()) if len(resp.w_u) else np.nan
    beta = float(resp.w_l.mean()) if len(resp.w_l) else np.nan
    u1 = w1 @ X / n1
    u0 = w0 @ X / n0
    c1 = u1 if previous is None else previous.u1
    c0 = u0 if previous is None else previous.u0
    D1 = X - c1
    D0 = X - c0
    s1 = (D1 * w1[:, None]).T @ D1 / n1
    s0 = (D0 * w0[:, None]).T @ D0 / n0
    if reg_scale:
        s1 = _regularize(s1, reg_scale)
        s0 = _regularize(s0, reg_scale)
    return MsGmmParams(alpha, beta, u0, u1, s0, s1)


def initial_params(data, rng):
    """k-means++ style seeding on the pooled sample."""
    U, L = data.unlabeled, data.labeled
    X = np.vstack([U, L])
    # canonical row order keeps the seeding invariant to input permutations
    X = X[np.lexsort(X.T[::-1])]
    first = X[rng.integers(len(X))]
    d2 = np.sum((X - first) ** 2, axis=1)
    if d2.sum() <= 0:
        raise InvalidInputError("all points coincide")
    second = X[rng.choice(len(X), p=d2 / d2.sum())]
    # the center further along the U -> L direction plays the positive role
    direction = L.mean(axis=0) - U.mean(axis=0)
    if (second - first) @ direction < 0:
        first, second = second, first
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    cov = _regularize(cov, REG_SCALE)
    return MsGmmParams(INIT_ALPHA, INIT_BETA, first.copy(), second.copy(),
                       cov.copy(), cov.copy())


def run_em(data, params, max_iter=500, tol=1e-7, reg_scale=REG_SCALE, center="previous"):
    """Iterate EM from ``params``; returns ``(params, ll, n_iter, history)``.

    ``center="previous"`` takes covariances around the means of the previous
    iterate (the joint-model update block); ``"current"`` uses the freshly
    updated means as in textbook EM. Both increase the likelihood monotonically.
    """
    if center not in ("previous", "current"):
        raise InvalidInputError(f"center must be 'previous' or 'current', got {center!r}")
    ll = log_likelihood(data, params)
    history = [ll]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resp = e_step(data, params)
        prev = params if center == "previous" else None
        params = m_step(data, resp, previous=prev, reg_scale=reg_scale)
        new_ll = log_likelihood(data, params)
        history.append(new_ll)
        if not np.isfinite(new_ll):
            raise DegenerateComponentError("log-likelihood became non-finite")
        converged = abs(new_ll - ll) < tol * abs(ll)
        ll = new_ll
        if converged:
            break
    return params, ll, n_iter, history


def fit(data, n_restarts=10, max_iter=500, tol=1e-7, reg_scale=REG_SCALE, seed=None,
        center="previous"):
    """Best-of-restarts EM fit of the two-sample mixture.

    Returns
    -------
    FitResult
    """
    if len(data.unlabeled) < 2 or len(data.labeled) < 2:
        raise InvalidInputError("need at least two points in each sample")
    rng = as_generator(seed)
    best = None
    failures = []
    for k in range(n_restarts):
        try:
            init = initial_params(data, rng)
            params, ll, n_iter, hist = run_em(data, init, max_iter, tol, reg_scale, center)
        except (DegenerateComponentError, InvalidInputError) as exc:
            failures.append(f"restart {k}: {exc}")
            logger.debug("restart %d failed: %s", k, exc)
            continue
        if best is None or ll > best[1]:
            best = (params, ll, n_iter, hist)
    if best is None:
        raise EstimationFailedError("all EM restarts degenerated", failures)
    params, ll, n_iter, hist = best
    if params.alpha > params.beta:
        params = params.swapped()
    a, b = params.alpha, params.beta
    a_plus = a / b if b > 0 else 0.0
    b_plus = (1 - b) / (1 - a) if a < 1 else 0.0
    estimate = PriorEstimate(a_plus, b_plus, a, b, "MSGMM",
                             {"log_likelihood": ll, "n_iter": n_iter,
                              "failed_restarts": failures})
    return FitResult(params, estimate, ll, n_iter, hist)


class MSGMM(BaseEstimator):
    """Parametric class prior estimator for noisy positive-unlabeled data.

    Parameters
    ----------
    n_restarts : int, default=10
    max_iter : int, default=500
    tol : float, default=1e-7
        Relative change of the combined log-likelihood that stops EM.
    reg_scale : float, default=1e-6
    random_state : int or None
    center : {"previous", "current"}, default="previous"
        Means around which covariances are updated, see :func:`run_em`.

    Attributes
    ----------
    alpha_ : float
        Estimated class prior of the unlabeled sample.
    beta_ : float
        Estimated positive fraction of the labeled sample.
    params_ : MsGmmParams
    prior_estimate_ : PriorEstimate
    log_likelihood_ : float
    n_iter_ : int
    """

    def __init__(self, n_restarts=10, max_iter=500, tol=1e-7, reg_scale=REG_SCALE,
                 random_state=None, center="previous"):
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.tol = tol
        self.reg_scale = reg_scale
        self.random_state = random_state
        self.center = center

    def fit(self, X, s):
        U, L = check_pu(X, s, 2, 2)
        res = fit(PUDataset(U, L), self.n_restarts, self.max_iter, self.tol,
                  self.reg_scale, self.random_state, self.center)
        self.params_ = res.params
        self.prior_estimate_ = res.estimate
        self.log_likelihood_ = res.log_likelihood
        self.n_iter_ = res.n_iter
        self.alpha_, self.beta_ = res.params.alpha, res.params.beta
        return self

    def predict_proba(self, X):
        """``p(Y=1 | x)`` under the fitted unlabeled mixture, as two columns."""
        check_is_fitted(self, "params_")
        X = check_array(np.asarray(X, float).reshape(len(X), -1))
        l1, l0 = _log_joint(X, self.alpha_, self.params_)
        p1 = np.exp(l1 - np.logaddexp(l1, l0))
        return np.column_stack([1 - p1, p1])

    def score(self, X, s):
        """Mean combined log-likelihood per point."""
        check_is_fitted(self, "params_")
        U, L = check_pu(X, s)
        return log_likelihood(PUDataset(U, L), self.params_) / (len(U) + len(L))

    def to_json(self):
        check_is_fitted(self, "params_")
        doc = {
            "format": "noisypu.msgmm/1",
            "params": self.params_.to_dict(),
            "estimate": self.prior_estimate_.to_dict(),
            "log_likelihood": self.log_likelihood_,
            "n_iter": self.n_iter_,
            "config": self.get_params(),
        }
        return json.dumps(doc, sort_keys=True, indent=2)
