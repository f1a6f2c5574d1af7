"""Shared containers and input validation helpers.

Estimators in this package follow the scikit-learn convention for
positive-unlabeled data: a single design matrix ``X`` plus a selection
vector ``s`` where ``s == 1`` marks the (noisy) labeled sample and
``s == 0`` the unlabeled sample.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidInputError


@dataclass
class Truth:
    labels_unlabeled: np.ndarray
    labels_labeled: np.ndarray
    alpha_true: float
    beta_true: float


@dataclass
class PUDataset:
    """Unlabeled sample ``U``, noisy positive sample ``L`` and optional truth."""

    unlabeled: np.ndarray
    labeled: np.ndarray
    truth: Optional[Truth] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.unlabeled = as_samples(self.unlabeled)
        self.labeled = as_samples(self.labeled)
        if self.unlabeled.shape[1] != self.labeled.shape[1]:
            raise InvalidInputError(
                "unlabeled and labeled samples have different dimensionality"
            )

    @property
    def n_features(self):
        return self.unlabeled.shape[1]

    def to_xs(self):
        return stack_pu(self.unlabeled, self.labeled)


@dataclass
class PriorEstimate:
    """Estimated maximal and corrected mixing proportions.

    ``alpha_star`` estimates the class prior of the unlabeled sample and
    ``beta_star`` the fraction of true positives in the labeled sample.
    """

    alpha_plus: Optional[float]
    beta_plus: Optional[float]
    alpha_star: float
    beta_star: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "alpha_plus": self.alpha_plus,
            "beta_plus": self.beta_plus,
            "alpha_star": self.alpha_star,
            "beta_star": self.beta_star,
        }


def as_samples(a):
    """Coerce a sample to a 2-D float array; 1-D input becomes one column."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"expected 1-D or 2-D sample, got {a.ndim}-D")
    if a.size and not np.all(np.isfinite(a)):
        raise InvalidInputError("sample contains non-finite values")
    return a


def stack_pu(unlabeled, labeled):
    """Pool ``U`` and ``L`` into ``(X, s)`` with ``s = 1`` for labeled rows."""
    U = as_samples(unlabeled)
    L = as_samples(labeled)
    X = np.vstack([U, L])
    s = np.concatenate([np.zeros(len(U), dtype=int), np.ones(len(L), dtype=int)])
    return X, s


def check_pu(X, s, min_unlabeled=1, min_labeled=1, ensure_2d=True):
    """Validate ``(X, s)`` and split it into ``(U, L)``.

    Parameters
    ----------
    X : array-like of shape (n_samples, n_features) or (n_samples,)
    s : array-like of shape (n_samples,)
        Selection labels in {0, 1}.
    min_unlabeled, min_labeled : int
        Minimum required size of each sample.

    Returns
    -------
    U, L : ndarray
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    X = check_array(X, ensure_2d=ensure_2d, ensure_min_samples=1)
    s = np.asarray(s).ravel()
    if s.shape[0] != X.shape[0]:
        raise InvalidInputError(
            f"X has {X.shape[0]} rows but s has {s.shape[0]} entries"
        )
    if not np.isin(s, (0, 1)).all():
        raise InvalidInputError("s must contain only 0 (unlabeled) and 1 (labeled)")
    s = s.astype(bool)
    U, L = X[~s], X[s]
    if len(U) < min_unlabeled:
        raise InvalidInputError(f"need at least {min_unlabeled} unlabeled rows, got {len(U)}")
    if len(L) < min_labeled:
        raise InvalidInputError(f"need at least {min_labeled} labeled rows, got {len(L)}")
    return U, L


def as_generator(seed):
    """Philox generator from an integer seed (or pass a Generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.Generator(np.random.Philox())
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn_seeds(seed, n):
    """Derive ``n`` independent 64-bit child seeds from ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]
