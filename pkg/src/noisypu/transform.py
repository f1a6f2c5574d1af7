"""Non-traditional classifier and class-prior preserving univariate transform.

A bagged ensemble of small feed-forward networks is trained to separate
the labeled sample (``s = 1``) from the unlabeled sample (``s = 0``). The
out-of-bag ensemble output of each training point is a score in (0, 1)
that keeps the maximal mixing proportions of the two samples intact, so
the class prior can be estimated on the scores instead of the raw inputs.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.metrics import roc_auc_score
from sklearn.utils.validation import check_array, check_is_fitted

from .base import PUDataset, as_generator, check_pu, stack_pu
from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)

FORMAT_TAG = "noisypu.score-model/1"
MAX_RETRIES = 3
MAX_REDRAWS = 1000


@dataclass
class TransformedPU:
    scores_unlabeled: np.ndarray
    scores_labeled: np.ndarray
    sample_ratio: float

    def __post_init__(self):
        if self.sample_ratio <= 0:
            raise InvalidInputError("sample_ratio must be positive")


@dataclass(frozen=True)
class PosteriorParams:
    alpha_star: float
    beta_star: float
    ratio: float

    def __post_init__(self):
        if not self.beta_star > self.alpha_star:
            raise InvalidInputError("beta_star must exceed alpha_star")
        if not (0 <= self.alpha_star and self.beta_star <= 1):
            raise InvalidInputError("need 0 <= alpha_star < beta_star <= 1")
        if not self.ratio > 0:
            raise InvalidInputError("ratio must be positive")


def posterior(tau, params):
    """True class posterior ``p(Y=1 | x)`` from a labeled-vs-unlabeled score.

    Parameters
    ----------
    tau : float or array-like
        Non-traditional posterior ``p(S=1 | x, S in {0, 1})``.
    params : PosteriorParams
        ``ratio`` estimates ``p(S=0) / p(S=1)``, e.g. ``|U| / |L|``.

    Returns
    -------
    float or ndarray, clipped to [0, 1]
    """
    a, b, k = params.alpha_star, params.beta_star, params.ratio
    t = np.asarray(tau, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise InvalidInputError("tau must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = t / (1.0 - t)
        raw = a * (1 - a) / (b - a) * (k * odds - (1 - b) / (1 - a))
    out = np.where(t >= 1.0, 1.0, np.clip(raw, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


# single-network math, shared by training (batched over members) and the
# gradient check

def init_member(rng, n_features, n_hidden, scale=0.5):
    return {
        "W1": rng.uniform(-scale, scale, (n_features, n_hidden)),
        "b1": rng.uniform(-scale, scale, n_hidden),
        "W2": rng.uniform(-scale, scale, n_hidden),
        "b2": float(rng.uniform(-scale, scale)),
    }


def member_forward(params, X):
    h = expit(X @ params["W1"] + params["b1"])
    return expit(h @ params["W2"] + params["b2"])


def member_loss_grad(params, X, y):
    """Mean cross-entropy of one network and its gradient by backpropagation."""
    h = expit(X @ params["W1"] + params["b1"])
    z = h @ params["W2"] + params["b2"]
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (expit(z) - y) / len(y)
    dh = np.outer(dz, params["W2"]) * h * (1 - h)
    grads = {"W1": X.T @ dh, "b1": dh.sum(axis=0), "W2": h.T @ dz, "b2": float(dz.sum())}
    return loss, grads


def _sigmoid(z):
    # tanh form is faster than expit on large arrays and equally stable
    return 0.5 * np.tanh(0.5 * z) + 0.5


def _batched_step(W1, b1, W2, b2, Xb, yb, lr):
    """One gradient step on mean cross-entropy for every member at once."""
    h = _sigmoid(Xb @ W1 + b1[:, None, :])
    p = _sigmoid((h @ W2[:, :, None])[..., 0] + b2[:, None])
    dz = (p - yb) / yb.shape[1]
    dh = h * (1 - h)
    dh *= dz[:, :, None]
    dh *= W2[:, None, :]
    W1 -= lr * (Xb.transpose(0, 2, 1) @ dh)
    b1 -= lr * dh.sum(axis=1)
    W2 -= lr * (dz[:, None, :] @ h)[:, 0, :]
    b2 -= lr * dz.sum(axis=1)


def _batched_forward(W1, b1, W2, b2, X):
    h = _sigmoid(X @ W1 + b1[:, None, :])
    return _sigmoid((h @ W2[:, :, None])[..., 0] + b2[:, None])


class NonTraditionalClassifier(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Bagged ensemble of one-hidden-layer networks predicting ``s`` from ``x``.

    ``fit_transform`` returns the out-of-bag scores of the training rows,
    which is the class-prior preserving transform; ``transform`` and
    ``predict_proba`` score new rows with the full ensemble.

    Parameters
    ----------
    n_members : int, default=100
    n_hidden : int, default=5
    epochs : int, default=200
    learning_rate : float, default=0.1
    lr_decay : float, default=0.01
        Learning rate in epoch ``e`` is ``learning_rate / (1 + lr_decay * e)``.
    batch_size : int, default=128
    bootstrap_fraction : float, default=1.0
        Bootstrap resample size relative to the pooled sample.
    init_scale : float, default=0.5
        Weights start uniform in ``[-init_scale, init_scale]``.
    random_state : int or None
    """

    def __init__(self, n_members=100, n_hidden=5, epochs=200, learning_rate=0.1,
                 lr_decay=0.01, batch_size=128, bootstrap_fraction=1.0,
                 init_scale=0.5, random_state=None):
        self.n_members = n_members
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.bootstrap_fraction = bootstrap_fraction
        self.init_scale = init_scale
        self.random_state = random_state

    def _draw_bags(self, rng, n):
        m = int(self.n_members)
        if m < 2:
            raise InvalidInputError("a single bag cannot leave its own points out-of-bag")
        size = max(1, int(round(self.bootstrap_fraction * n)))
        idx = rng.integers(0, n, (m, size))
        inbag = np.zeros((m, n), dtype=bool)
        inbag[np.arange(m)[:, None], idx] = True
        for _ in range(MAX_REDRAWS):
            stuck = np.flatnonzero(inbag.all(axis=0))
            if not len(stuck):
                return idx, inbag
            # re-draw the bootstrap slots holding a stuck point in one member
            for p, j in zip(stuck, rng.integers(0, m, len(stuck))):
                slots = idx[j] == p
                idx[j, slots] = rng.integers(0, n, int(slots.sum()))
                inbag[j] = False
                inbag[j, idx[j]] = True
        raise InvalidInputError(
            f"cannot leave every point out-of-bag with n_members={m}; use more members"
        )

    def _train(self, Xs, y, idx, rng, lr0):
        m = idx.shape[0]
        d = Xs.shape[1]
        h = int(self.n_hidden)
        s = self.init_scale
        # single precision halves memory traffic; results are cast back
        f32 = np.float32
        W1 = rng.uniform(-s, s, (m, d, h)).astype(f32)
        b1 = rng.uniform(-s, s, (m, h)).astype(f32)
        W2 = rng.uniform(-s, s, (m, h)).astype(f32)
        b2 = rng.uniform(-s, s, m).astype(f32)
        Xs, y = Xs.astype(f32), y.astype(f32)
        size = idx.shape[1]
        bs = min(int(self.batch_size), size)
        for epoch in range(int(self.epochs)):
            lr = lr0 / (1.0 + self.lr_decay * epoch)
            # bootstrap draws are already in random order per member, so one
            # shared column permutation per epoch reshuffles every member
            order = idx[:, rng.permutation(size)]
            for start in range(0, size, bs):
                rows = order[:, start:start + bs]
                _batched_step(W1, b1, W2, b2, Xs[rows], y[rows], lr)
        finite = (np.isfinite(W1).all(axis=(1, 2)) & np.isfinite(b1).all(axis=1)
                  & np.isfinite(W2).all(axis=1) & np.isfinite(b2))
        return tuple(a.astype(float) for a in (W1, b1, W2, b2)), finite

    def fit(self, X, s):
        """Train the ensemble on ``U`` (``s = 0``) versus ``L`` (``s = 1``)."""
        U, L = check_pu(X, s, min_unlabeled=10, min_labeled=10)
        X = np.asarray(X, dtype=float).reshape(len(s), -1)
        y = np.asarray(s, dtype=float).ravel()
        rng = as_generator(self.random_state)
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        Xs = (X - self.x_mean_) / self.x_scale_
        idx, inbag = self._draw_bags(rng, len(X))
        weights, finite = self._train(Xs, y, idx, rng, self.learning_rate)
        lr = self.learning_rate
        for attempt in range(MAX_RETRIES):
            if finite.all():
                break
            bad = np.flatnonzero(~finite)
            lr *= 0.5
            logger.warning("retraining %d members with learning rate %g", len(bad), lr)
            sub, sub_ok = self._train(Xs, y, idx[bad], rng, lr)
            for full, part in zip(weights, sub):
                full[bad] = part
            finite[bad] = sub_ok
        if not finite.all():
            raise InvalidInputError("ensemble training diverged; lower learning_rate")
        self.W1_, self.b1_, self.W2_, self.b2_ = weights
        self.inbag_ = inbag
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.s_ = y.astype(int)
        self.oob_scores_ = self._oob(Xs, inbag)
        self.oob_auc_ = float(roc_auc_score(self.s_, self.oob_scores_))
        return self

    def _oob(self, Xs, inbag):
        if inbag.all(axis=0).any():
            raise InvalidInputError("some points are in-bag for every member")
        out = _batched_forward(self.W1_, self.b1_, self.W2_, self.b2_, Xs)
        oob = ~inbag
        return (out * oob).sum(axis=0) / oob.sum(axis=0)

    def _scores(self, X):
        check_is_fitted(self, "W1_")
        X = check_array(np.asarray(X, dtype=float).reshape(len(X), -1))
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        Xs = (X - self.x_mean_) / self.x_scale_
        return _batched_forward(self.W1_, self.b1_, self.W2_, self.b2_, Xs).mean(axis=0)

    def predict_proba(self, X):
        p = self._scores(X)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self._scores(X) > 0.5).astype(int)

    def transform(self, X):
        return self._scores(X)[:, None]

    def fit_transform(self, X, s=None, **fit_params):
        """Fit, then return the out-of-bag scores of the training rows."""
        if s is None:
            raise InvalidInputError("fit_transform needs the selection vector s")
        return self.fit(X, s).oob_scores_[:, None]

    def oob_transform(self):
        """Out-of-bag scores split back into ``U`` and ``L`` parts."""
        check_is_fitted(self, "oob_scores_")
        s = self.s_.astype(bool)
        return TransformedPU(self.oob_scores_[~s], self.oob_scores_[s],
                             float((~s).sum() / s.sum()))

    def to_dict(self):
        check_is_fitted(self, "W1_")
        return {
            "format": FORMAT_TAG,
            "config": self.get_params(),
            "x_mean": self.x_mean_.tolist(),
            "x_scale": self.x_scale_.tolist(),
            "W1": self.W1_.tolist(),
            "b1": self.b1_.tolist(),
            "W2": self.W2_.tolist(),
            "b2": self.b2_.tolist(),
            "inbag": [np.flatnonzero(row).tolist() for row in self.inbag_],
            "s": self.s_.tolist(),
            "oob_scores": self.oob_scores_.tolist(),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_TAG:
            raise InvalidInputError(f"unsupported model format {doc.get('format')!r}")
        model = cls(**doc["config"])
        model.x_mean_ = np.asarray(doc["x_mean"], float)
        model.x_scale_ = np.asarray(doc["x_scale"], float)
        model.W1_ = np.asarray(doc["W1"], float)
        model.b1_ = np.asarray(doc["b1"], float)
        model.W2_ = np.asarray(doc["W2"], float)
        model.b2_ = np.asarray(doc["b2"], float)
        model.s_ = np.asarray(doc["s"], int)
        n = len(model.s_)
        model.inbag_ = np.zeros((len(doc["inbag"]), n), dtype=bool)
        for j, row in enumerate(doc["inbag"]):
            model.inbag_[j, row] = True
        model.oob_scores_ = np.asarray(doc["oob_scores"], float)
        model.n_features_in_ = model.W1_.shape[1]
        model.classes_ = np.array([0, 1])
        model.oob_auc_ = float(roc_auc_score(model.s_, model.oob_scores_))
        return model

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_nontraditional(data, seed=None, **config):
    """Train a :class:`NonTraditionalClassifier` on a :class:`PUDataset`."""
    X, s = data.to_xs()
    return NonTraditionalClassifier(random_state=seed, **config).fit(X, s)


def oob_scores(model, data):
    """Out-of-bag transform of the data set the model was trained on."""
    check_is_fitted(model, "oob_scores_")
    n = len(data.unlabeled) + len(data.labeled)
    if n != len(model.s_):
        raise InvalidInputError("model was trained on a different data set")
    return model.oob_transform()


def transform_dataset(data, seed=None, **config):
    """Convenience: fit the ensemble and return the out-of-bag transform."""
    return oob_scores(fit_nontraditional(data, seed, **config), data)


__all__ = [
    "NonTraditionalClassifier", "PosteriorParams", "TransformedPU",
    "fit_nontraditional", "oob_scores", "posterior", "transform_dataset",
    "stack_pu", "PUDataset",
]
