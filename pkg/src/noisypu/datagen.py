"""Positive-unlabeled data generation, splitting and ingestion."""

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .base import PUDataset, Truth, as_generator, as_samples
from .exceptions import DegenerateOutputError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_MAX_UNLABELED = 10000


@dataclass(frozen=True)
class LabelingConfig:
    """Parameters of the selection/labeling process.

    Attributes
    ----------
    select_prob : float
        Probability that labeling is attempted at all (independent of x, y).
    gamma1 : float
        Probability that an attempt on a true positive succeeds.
    gamma0 : float
        Probability that an attempt on a true negative (wrongly) succeeds.
    """

    select_prob: float
    gamma1: float
    gamma0: float

    def __post_init__(self):
        if not 0 < self.select_prob < 1:
            raise InvalidInputError("select_prob must lie in (0, 1)")
        if not 0 < self.gamma1 < 1:
            raise InvalidInputError("gamma1 must lie in (0, 1)")
        if not 0 <= self.gamma0 < 1:
            raise InvalidInputError("gamma0 must lie in [0, 1)")
        if not self.gamma0 < self.gamma1:
            raise InvalidInputError("gamma0 must be smaller than gamma1")

    def implied_beta(self, alpha):
        num = self.gamma1 * alpha
        den = num + self.gamma0 * (1 - alpha)
        return num / den if den > 0 else 1.0


def simulate_labeling(points, labels, config, seed=None):
    """Route each point to U, L or the dropped set.

    A point is sent to the unlabeled sample with probability
    ``1 - select_prob``. Otherwise labeling is attempted and succeeds with
    probability ``gamma1`` for positives and ``gamma0`` for negatives;
    failed attempts are dropped.
    """
    X = as_samples(points)
    y = np.asarray(labels).astype(int).ravel()
    if len(y) != len(X):
        raise InvalidInputError("points and labels differ in length")
    rng = as_generator(seed)
    n = len(X)
    selected = rng.random(n) < config.select_prob
    success_p = np.where(y == 1, config.gamma1, config.gamma0)
    success = rng.random(n) < success_p
    in_u = ~selected
    in_l = selected & success
    if not in_u.any() or not in_l.any():
        raise DegenerateOutputError("labeling produced an empty sample")
    alpha = float(y.mean())
    truth = Truth(
        labels_unlabeled=y[in_u],
        labels_labeled=y[in_l],
        alpha_true=alpha,
        beta_true=float(config.implied_beta(alpha)),
    )
    return PUDataset(X[in_u], X[in_l], truth,
                     meta={"n_dropped": int(n - in_u.sum() - in_l.sum())})


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-component location family benchmark.

    ``f0`` is centred at 0 and ``f1`` at ``delta_mu`` in every coordinate;
    ``dim > 1`` stacks independent copies of the 1-D construction that
    share each point's class.
    """

    family: str = "gaussian"
    delta_mu: float = 2.0
    alpha: float = 0.25
    beta: float = 0.95
    n_unlabeled: int = 10000
    n_labeled: int = 1000
    seed: int = 0
    dim: int = 1

    def __post_init__(self):
        if self.family.lower() not in ("gaussian", "laplace"):
            raise InvalidInputError(f"unknown family {self.family!r}")
        if not 0 <= self.alpha < 1:
            raise InvalidInputError("alpha must lie in [0, 1)")
        if not 0 < self.beta <= 1:
            raise InvalidInputError("beta must lie in (0, 1]")
        if self.n_unlabeled < 1 or self.n_labeled < 1:
            raise InvalidInputError("sample sizes must be positive")
        if self.dim < 1:
            raise InvalidInputError("dim must be positive")

    def to_dict(self):
        return asdict(self)


def _draw_component(rng, family, loc, size):
    if family == "gaussian":
        return rng.normal(loc, 1.0, size)
    return rng.laplace(loc, 1.0, size)


def _draw_mixture(rng, spec, prop, n):
    y = (rng.random(n) < prop).astype(int)
    family = spec.family.lower()
    x = _draw_component(rng, family, 0.0, (n, spec.dim))
    x += spec.delta_mu * y[:, None]
    return x, y


def gen_synthetic(spec):
    """Draw U from ``alpha f1 + (1-alpha) f0`` and L from ``beta f1 + (1-beta) f0``."""
    rng = as_generator(spec.seed)
    xu, yu = _draw_mixture(rng, spec, spec.alpha, spec.n_unlabeled)
    xl, yl = _draw_mixture(rng, spec, spec.beta, spec.n_labeled)
    truth = Truth(yu, yl, float(spec.alpha), float(spec.beta))
    return PUDataset(xu, xl, truth)


def pu_split(points, labels, n_labeled, beta, seed=None,
             max_unlabeled=DEFAULT_MAX_UNLABELED):
    """Split a labeled data set into a noisy positive sample and the rest.

    The labeled sample receives exactly ``round(beta * n_labeled)`` positives
    and fills up with negatives; everything else becomes the unlabeled
    sample, uniformly subsampled down to ``max_unlabeled`` rows.
    """
    X = as_samples(points)
    y = np.asarray(labels).astype(int).ravel()
    if len(y) != len(X):
        raise InvalidInputError("points and labels differ in length")
    if not 0 < beta <= 1:
        raise InvalidInputError("beta must lie in (0, 1]")
    n_pos = int(round(beta * n_labeled))
    n_neg = int(n_labeled) - n_pos
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) < n_pos or len(neg) < n_neg:
        raise InvalidInputError(
            f"need {n_pos} positives and {n_neg} negatives, "
            f"have {len(pos)} and {len(neg)}"
        )
    rng = as_generator(seed)
    take = np.concatenate([rng.choice(pos, n_pos, replace=False),
                           rng.choice(neg, n_neg, replace=False)])
    mask = np.zeros(len(X), dtype=bool)
    mask[take] = True
    rest = np.flatnonzero(~mask)
    n_discarded = 0
    if max_unlabeled is not None and len(rest) > max_unlabeled:
        keep = np.sort(rng.choice(rest, int(max_unlabeled), replace=False))
        n_discarded = len(rest) - len(keep)
        rest = keep
    if len(rest) == 0:
        raise DegenerateOutputError("no points left for the unlabeled sample")
    take = np.sort(take)
    truth = Truth(
        labels_unlabeled=y[rest],
        labels_labeled=y[take],
        alpha_true=float(y[rest].mean()),
        beta_true=n_pos / n_labeled,
    )
    return PUDataset(X[rest], X[take], truth, meta={"n_discarded": n_discarded})


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, label_column=None, feature_columns=None, positive_label=None,
             binarize=None, header=True):
    """Read a CSV file into a numeric matrix and an optional label vector.

    Non-numeric feature columns are expanded into one binary column per
    category (in order of first appearance).

    Parameters
    ----------
    path : str or Path
    label_column : str or int, optional
        Column holding the class label; omitted for unlabeled matrices.
    feature_columns : list of str or int, optional
        Defaults to every column except the label column.
    positive_label : str, optional
        Label value mapped to 1; everything else maps to 0.
    binarize : {None, "mean"}
        With ``"mean"``, a numeric label is turned into ``label > mean``.
    header : bool, default=True

    Returns
    -------
    X : ndarray of shape (n_rows, n_features)
    y : ndarray of shape (n_rows,) or None
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader]
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError(f"{path}: no data")
    if header:
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    else:
        names = [str(i) for i in range(len(rows[0][1]))]
    if not rows:
        raise InvalidInputError(f"{path}: header but no data rows")
    width = len(names)
    for lineno, r in rows:
        if len(r) != width:
            raise InvalidInputError(
                f"{path}:{lineno}: expected {width} fields, got {len(r)}"
            )

    def col_index(c):
        if isinstance(c, int) or (isinstance(c, str) and c.isdigit() and c not in names):
            return int(c)
        if c not in names:
            raise InvalidInputError(f"{path}: unknown column {c!r}")
        return names.index(c)

    label_idx = None if label_column is None else col_index(label_column)
    if feature_columns is None:
        feat_idx = [j for j in range(width) if j != label_idx]
    else:
        feat_idx = [col_index(c) for c in feature_columns]

    blocks = []
    for j in feat_idx:
        values = [r[j].strip() for _, r in rows]
        if all(_is_float(v) for v in values):
            blocks.append(np.array([float(v) for v in values])[:, None])
        else:
            cats = list(dict.fromkeys(values))
            onehot = np.zeros((len(values), len(cats)))
            lookup = {c: k for k, c in enumerate(cats)}
            onehot[np.arange(len(values)), [lookup[v] for v in values]] = 1.0
            blocks.append(onehot)
    X = np.hstack(blocks) if blocks else np.empty((len(rows), 0))

    y = None
    if label_idx is not None:
        raw = [r[label_idx].strip() for _, r in rows]
        if positive_label is not None:
            y = np.array([v == str(positive_label) for v in raw], dtype=int)
        else:
            try:
                vals = np.array([float(v) for v in raw])
            except ValueError:
                lineno = next(ln for (ln, _), v in zip(rows, raw) if not _is_float(v))
                raise InvalidInputError(
                    f"{path}:{lineno}: non-numeric label; set positive_label"
                ) from None
            if binarize == "mean":
                y = (vals > vals.mean()).astype(int)
            elif binarize is None:
                y = vals.astype(int)
            else:
                raise InvalidInputError(f"unknown binarize mode {binarize!r}")
    return X, y


def dump_dataset(ds, directory, prefix="data"):
    """Write ``U`` and ``L`` as CSV files plus a JSON truth sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / f"{prefix}_unlabeled.csv", ds.unlabeled, delimiter=",")
    np.savetxt(directory / f"{prefix}_labeled.csv", ds.labeled, delimiter=",")
    if ds.truth is not None:
        t = ds.truth
        sidecar = {
            "alpha_true": t.alpha_true,
            "beta_true": t.beta_true,
            "labels_unlabeled": t.labels_unlabeled.astype(int).tolist(),
            "labels_labeled": t.labels_labeled.astype(int).tolist(),
        }
        (directory / f"{prefix}_truth.json").write_text(json.dumps(sidecar, sort_keys=True))


class ZScorePCA(TransformerMixin, BaseEstimator):
    """Standardize columns, then project onto the leading principal axes.

    Zero-variance columns are dropped before standardization. Each axis is
    oriented so its largest-magnitude loading is positive.

    Parameters
    ----------
    n_components : int, default=3
    """

    def __init__(self, n_components=3):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        std = X.std(axis=0)
        keep = std > 0
        if not keep.any():
            raise InvalidInputError("all columns have zero variance")
        self.keep_ = keep
        self.mean_ = X[:, keep].mean(axis=0)
        self.scale_ = std[keep]
        Z = (X[:, keep] - self.mean_) / self.scale_
        cov = Z.T @ Z / len(Z)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        evecs = evecs[:, order]
        rank = int(np.sum(evals > evals[0] * 1e-10)) if evals[0] > 0 else 0
        k = int(self.n_components)
        if k > rank:
            warnings.warn(
                f"n_components={k} exceeds effective rank {rank}; using {rank}",
                UserWarning, stacklevel=2,
            )
            k = max(rank, 1)
        comps = evecs[:, :k].T
        flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
        self.components_ = comps * flip[:, None]
        self.explained_variance_ = evals[:k]
        self.explained_variance_ratio_ = evals[:k] / evals.sum()
        self.n_components_ = k
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        Z = (X[:, self.keep_] - self.mean_) / self.scale_
        return Z @ self.components_.T

    def inverse_transform(self, T):
        check_is_fitted(self, "components_")
        return np.asarray(T) @ self.components_ * self.scale_ + self.mean_


def zscore_pca(points, k):
    """Top-``k`` principal component scores of the z-scored data."""
    return ZScorePCA(n_components=k).fit_transform(as_samples(points))
