"""Histogram AlphaMax and its noise-robust two-direction variant AlphaMax-N.

``alphamax(M, C)`` estimates the largest proportion with which the
distribution of sample ``C`` appears as a component of the distribution of
sample ``M``. Both samples are binned on a shared grid whose width follows
the normal-reference AMISE rule on ``C``. Each occupied bin ``i`` of ``M`` is
a uniform component with weight ``v_i``; re-weighting the bins by
``omega`` gives candidate densities

    c~(x) = omega_i v_i / r                      (x in bin i)
    m~(x) = r c^_i + (1 - omega_i) v_i           (x in bin i)

with ``r = sum(omega_i v_i)`` (densities divided by the bin volume). For a
grid of ``r`` values the joint log-likelihood of both samples is maximized
over ``omega in [0, 1]^k``; the curve is flat up to the maximal proportion
and drops afterwards. The estimate is the point where this drop starts,
located by the share of ``C`` whose bins hit the bound ``omega_i = 1``.
"""

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from .base import PriorEstimate, as_samples, check_pu
from .exceptions import (ConvergenceWarning, DegenerateCurveWarning,
                         InvalidInputError)
from .measures import correction

logger = logging.getLogger(__name__)

MIN_SAMPLES = 20
MAX_DIM = 3
CLIP_MAX = 0.999
SATURATION = 0.03


@dataclass
class HistogramDensity:
    """Bin masses on a regular grid.

    For one-dimensional data ``edges`` is a single increasing array; for
    ``d > 1`` it is a tuple with one array per dimension and ``masses`` is
    laid out in C order over the grid cells.
    """

    edges: object
    masses: np.ndarray
    bin_width: object
    counts: np.ndarray

    @property
    def bin_volume(self):
        return float(np.prod(np.atleast_1d(self.bin_width)))


@dataclass
class LikelihoodCurve:
    r_grid: np.ndarray
    ll: np.ndarray
    omega_per_r: np.ndarray
    flagged: np.ndarray = None
    saturated_mass: np.ndarray = None
    elbow: float = None
    bins: np.ndarray = field(default=None, repr=False)

    def to_csv(self, path):
        """Write ``r, ll`` rows plus the detected elbow."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "ll", "flagged", "elbow"])
            for j, (r, ll) in enumerate(zip(self.r_grid, self.ll)):
                flag = int(self.flagged[j]) if self.flagged is not None else 0
                w.writerow([f"{r:.10g}", f"{ll:.12g}", flag,
                            "" if self.elbow is None else f"{self.elbow:.10g}"])


def bin_width(C, n=None):
    """Normal-reference AMISE bin width per dimension of ``C``.

    ``n`` overrides the sample size in the rate term (default ``len(C)``).
    """
    C = as_samples(C)
    d = C.shape[1]
    n = len(C) if n is None else n
    sigma = C.std(axis=0, ddof=1)
    return 3.5 * sigma * n ** (-1.0 / (2 + d))


def _bin_index(x, origin, width):
    return np.floor((x - origin) / width).astype(np.int64)


def build_histograms(M, C):
    """Histograms of ``M`` and ``C`` on a grid anchored at ``min(C)``.

    The width uses the spread of ``C`` and the size of the smaller sample,
    so that bin counts stay informative in both histograms. Bins of the
    same width are added on either side until both samples are covered.

    Returns
    -------
    hist_M, hist_C : HistogramDensity
    """
    M = as_samples(M)
    C = as_samples(C)
    if M.shape[1] != C.shape[1]:
        raise InvalidInputError("M and C differ in dimensionality")
    d = C.shape[1]
    if d > MAX_DIM:
        raise InvalidInputError(f"histograms limited to {MAX_DIM} dimensions")
    if len(C) < MIN_SAMPLES or len(M) < MIN_SAMPLES:
        raise InvalidInputError(f"need at least {MIN_SAMPLES} points in M and C")
    width = bin_width(C, min(len(C), len(M)))
    if np.any(width <= 0) or not np.all(np.isfinite(width)):
        raise InvalidInputError("component sample has all-equal scores")
    origin = C.min(axis=0)
    im = _bin_index(M, origin, width)
    ic = _bin_index(C, origin, width)
    # points sitting exactly on the top edge of C go into the last C bin
    top = _bin_index(C.max(axis=0), origin, width)
    on_edge = (C.max(axis=0) - origin) / width == top
    for j in np.flatnonzero(on_edge & (top > 0)):
        ic[ic[:, j] == top[j], j] -= 1
        im[im[:, j] == top[j], j] -= 1
    lo = np.minimum(im.min(axis=0), ic.min(axis=0))
    hi = np.maximum(im.max(axis=0), ic.max(axis=0))
    shape = tuple(int(s) for s in hi - lo + 1)
    edges = [origin[j] + width[j] * np.arange(lo[j], hi[j] + 2) for j in range(d)]
    flat_m = np.ravel_multi_index(tuple((im - lo).T), shape)
    flat_c = np.ravel_multi_index(tuple((ic - lo).T), shape)
    size = int(np.prod(shape))
    cm = np.bincount(flat_m, minlength=size).astype(float)
    cc = np.bincount(flat_c, minlength=size).astype(float)
    if d == 1:
        edges_out, w_out = edges[0], float(width[0])
    else:
        edges_out, w_out = tuple(edges), width
    return (HistogramDensity(edges_out, cm / cm.sum(), w_out, cm),
            HistogramDensity(edges_out, cc / cc.sum(), w_out, cc))


class _BinProblem:
    """Count form of the constrained likelihood on the bins occupied by ``M``."""

    def __init__(self, hist_M, hist_C):
        if hist_M.masses.shape != hist_C.masses.shape:
            raise InvalidInputError("histograms are not on a shared grid")
        keep = hist_M.counts > 0
        self.keep = np.flatnonzero(keep)
        self.a = hist_M.counts[keep]
        self.b = hist_C.counts[keep]
        self.v = hist_M.masses[keep]
        self.c = hist_C.masses[keep]
        self.log_vol = np.log(hist_M.bin_volume)
        self.n_m = hist_M.counts.sum()
        self.n_c_used = self.b.sum()

    def loglik(self, omega, r):
        a, b, v, c = self.a, self.b, self.v, self.c
        if r <= 0:
            # limit along the optimal path omega = r c / v
            with np.errstate(divide="ignore"):
                m_term = np.sum(a * np.log(v))
                c_term = np.sum(b[b > 0] * np.log(c[b > 0]))
            return float(m_term + c_term - (self.n_m + self.n_c_used) * self.log_vol)
        with np.errstate(divide="ignore", invalid="ignore"):
            pm = r * c + (1 - omega) * v
            pc = omega * v / r
            m_term = np.sum(a[a > 0] * np.log(pm[a > 0]))
            c_term = np.sum(b[b > 0] * np.log(pc[b > 0]))
        total = m_term + c_term - (self.n_m + self.n_c_used) * self.log_vol
        return float(total) if np.isfinite(total) else -np.inf

    def gradient(self, omega, r):
        a, b, v, c = self.a, self.b, self.v, self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            g = -a * v / (r * c + (1 - omega) * v) + np.where(b > 0, b / omega, 0.0)
        return g

    def _omega_of(self, lam, r):
        """Per-bin stationary point of the Lagrangian, clipped to [0, 1]."""
        a, b, v = self.a, self.b, self.v
        D = r * self.c + v
        upper = D / v
        if lam == 0.0:
            w = b * D / ((a + b) * v)
            return np.clip(w, 0.0, 1.0)
        A = lam * v * v
        B = -v * (lam * D + a + b)
        Cq = b * D
        disc = np.maximum(B * B - 4 * A * Cq, 0.0)
        q = -0.5 * (B + np.copysign(np.sqrt(disc), B))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = q / A
            r2 = np.where(q != 0, Cq / q, np.nan)
        ok1 = (r1 > 0) & (r1 < upper)
        ok2 = (r2 > 0) & (r2 < upper)
        # every kept bin has a > 0, so a missing interior root means b == 0
        # and the derivative is negative on the whole interval
        w = np.where(ok1, r1, np.where(ok2, r2, 0.0))
        return np.clip(w, 0.0, 1.0)

    def solve(self, r, xtol=1e-14):
        """Exact maximizer for a fixed ``r`` via bisection on the multiplier."""
        if r <= 0:
            return np.zeros_like(self.v)
        if r >= 1:
            return np.ones_like(self.v)
        v = self.v

        def h(lam):
            return float(v @ self._omega_of(lam, r)) - r

        lo, hi = -1.0, 1.0
        while h(lo) <= 0:
            lo *= 4
            if lo < -1e300:
                raise ArithmeticError("cannot bracket multiplier")
        while h(hi) >= 0:
            hi *= 4
            if hi > 1e300:
                raise ArithmeticError("cannot bracket multiplier")
        lam = brentq(h, lo, hi, xtol=xtol * max(1.0, abs(lo), abs(hi)), rtol=1e-15,
                     maxiter=500)
        omega = self._omega_of(lam, r)
        # remove the tiny equality residual left by the root finder
        return _project(omega, v, r)

    def solve_projected_gradient(self, r, omega0=None, max_iter=1000, tol=1e-13):
        """Projected-gradient ascent; returns ``(omega, converged)``.

        Steps are scaled by the inverse diagonal curvature and projected onto
        the feasible set in the matching metric. A backtracking line search
        along the projected direction keeps every iterate feasible.
        """
        v, a, b, c = self.v, self.a, self.b, self.c
        lo = np.full_like(v, 1e-12)
        # bins without C points must keep some M mass when c == 0
        hi = np.where(c > 0, 1.0, 1.0 - 1e-9)
        if omega0 is None:
            omega0 = np.full_like(v, r)
        omega = _project(omega0, v, r, lo, hi)
        f = self.loglik(omega, r)
        converged = False
        for _ in range(max_iter):
            g = self.gradient(omega, r)
            pm = r * c + (1 - omega) * v
            curv = a * v * v / (pm * pm) + b / (omega * omega)
            scale = 1.0 / np.maximum(curv, 1e-300)
            direction = _project(omega + scale * g, v, r, lo, hi, scale) - omega
            slope = float(g @ direction)
            if slope <= 0 or np.max(np.abs(direction)) < 1e-15:
                converged = True
                break
            step = 1.0
            while step > 1e-20:
                cand = omega + step * direction
                fc = self.loglik(cand, r)
                if fc >= f + 1e-4 * step * slope:
                    break
                step *= 0.5
            else:
                converged = True
                break
            gain = fc - f
            omega, f = cand, fc
            if gain <= tol * max(1.0, abs(f)):
                converged = True
                break
        return omega, converged


def _project(y, v, r, lo=0.0, hi=1.0, scale=None):
    """Projection onto ``{lo <= w <= hi, v.w = r}``.

    With ``scale`` the metric is ``sum((w - y)**2 / scale)``; the solution
    is ``clip(y - t * scale * v)`` for the multiplier ``t`` found by
    bracketing and Brent's method.
    """
    y = np.asarray(y, dtype=float)
    dv = v if scale is None else scale * v

    def g(t):
        return float(v @ np.clip(y - t * dv, lo, hi)) - r

    if abs(g(0.0)) <= 1e-15:
        return np.clip(y, lo, hi)
    a, b = -1.0, 1.0
    while g(a) < 0:
        a *= 2
        if a < -1e300:
            raise InvalidInputError(f"r={r} outside the feasible range")
    while g(b) > 0:
        b *= 2
        if b > 1e300:
            raise InvalidInputError(f"r={r} outside the feasible range")
    t = brentq(g, a, b, xtol=1e-300, rtol=1e-15, maxiter=1000)
    return np.clip(y - t * dv, lo, hi)


def pointwise_loglik(M, C, hist_M, hist_C, omega, r):
    """Evaluate the constrained likelihood point by point (1-D grids).

    ``omega`` is indexed like the occupied bins of ``hist_M``. ``C`` points in
    bins not occupied by ``M`` are excluded, matching the count form.
    """
    M = np.ravel(M)
    C = np.ravel(C)
    edges = np.asarray(hist_M.edges)
    k = len(edges) - 1
    w = hist_M.bin_width
    full_omega = np.zeros(k)
    keep = np.flatnonzero(hist_M.counts > 0)
    full_omega[keep] = omega

    def locate(x):
        return min(max(int(np.searchsorted(edges, x, side="right")) - 1, 0), k - 1)

    v = hist_M.masses
    c = hist_C.masses
    total = 0.0
    for x in M:
        i = locate(x)
        total += np.log((r * c[i] + (1 - full_omega[i]) * v[i]) / w)
    for x in C:
        i = locate(x)
        if v[i] == 0:
            continue
        total += np.log(full_omega[i] * v[i] / (r * w))
    return float(total)


def default_r_grid(n_points=50, lo=0.01, hi=0.99):
    return np.linspace(lo, hi, n_points)


def ll_curve(hist_M, hist_C, r_grid=None, solver="exact", warm_start=True):
    """Constrained maximum log-likelihood for each ``r`` in ``r_grid``.

    Parameters
    ----------
    solver : {"exact", "projected_gradient"}
        ``"exact"`` solves the separable concave problem by bisection on the
        Lagrange multiplier; ``"projected_gradient"`` runs ascent with
        projection onto the feasible set.
    warm_start : bool
        Start projected-gradient solves from the previous ``r``.
    """
    r_grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    if np.any((r_grid < 0) | (r_grid > 1)):
        raise InvalidInputError("r values must lie in [0, 1]")
    prob = _BinProblem(hist_M, hist_C)
    n, k = len(r_grid), len(prob.v)
    ll = np.empty(n)
    omegas = np.empty((n, k))
    flagged = np.zeros(n, dtype=bool)
    prev = None
    for j, r in enumerate(r_grid):
        try:
            if solver == "exact":
                omega = prob.solve(r)
            elif solver == "projected_gradient":
                omega, ok = prob.solve_projected_gradient(
                    r, omega0=prev if warm_start else None)
                flagged[j] = not ok
            else:
                raise InvalidInputError(f"unknown solver {solver!r}")
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            logger.debug("solver failed at r=%g: %s", r, exc)
            omega = np.clip(np.full(k, r), 0, 1)
            flagged[j] = True
        omegas[j] = omega
        ll[j] = prob.loglik(omega, r)
        prev = omega
    if flagged.any():
        good = ~flagged & np.isfinite(ll)
        if good.sum() >= 2:
            ll[flagged] = np.interp(r_grid[flagged], r_grid[good], ll[good])
        warnings.warn(
            f"{int(flagged.sum())} r-points did not converge; interpolated",
            ConvergenceWarning, stacklevel=2,
        )
    # C points in bins without M points can never be absorbed; they count
    # as saturated at every r
    saturated = (omegas >= 1 - 1e-6) @ prob.c + max(0.0, 1.0 - prob.c.sum())
    return LikelihoodCurve(r_grid, ll, omegas, flagged, saturated, bins=prob.keep)


def _hinge_sse(r, y, knot):
    X = np.column_stack([np.ones_like(r), r, np.maximum(r - knot, 0.0)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(resid @ resid)


def _first_crossing(r, y, level):
    """Smallest ``r`` (linearly interpolated) at which ``y`` exceeds ``level``."""
    above = np.flatnonzero(y > level)
    if len(above) == 0:
        return 1.0
    j = int(above[0])
    if j == 0:
        return float(r[0])
    return float(r[j - 1] + (r[j] - r[j - 1]) * (level - y[j - 1]) / (y[j] - y[j - 1]))


def hinge_knot(r, y):
    """Knot of the least-squares continuous two-segment fit; ties go to the largest ``r``."""
    scale = max(1.0, float(np.max(np.abs(y))))
    sse = np.array([_hinge_sse(r, y, knot) for knot in r])
    best = sse.min()
    tie = sse <= best + 1e-9 * max(best, 1e-12 * scale * scale)
    return float(r[np.flatnonzero(tie)[-1]])


def elbow(curve, saturation=SATURATION):
    """Point where the likelihood curve leaves its plateau.

    For a :class:`LikelihoodCurve` this is the smallest ``r`` at which more
    than ``saturation`` of the component sample lies in bins at the bound
    ``omega_i = 1`` or in bins the mixture sample leaves empty. Below the maximal proportion only sparse tail
    bins saturate through sampling noise; past it the bulk of the
    component saturates within a few grid steps.

    Plain ``(r_grid, ll)`` pairs carry no weights and get the knot of the
    best continuous two-segment linear fit instead.

    A curve that never decreases has no elbow and yields 1.0 with a
    :class:`DegenerateCurveWarning`.
    """
    if hasattr(curve, "r_grid"):
        r, y = np.asarray(curve.r_grid, float), np.asarray(curve.ll, float)
        sat = curve.saturated_mass
    else:
        r, y = np.asarray(curve[0], float), np.asarray(curve[1], float)
        sat = None
    ok = np.isfinite(y)
    if ok.sum() < 5:
        raise InvalidInputError("elbow detection needs at least 5 finite points")
    scale = max(1.0, float(np.max(np.abs(y[ok]))))
    if np.all(np.diff(y[ok]) >= -1e-12 * scale):
        warnings.warn("likelihood curve never decreases; no elbow",
                      DegenerateCurveWarning, stacklevel=2)
        return 1.0
    if sat is not None:
        return _first_crossing(r, np.asarray(sat, float), saturation)
    return hinge_knot(r[ok], y[ok])


def alphamax(M, C, r_grid=None, solver="exact", return_curve=False, saturation=SATURATION):
    """Estimate the maximal proportion of ``C``'s distribution inside ``M``'s.

    Parameters
    ----------
    M, C : array-like
        Mixture and component samples (scores or data with at most three
        dimensions).
    r_grid : array-like, optional
        Defaults to 50 equispaced points in [0.01, 0.99].
    return_curve : bool
        Also return the :class:`LikelihoodCurve`.
    saturation : float
        Share of ``C`` in saturated bins that marks the elbow, see :func:`elbow`.
    """
    hist_M, hist_C = build_histograms(M, C)
    curve = ll_curve(hist_M, hist_C, r_grid, solver=solver)
    curve.elbow = elbow(curve, saturation)
    if return_curve:
        return curve.elbow, curve
    return curve.elbow


def alphamax_n(unlabeled, labeled=None, r_grid=None, solver="exact", saturation=SATURATION):
    """Two-direction AlphaMax followed by the max-canonical correction.

    Parameters
    ----------
    unlabeled, labeled : array-like
        Scores (or low-dimensional data) of ``U`` and ``L``. A
        :class:`~noisypu.transform.TransformedPU` may be passed as
        ``unlabeled`` with ``labeled=None``.

    Returns
    -------
    PriorEstimate
    """
    if labeled is None and hasattr(unlabeled, "scores_unlabeled"):
        unlabeled, labeled = unlabeled.scores_unlabeled, unlabeled.scores_labeled
    a_plus, curve_u = alphamax(unlabeled, labeled, r_grid, solver, True, saturation)
    b_plus, curve_l = alphamax(labeled, unlabeled, r_grid, solver, True, saturation)
    a_c, b_c = a_plus, b_plus
    if a_c * b_c >= 1 or a_c >= 1 or b_c >= 1:
        warnings.warn(
            f"alpha+={a_plus:.3f}, beta+={b_plus:.3f} too close to 1; clipping to {CLIP_MAX}",
            DegenerateCurveWarning, stacklevel=2,
        )
        a_c, b_c = min(a_c, CLIP_MAX), min(b_c, CLIP_MAX)
    alpha_star, beta_star = correction(a_c, b_c)
    return PriorEstimate(a_plus, b_plus, alpha_star, beta_star, "AlphaMaxN",
                         {"curve_unlabeled": curve_u, "curve_labeled": curve_l})


class AlphaMax(BaseEstimator):
    """Maximal proportion of the labeled distribution in the unlabeled one.

    This is the noise-free estimator: with clean labels it estimates the
    class prior directly.

    Parameters
    ----------
    n_grid : int, default=50
    r_min, r_max : float
        Range of the equispaced ``r`` grid.
    solver : {"exact", "projected_gradient"}
    saturation : float, default=0.03
        Share of the component sample in saturated bins that marks the elbow.
    """

    def __init__(self, n_grid=50, r_min=0.01, r_max=0.99, solver="exact",
                 saturation=SATURATION):
        self.n_grid = n_grid
        self.r_min = r_min
        self.r_max = r_max
        self.solver = solver
        self.saturation = saturation

    def _grid(self):
        return default_r_grid(self.n_grid, self.r_min, self.r_max)

    def fit(self, X, s):
        U, L = check_pu(X, s, MIN_SAMPLES, MIN_SAMPLES)
        est, curve = alphamax(U, L, self._grid(), self.solver, True, self.saturation)
        self.alpha_ = est
        self.curve_ = curve
        self.prior_estimate_ = PriorEstimate(est, None, est, 1.0, "AlphaMax",
                                             {"curve_unlabeled": curve})
        return self


class AlphaMaxN(AlphaMax):
    """Noise-robust class prior estimator for positive-unlabeled data.

    Runs AlphaMax in both directions, ``(U, L)`` and ``(L, U)``, and maps the
    two maximal proportions to the class prior ``alpha_`` of ``U`` and the
    positive fraction ``beta_`` of ``L``.

    Attributes
    ----------
    alpha_, beta_ : float
    alpha_plus_, beta_plus_ : float
    prior_estimate_ : PriorEstimate

    Examples
    --------
    >>> from noisypu.datagen import SyntheticSpec, gen_synthetic
    >>> ds = gen_synthetic(SyntheticSpec(delta_mu=4, alpha=0.5, beta=0.75, seed=1))
    >>> est = AlphaMaxN().fit(*ds.to_xs())
    >>> round(est.alpha_, 1)
    0.5
    """

    def fit(self, X, s):
        U, L = check_pu(X, s, MIN_SAMPLES, MIN_SAMPLES)
        pe = alphamax_n(U, L, self._grid(), self.solver, self.saturation)
        self.prior_estimate_ = pe
        self.alpha_plus_, self.beta_plus_ = pe.alpha_plus, pe.beta_plus
        self.alpha_, self.beta_ = pe.alpha_star, pe.beta_star
        return self
