"""Exact identifiability algebra on finite discrete measures.

Every measure is a probability vector over a shared, finite set of atoms.
Events are subsets of atoms, so all quantities below can be computed
exactly (up to floating point) and serve as brute-force oracles for the
sample-based estimators.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .exceptions import InvalidInputError

MASS_TOL = 1e-12
# atom masses >= -FEASIBILITY_TOL count as non-negative
FEASIBILITY_TOL = 1e-12
MAX_ENUM_ATOMS = 20


class DiscreteMeasure:
    """Probability vector over a finite set of atoms.

    Parameters
    ----------
    masses : array-like of shape (n_atoms,)
        Non-negative masses summing to one.
    """

    __slots__ = ("masses",)

    def __init__(self, masses):
        m = np.asarray(masses, dtype=float).ravel()
        if m.size == 0:
            raise InvalidInputError("a measure needs at least one atom")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidInputError("masses must be finite and non-negative")
        if abs(m.sum() - 1.0) > MASS_TOL * max(1, m.size):
            raise InvalidInputError(f"masses sum to {m.sum()!r}, expected 1")
        m.setflags(write=False)
        self.masses = m

    @classmethod
    def from_counts(cls, counts):
        c = np.asarray(counts, dtype=float)
        return cls(c / c.sum())

    def __len__(self):
        return self.masses.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.masses, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return self.masses.shape == other.masses.shape and bool(
            np.array_equal(self.masses, other.masses)
        )

    def __hash__(self):
        return hash(self.masses.tobytes())

    def __repr__(self):
        return f"DiscreteMeasure({np.array2string(self.masses, precision=6)})"

    def measure_of(self, atoms):
        """Mass of the event given as an iterable of atom indices."""
        return float(self.masses[list(atoms)].sum())


@dataclass(frozen=True)
class PriorPair:
    """Mixing proportions ``(alpha, beta)`` with ``0 <= alpha < beta <= 1``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha < self.beta <= 1.0):
            raise InvalidInputError(
                f"need 0 <= alpha < beta <= 1, got ({self.alpha}, {self.beta})"
            )


@dataclass(frozen=True)
class CanonicalForm:
    alpha_star: float
    beta_star: float
    mu0_star: DiscreteMeasure
    mu1_star: DiscreteMeasure


def _pair(a, b):
    a = a if isinstance(a, DiscreteMeasure) else DiscreteMeasure(a)
    b = b if isinstance(b, DiscreteMeasure) else DiscreteMeasure(b)
    if len(a) != len(b):
        raise InvalidInputError(
            f"measures live on different atom sets ({len(a)} vs {len(b)})"
        )
    return a, b


def amax(lam, lam1, check_subsets=False):
    """Maximum proportion with which ``lam1`` can be a component of ``lam``.

    For discrete measures the infimum of ``lam(A) / lam1(A)`` over events is
    attained on a single atom, so the atom-wise ratio minimum is returned.

    Parameters
    ----------
    lam, lam1 : DiscreteMeasure or array-like
    check_subsets : bool, default=False
        Also enumerate every non-empty event (at most 20 atoms) and assert
        that the event infimum matches the atom minimum.

    Returns
    -------
    float in [0, 1]
    """
    lam, lam1 = _pair(lam, lam1)
    m, m1 = lam.masses, lam1.masses
    support = m1 > 0
    if not support.any():
        raise InvalidInputError("component measure has no positive atom")
    with np.errstate(over="ignore"):
        value = float(np.clip(np.min(m[support] / m1[support]), 0.0, 1.0))
    if check_subsets:
        brute = amax_by_subsets(lam, lam1)
        if abs(brute - value) > 1e-12:
            raise AssertionError(
                f"atom minimum {value} disagrees with event infimum {brute}"
            )
    return value


def amax_by_subsets(lam, lam1):
    """Event-enumeration version of :func:`amax` (exponential in atoms)."""
    lam, lam1 = _pair(lam, lam1)
    n = len(lam)
    if n > MAX_ENUM_ATOMS:
        raise InvalidInputError(f"subset enumeration limited to {MAX_ENUM_ATOMS} atoms")
    m, m1 = lam.masses, lam1.masses
    best = np.inf
    # subnormal denominators give inf ratios, which cannot be the minimum
    with np.errstate(over="ignore"):
        for size in range(1, n + 1):
            for event in combinations(range(n), size):
                idx = list(event)
                den = m1[idx].sum()
                if den > 0:
                    best = min(best, m[idx].sum() / den)
    if not np.isfinite(best):
        raise InvalidInputError("component measure has no positive atom")
    return float(np.clip(best, 0.0, 1.0))


def _as_measure(vec):
    vec = np.where(np.abs(vec) < FEASIBILITY_TOL, 0.0, vec)
    vec = np.clip(vec, 0.0, None)
    return DiscreteMeasure(vec / vec.sum())


def mixture(alpha, mu1, mu0):
    """Return ``alpha * mu1 + (1 - alpha) * mu0``."""
    mu1, mu0 = _pair(mu1, mu0)
    v = alpha * mu1.masses + (1 - alpha) * mu0.masses
    return DiscreteMeasure(v / v.sum())


def decompose(mu, nu, pair):
    """Recover the components generating ``(mu, nu)`` for given proportions.

    Returns
    -------
    (mu0, mu1) : tuple of DiscreteMeasure, or None
        ``None`` when the proportions are infeasible, i.e. one of the
        recovered vectors has a negative atom.
    """
    mu, nu = _pair(mu, nu)
    if mu == nu:
        raise InvalidInputError("mu and nu must differ")
    alpha, beta = (pair.alpha, pair.beta) if isinstance(pair, PriorPair) else pair
    if alpha == beta:
        raise InvalidInputError("alpha == beta leaves the components undetermined")
    d = beta - alpha
    v0 = (beta * mu.masses - alpha * nu.masses) / d
    v1 = ((1 - alpha) * nu.masses - (1 - beta) * mu.masses) / d
    if v0.min() < -FEASIBILITY_TOL or v1.min() < -FEASIBILITY_TOL:
        return None
    return _as_measure(v0), _as_measure(v1)


def is_feasible(mu, nu, alpha, beta):
    """Membership test for the set of proportions that can generate ``(mu, nu)``."""
    a_plus = amax(mu, nu)
    b_plus = amax(nu, mu)
    return alpha / beta <= a_plus + FEASIBILITY_TOL and (1 - beta) / (
        1 - alpha
    ) <= b_plus + FEASIBILITY_TOL


def correction(alpha_plus, beta_plus):
    """Map maximal proportions ``(alpha+, beta+)`` to ``(alpha*, beta*)``."""
    if not (0 <= alpha_plus < 1 and 0 <= beta_plus < 1):
        raise InvalidInputError(
            f"need alpha_plus, beta_plus in [0, 1), got ({alpha_plus}, {beta_plus})"
        )
    den = 1.0 - alpha_plus * beta_plus
    if den <= 0:
        raise InvalidInputError("alpha_plus * beta_plus must be < 1")
    return alpha_plus * (1 - beta_plus) / den, (1 - beta_plus) / den


def canonical(mu, nu):
    """Max-canonical (mutually irreducible) decomposition of ``(mu, nu)``."""
    mu, nu = _pair(mu, nu)
    if mu == nu:
        raise InvalidInputError("mu and nu must differ")
    a_plus = amax(mu, nu)
    b_plus = amax(nu, mu)
    if a_plus >= 1 or b_plus >= 1:
        raise InvalidInputError("mu and nu are numerically indistinguishable")
    alpha_star, beta_star = correction(a_plus, b_plus)
    mu0 = _as_measure((mu.masses - a_plus * nu.masses) / (1 - a_plus))
    mu1 = _as_measure((nu.masses - b_plus * mu.masses) / (1 - b_plus))
    return CanonicalForm(alpha_star, beta_star, mu0, mu1)


def random_irreducible_pair(rng, n_atoms):
    """Draw mutually irreducible components ``(mu0, mu1)``.

    Each component gets at least one atom the other does not charge, which
    forces both maximal proportions to zero.
    """
    if n_atoms < 2:
        raise InvalidInputError("need at least two atoms")
    perm = rng.permutation(n_atoms)
    own0, own1 = perm[0], perm[1]
    rest = perm[2:]
    w0 = np.zeros(n_atoms)
    w1 = np.zeros(n_atoms)
    w0[own0] = rng.uniform(0.05, 1.0)
    w1[own1] = rng.uniform(0.05, 1.0)
    if rest.size:
        shared = rest[rng.random(rest.size) < 0.7]
        w0[shared] = rng.uniform(0.0, 1.0, shared.size)
        w1[shared] = rng.uniform(0.0, 1.0, shared.size)
        # atoms charged by exactly one side
        only = np.setdiff1d(rest, shared)
        side = rng.random(only.size) < 0.5
        w0[only[side]] = rng.uniform(0.05, 1.0, side.sum())
        w1[only[~side]] = rng.uniform(0.05, 1.0, (~side).sum())
    return DiscreteMeasure(w0 / w0.sum()), DiscreteMeasure(w1 / w1.sum())


def random_measure(rng, n_atoms, sparsity=0.0):
    w = rng.random(n_atoms)
    w[rng.random(n_atoms) < sparsity] = 0.0
    if not w.any():
        w[rng.integers(n_atoms)] = 1.0
    return DiscreteMeasure(w / w.sum())


def check_suite(n_atoms=8, trials=1000, seed=0):
    """Run the identifiability property checks on random constructions.

    Returns
    -------
    dict
        Failure counts keyed by property name; all zero means success.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    failures = {"subset_infimum": 0, "round_trip": 0, "correction_inverse": 0,
                "feasibility_boundary": 0, "unidentifiability": 0}
    for _ in range(trials):
        k = int(rng.integers(2, n_atoms + 1))
        # (a) atom minimum equals event infimum
        lam = random_measure(rng, k, sparsity=0.2)
        lam1 = random_measure(rng, k, sparsity=0.2)
        if abs(amax(lam, lam1) - amax_by_subsets(lam, lam1)) > 1e-12:
            failures["subset_infimum"] += 1

        # (b) canonical round trip on irreducible components
        mu0, mu1 = random_irreducible_pair(rng, k)
        alpha = rng.uniform(0.0, 0.95)
        beta = rng.uniform(alpha + 0.02, 1.0)
        mu = mixture(alpha, mu1, mu0)
        nu = mixture(beta, mu1, mu0)
        form = canonical(mu, nu)
        if not (
            abs(form.alpha_star - alpha) < 1e-8
            and abs(form.beta_star - beta) < 1e-8
            and np.allclose(form.mu0_star.masses, mu0.masses, atol=1e-8, rtol=0)
            and np.allclose(form.mu1_star.masses, mu1.masses, atol=1e-8, rtol=0)
        ):
            failures["round_trip"] += 1

        # (c) correction inverse identities
        ap, bp = rng.uniform(0, 1, 2) * (1 - 1e-6)
        a_s, b_s = correction(ap, bp)
        if abs(a_s / b_s - ap) > 1e-12 or abs((1 - b_s) / (1 - a_s) - bp) > 1e-12:
            failures["correction_inverse"] += 1

        # (d) feasibility of decompose <=> the two ratio conditions
        mu = random_measure(rng, k)
        nu = random_measure(rng, k)
        if mu == nu:
            continue
        ap, bp = amax(mu, nu), amax(nu, mu)
        for a in np.linspace(0.0, 0.9, 4):
            for b in np.linspace(a + 0.05, 1.0, 4):
                lhs = decompose(mu, nu, (a, b)) is not None
                # keep clear of the boundary where rounding decides
                m1, m2 = a / b - ap, (1 - b) / (1 - a) - bp
                if min(abs(m1), abs(m2)) < 1e-9:
                    continue
                if lhs != (m1 <= 0 and m2 <= 0):
                    failures["feasibility_boundary"] += 1

        # unidentifiability witness: (0, 1) and (alpha+ t, 1) both feasible
        if ap > 0 and bp > 0:
            t = rng.uniform(1e-3, 1.0)
            if decompose(mu, nu, (0.0, 1.0)) is None or decompose(
                mu, nu, (ap * t, 1.0)
            ) is None:
                failures["unidentifiability"] += 1
    return failures
