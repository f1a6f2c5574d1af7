import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.mixture import GaussianMixture

from noisypu.base import PUDataset
from noisypu.datagen import SyntheticSpec, gen_synthetic
from noisypu.exceptions import DegenerateComponentError, InvalidInputError
from noisypu.msgmm import (MSGMM, MsGmmParams, Responsibilities, e_step, fit,
                           initial_params, log_likelihood, m_step, run_em)


def unit_params(alpha=0.5, beta=0.75, u0=0.0, u1=4.0):
    return MsGmmParams(alpha, beta, np.array([u0]), np.array([u1]),
                       np.eye(1), np.eye(1))


def small_dataset(seed=0, n_u=400, n_l=100, d=1):
    return gen_synthetic(SyntheticSpec("gaussian", 2.0, 0.3, 0.8, n_u, n_l, seed, d))


def textbook_step(X, weights, means, covs, center_on_previous):
    """One EM step of a plain two-component GMM, written out longhand."""
    n, d = X.shape
    dens = np.zeros((n, 2))
    for k in range(2):
        diff = X - means[k]
        inv = np.linalg.inv(covs[k])
        q = np.einsum("ij,jk,ik->i", diff, inv, diff)
        norm = np.sqrt((2 * np.pi) ** d * np.linalg.det(covs[k]))
        dens[:, k] = weights[k] * np.exp(-0.5 * q) / norm
    r = dens / dens.sum(axis=1, keepdims=True)
    nk = r.sum(axis=0)
    new_means = [(r[:, k] @ X) / nk[k] for k in range(2)]
    new_covs = []
    for k in range(2):
        c = means[k] if center_on_previous else new_means[k]
        diff = X - c
        new_covs.append((r[:, k][:, None] * diff).T @ diff / nk[k])
    return nk / n, new_means, new_covs


class TestEStep:
    def test_identical_components(self):
        p = MsGmmParams(0.3, 0.8, np.zeros(1), np.zeros(1), np.eye(1), np.eye(1))
        ds = PUDataset(np.linspace(-2, 2, 7), np.linspace(-1, 1, 5))
        r = e_step(ds, p)
        np.testing.assert_allclose(r.w_u, 0.3, rtol=1e-12)
        np.testing.assert_allclose(r.w_l, 0.8, rtol=1e-12)

    def test_zero_alpha(self):
        ds = PUDataset(np.linspace(-3, 7, 11), [1.0, 2.0])
        assert np.all(e_step(ds, unit_params(alpha=0.0)).w_u == 0)

    def test_symmetric_midpoint(self):
        r = e_step(PUDataset([2.0], [2.0]), unit_params(alpha=0.5))
        assert r.w_u[0] == pytest.approx(0.5, abs=1e-15)

    def test_far_tail_no_underflow(self):
        r = e_step(PUDataset([-60.0, 80.0], [0.0]), unit_params())
        assert np.all(np.isfinite(r.w_u))
        assert r.w_u[0] < 1e-100 and r.w_u[1] == pytest.approx(1.0)

    def test_range(self):
        ds = small_dataset()
        r = e_step(ds, unit_params(0.3, 0.8, 0.0, 2.0))
        assert np.all((r.w_u >= 0) & (r.w_u <= 1))
        assert np.all((r.w_l >= 0) & (r.w_l <= 1))


class TestMStep:
    def test_all_positive_is_degenerate(self):
        # every responsibility at 1 leaves no mass for the negative component
        ds = small_dataset()
        resp = Responsibilities(np.ones(len(ds.unlabeled)), np.ones(len(ds.labeled)))
        with pytest.raises(DegenerateComponentError):
            m_step(ds, resp)

    def test_near_all_positive(self):
        ds = small_dataset()
        eps = 1e-6
        resp = Responsibilities(np.full(len(ds.unlabeled), 1 - eps),
                                np.full(len(ds.labeled), 1 - eps))
        p = m_step(ds, resp)
        pooled = np.vstack([ds.unlabeled, ds.labeled]).mean(axis=0)
        assert p.alpha == pytest.approx(1.0, abs=1e-5)
        assert p.beta == pytest.approx(1.0, abs=1e-5)
        np.testing.assert_allclose(p.u1, pooled, atol=1e-10)

    def test_proportions_are_means(self):
        ds = small_dataset(1)
        rng = np.random.default_rng(0)
        resp = Responsibilities(rng.random(len(ds.unlabeled)), rng.random(len(ds.labeled)))
        p = m_step(ds, resp)
        assert p.alpha == pytest.approx(resp.w_u.mean())
        assert p.beta == pytest.approx(resp.w_l.mean())

    def test_covariance_invariants(self):
        ds = small_dataset(2, d=3)
        rng = np.random.default_rng(1)
        resp = Responsibilities(rng.random(len(ds.unlabeled)), rng.random(len(ds.labeled)))
        p = m_step(ds, resp)
        for S in (p.sigma0, p.sigma1):
            assert np.abs(S - S.T).max() <= 1e-10
            assert np.linalg.eigvalsh(S).min() >= 1e-6 * np.trace(S) / 3 * 0.999

    def test_converged_fit_recovers_means(self):
        ds = gen_synthetic(SyntheticSpec("gaussian", 4.0, 0.5, 0.75, 10000, 1000, 3))
        res = fit(ds, seed=0)
        p = m_step(ds, e_step(ds, res.params))
        assert p.u0[0] == pytest.approx(0.0, abs=0.1)
        assert p.u1[0] == pytest.approx(4.0, abs=0.1)

    def test_previous_centring_adds_mean_shift(self):
        ds = small_dataset(4)
        start = unit_params(0.3, 0.8, -1.0, 3.0)
        resp = e_step(ds, start)
        fresh = m_step(ds, resp, reg_scale=0)
        old = m_step(ds, resp, previous=start, reg_scale=0)
        shift = (fresh.u1 - start.u1) ** 2
        np.testing.assert_allclose(old.sigma1 - fresh.sigma1, np.atleast_2d(shift),
                                   atol=1e-10)


class TestReduction:
    @pytest.mark.parametrize("d", [1, 2])
    def test_matches_sklearn_gmm(self, d):
        rng = np.random.default_rng(d)
        U = np.vstack([rng.normal(0, 1, (300, d)), rng.normal(3, 1.5, (120, d))])
        ds = PUDataset(U, np.empty((0, d)))
        p = MsGmmParams(0.4, np.nan, np.full(d, 0.5), np.full(d, 2.0),
                        np.eye(d), 2 * np.eye(d))
        gm = GaussianMixture(2, covariance_type="full", reg_covar=0.0, max_iter=1,
                             warm_start=True, tol=0.0,
                             weights_init=[1 - p.alpha, p.alpha], means_init=[p.u0, p.u1],
                             precisions_init=[np.linalg.inv(p.sigma0),
                                              np.linalg.inv(p.sigma1)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for _ in range(15):
                p = m_step(ds, e_step(ds, p), reg_scale=0)
                gm.fit(U)
                assert abs(gm.weights_[1] - p.alpha) < 1e-10
                np.testing.assert_allclose(gm.means_[1], p.u1, atol=1e-10)
                np.testing.assert_allclose(gm.means_[0], p.u0, atol=1e-10)
                np.testing.assert_allclose(gm.covariances_[1], p.sigma1, atol=1e-10)
                np.testing.assert_allclose(gm.covariances_[0], p.sigma0, atol=1e-10)

    def test_previous_centring_matches_longhand(self):
        rng = np.random.default_rng(7)
        U = np.vstack([rng.normal(0, 1, (200, 2)), rng.normal(2, 1, (100, 2))])
        ds = PUDataset(U, np.empty((0, 2)))
        p = MsGmmParams(0.4, np.nan, np.zeros(2), np.ones(2) * 2, np.eye(2), np.eye(2))
        w, means, covs = [0.6, 0.4], [p.u0, p.u1], [p.sigma0, p.sigma1]
        for _ in range(10):
            nxt = m_step(ds, e_step(ds, p), previous=p, reg_scale=0)
            w, means, covs = textbook_step(U, w, means, covs, center_on_previous=True)
            assert nxt.alpha == pytest.approx(w[1], abs=1e-10)
            np.testing.assert_allclose(nxt.u1, means[1], atol=1e-10)
            np.testing.assert_allclose(nxt.sigma0, covs[0], atol=1e-10)
            p = nxt


class TestLikelihood:
    @pytest.mark.parametrize("center", ["previous", "current"])
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_monotone(self, center, seed):
        ds = small_dataset(seed, 300, 80, d=1 + seed % 2)
        init = initial_params(ds, np.random.default_rng(seed))
        _, _, _, hist = run_em(ds, init, max_iter=60, tol=0, center=center)
        assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[1:]).clip(1))

    @pytest.mark.parametrize("a,b", [(0.25, 0.75), (0.375, 0.5), (0.125, 0.9375)])
    def test_swap_symmetry_exact(self, a, b):
        ds = small_dataset(5, d=2)
        p = MsGmmParams(a, b, np.zeros(2), np.ones(2),
                        np.array([[1.0, 0.3], [0.3, 2.0]]), np.eye(2) * 0.5)
        assert log_likelihood(ds, p) == log_likelihood(ds, p.swapped())


class TestFit:
    def test_exchangeable(self):
        ds = small_dataset(6)
        rng = np.random.default_rng(0)
        perm = PUDataset(rng.permutation(ds.unlabeled), rng.permutation(ds.labeled))
        a = fit(ds, seed=3, n_restarts=3).params
        b = fit(perm, seed=3, n_restarts=3).params
        assert a.alpha == pytest.approx(b.alpha, abs=1e-6)
        assert a.beta == pytest.approx(b.beta, abs=1e-6)

    def test_alpha_below_beta(self):
        res = fit(small_dataset(8), seed=0)
        assert res.params.alpha < res.params.beta
        assert res.estimate.alpha_star == res.params.alpha
        assert res.estimate.alpha_plus == pytest.approx(res.params.alpha / res.params.beta)

    def test_well_separated_accuracy(self):
        ds = gen_synthetic(SyntheticSpec("gaussian", 4.0, 0.5, 0.75, 10000, 1000, 11))
        res = fit(ds, seed=0)
        assert res.params.alpha == pytest.approx(0.5, abs=0.02)
        assert res.params.beta == pytest.approx(0.75, abs=0.05)

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            fit(PUDataset([1.0, 2.0, 3.0], [1.0]))

    def test_bad_center(self):
        with pytest.raises(InvalidInputError):
            run_em(small_dataset(), unit_params(0.3, 0.8, 0, 2), center="middle")


class TestEstimator:
    def test_sklearn_shape(self):
        ds = small_dataset(9)
        X, s = ds.to_xs()
        est = MSGMM(n_restarts=3, random_state=0).fit(X, s)
        assert 0 <= est.alpha_ < est.beta_ <= 1
        proba = est.predict_proba(X[:5])
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert np.isfinite(est.score(X, s))

    def test_get_set_params(self):
        est = MSGMM(n_restarts=4)
        assert est.get_params()["n_restarts"] == 4
        assert est.set_params(tol=1e-5).tol == 1e-5

    def test_json_dump(self):
        X, s = small_dataset(10).to_xs()
        doc = json.loads(MSGMM(n_restarts=2, random_state=1).fit(X, s).to_json())
        assert doc["format"] == "noisypu.msgmm/1"
        back = MsGmmParams.from_dict(doc["params"])
        assert back.alpha == doc["estimate"]["alpha_star"]
