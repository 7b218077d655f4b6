import numpy as np
import pytest
from scipy.linalg import subspace_angles

from fedmvppca import (
    CenterDataset,
    e_step,
    expected_complete_loglik,
    init_params,
    latent_posterior,
    local_round,
    marginal_view_covariance,
)
from fedmvppca.client import update_mu, update_sigma2, update_w
from fedmvppca.errors import NoObservedView

from conftest import (
    dataset_from_params,
    make_layout,
    make_state,
    random_global_params,
    random_local_params,
)


def empty_dataset(layout, present=None):
    present = layout.names if present is None else present
    return CenterDataset(layout=layout, ids=[], groups=[],
                         views={k: np.zeros((0, layout.dim(k)))
                                for k in present})


class TestEStep:
    def test_zero_loading_prior_moments(self, rng):
        layout = make_layout([3, 2])
        params = random_local_params(layout, 2, rng)
        params.w = {k: np.zeros_like(v) for k, v in params.w.items()}
        ds = dataset_from_params(layout, params, rng, 5)
        stats = e_step(make_state(layout, params, ds))
        np.testing.assert_allclose(stats.means, 0.0, atol=1e-14)
        np.testing.assert_allclose(stats.sum_xxT, 5 * np.eye(2), atol=1e-12)

    def test_single_subject_aggregates(self, rng):
        layout = make_layout([3, 2])
        params = random_local_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 1)
        stats = e_step(make_state(layout, params, ds))
        m = latent_posterior(params, ds.record(0))
        np.testing.assert_allclose(stats.sum_x, m.mean, atol=1e-12)
        np.testing.assert_allclose(stats.sum_xxT, m.second_moment, atol=1e-12)

    def test_matches_per_subject_loop_oracle(self, rng):
        layout = make_layout([4, 3])
        params = random_local_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 10)
        stats = e_step(make_state(layout, params, ds))
        sum_x = np.zeros(2)
        sum_xxT = np.zeros((2, 2))
        cross = {k: np.zeros((layout.dim(k), 2)) for k in layout.names}
        for i in range(10):
            m = latent_posterior(params, ds.record(i))
            sum_x += m.mean
            sum_xxT += m.second_moment
            for k in layout.names:
                cross[k] += np.outer(ds.views[k][i] - params.mu[k], m.mean)
            np.testing.assert_allclose(stats.moments(i).mean, m.mean,
                                       atol=1e-12)
        np.testing.assert_allclose(stats.sum_x, sum_x, atol=1e-12)
        np.testing.assert_allclose(stats.sum_xxT, sum_xxT, atol=1e-12)
        for k in layout.names:
            np.testing.assert_allclose(stats.cross[k], cross[k], atol=1e-12)

    def test_no_observed_view(self, rng):
        layout = make_layout([2, 3])
        params = random_local_params(layout, 1, rng, present=("view1",))
        ds = dataset_from_params(
            layout, random_local_params(layout, 1, rng), rng, 3,
            present=("view2",))
        with pytest.raises(NoObservedView):
            e_step(make_state(layout, params, ds))


class TestUpdateMu:
    def test_prior_recovery_empty_dataset(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        state = make_state(layout, params, empty_dataset(layout))
        got = update_mu(state, "view1", prior)
        np.testing.assert_allclose(got, prior.views["view1"].mu_tilde,
                                   atol=1e-12)

    def test_diffuse_prior_gives_sample_mean(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        params.w["view1"] = np.zeros((3, 2))
        prior = random_global_params(layout, 2, rng)
        prior.views["view1"].sigma2_mu_tilde = 1e12
        ds = dataset_from_params(layout, params, rng, 20)
        state = make_state(layout, params, ds)
        got = update_mu(state, "view1", prior)
        mean = ds.views["view1"].mean(axis=0)
        assert np.max(np.abs(got - mean)) < 1e-6 * np.linalg.norm(mean)

    def test_matches_dense_solve_oracle(self, rng):
        layout = make_layout([2])
        params = random_local_params(layout, 1, rng)
        prior = random_global_params(layout, 1, rng)
        ds = dataset_from_params(layout, params, rng, 3)
        state = make_state(layout, params, ds)
        got = update_mu(state, "view1", prior)

        vp = prior.views["view1"]
        c = marginal_view_covariance(params, "view1")
        a = 3 * np.eye(2) + c / vp.sigma2_mu_tilde
        b = ds.views["view1"].sum(axis=0) \
            + c @ vp.mu_tilde / vp.sigma2_mu_tilde
        np.testing.assert_allclose(got, np.linalg.solve(a, b), atol=1e-10)

    def test_joint_form_maximizes_q_functional(self, rng):
        # the joint form must solve d/dmu of the expected complete-data
        # log-likelihood plus prior: (n/s2 + 1/s2_mu) mu =
        # (sum t - W sum<x>)/s2 + mu_tilde/s2_mu
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 6)
        state = make_state(layout, params, ds)
        stats = e_step(state)
        got = update_mu(state, "view1", prior, form="joint", stats=stats)
        vp = prior.views["view1"]
        s2 = params.sigma2["view1"]
        lhs = (6 / s2 + 1 / vp.sigma2_mu_tilde) * got
        rhs = (ds.views["view1"].sum(axis=0)
               - params.w["view1"] @ stats.sum_x) / s2 \
            + vp.mu_tilde / vp.sigma2_mu_tilde
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_joint_form_prior_recovery(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        state = make_state(layout, params, empty_dataset(layout))
        stats = e_step(state)
        got = update_mu(state, "view1", prior, form="joint", stats=stats)
        np.testing.assert_array_equal(got, prior.views["view1"].mu_tilde)

    def test_em_mode_is_sample_mean(self, rng):
        layout = make_layout([4])
        params = random_local_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 9)
        state = make_state(layout, params, ds)
        np.testing.assert_allclose(update_mu(state, "view1", None),
                                   ds.views["view1"].mean(axis=0))


class TestUpdateW:
    def test_prior_recovery_empty_dataset(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        state = make_state(layout, params, empty_dataset(layout))
        stats = e_step(state)
        got = update_w(state, "view1", prior, stats)
        np.testing.assert_allclose(got, prior.views["view1"].w_tilde,
                                   atol=1e-12)

    def test_ridge_free_limit(self, rng):
        q = 2
        layout = make_layout([3])
        target = rng.standard_normal((3, q))
        params = random_local_params(layout, q, rng)
        params.mu["view1"] = np.zeros(3)
        prior = random_global_params(layout, q, rng)
        prior.views["view1"].sigma2_w_tilde = 1e12
        ds = CenterDataset(layout=layout, ids=["a", "b"], groups=["g1", "g2"],
                           views={"view1": target.T.copy()})
        state = make_state(layout, params, ds)
        stats = e_step(state)
        stats.means = np.eye(q)
        stats.sum_xxT = np.eye(q)
        got = update_w(state, "view1", prior, stats)
        assert np.max(np.abs(got - target)) < 1e-6 * np.max(np.abs(target))

    def test_matches_dense_inverse_oracle(self, rng):
        layout = make_layout([4])
        q = 2
        params = random_local_params(layout, q, rng)
        prior = random_global_params(layout, q, rng)
        ds = dataset_from_params(layout, params, rng, 8)
        state = make_state(layout, params, ds)
        stats = e_step(state)
        got = update_w(state, "view1", prior, stats)

        vp = prior.views["view1"]
        ridge = params.sigma2["view1"] / vp.sigma2_w_tilde
        cross = np.zeros((4, q))
        for i in range(8):
            cross += np.outer(ds.views["view1"][i] - params.mu["view1"],
                              stats.means[i])
        oracle = (cross + ridge * vp.w_tilde) \
            @ np.linalg.inv(stats.sum_xxT + ridge * np.eye(q))
        np.testing.assert_allclose(got, oracle, atol=1e-10)

    def test_pads_columns_when_view_is_small(self, rng):
        layout = make_layout([2])
        q = 4
        params = random_local_params(layout, q, rng)
        prior = random_global_params(layout, q, rng)
        ds = dataset_from_params(layout, params, rng, 6)
        state = make_state(layout, params, ds)
        stats = e_step(state)
        got = update_w(state, "view1", prior, stats)
        assert got.shape == (2, q)
        assert np.all(got[:, 2:] == 0.0)


class TestUpdateSigma2:
    def test_prior_mode_empty_dataset(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        state = make_state(layout, params, empty_dataset(layout))
        stats = e_step(state)
        got = update_sigma2(state, "view1", prior, stats)
        vp = prior.views["view1"]
        assert got == pytest.approx(vp.beta / (vp.alpha + 1.0), rel=1e-12)

    def test_perfect_fit_vanishes(self, rng):
        layout = make_layout([3])
        q = 2
        params = random_local_params(layout, q, rng)
        params.w["view1"] = np.zeros((3, q))
        prior = random_global_params(layout, q, rng)
        prior.views["view1"].alpha = 3.0
        prior.views["view1"].beta = 1e-30
        mu = params.mu["view1"]
        ds = CenterDataset(layout=layout, ids=["a", "b"], groups=["g1", "g2"],
                           views={"view1": np.vstack([mu, mu])})
        state = make_state(layout, params, ds)
        stats = e_step(state)
        got = update_sigma2(state, "view1", prior, stats)
        assert 0.0 <= got < 1e-12

    def test_matches_loop_oracle(self, rng):
        layout = make_layout([4])
        q = 2
        params = random_local_params(layout, q, rng)
        prior = random_global_params(layout, q, rng)
        ds = dataset_from_params(layout, params, rng, 7)
        state = make_state(layout, params, ds)
        stats = e_step(state)
        got = update_sigma2(state, "view1", prior, stats)

        vp = prior.views["view1"]
        w = params.w["view1"]
        acc = 2.0 * vp.beta
        for i in range(7):
            m = stats.moments(i)
            resid = ds.views["view1"][i] - params.mu["view1"]
            acc += float(resid @ resid)
            acc += float(np.trace(w.T @ w @ m.second_moment))
            acc -= 2.0 * float(m.mean @ w.T @ resid)
        oracle = acc / (7 * 4 + 2.0 * (vp.alpha + 1.0))
        assert got == pytest.approx(oracle, rel=1e-10)


class TestLocalRound:
    def test_zero_iterations_identity(self, rng):
        layout = make_layout([3])
        params = random_local_params(layout, 2, rng)
        before = params.copy()
        ds = dataset_from_params(layout, params, rng, 5)
        prior = random_global_params(layout, 2, rng)
        result = local_round(make_state(layout, params, ds), prior, 0, "map")
        for k in layout.names:
            np.testing.assert_array_equal(result.params.mu[k], before.mu[k])
            np.testing.assert_array_equal(result.params.w[k], before.w[k])
            assert result.params.sigma2[k] == before.sigma2[k]

    def test_map_objective_non_decreasing(self, rng):
        violations = 0
        for trial in range(25):
            dims = list(rng.integers(3, 7, size=int(rng.integers(1, 4))))
            layout = make_layout(dims)
            q = int(rng.integers(1, min(dims)))
            params = random_local_params(layout, q, rng)
            truth = random_local_params(layout, q, rng)
            ds = dataset_from_params(layout, truth, rng,
                                     int(rng.integers(4, 25)))
            prior = random_global_params(layout, q, rng)
            result = local_round(make_state(layout, params, ds), prior, 12,
                                 "map")
            diffs = np.diff(result.objectives)
            violations += int(np.any(diffs < -1e-8))
        assert violations == 0

    def test_prior_recovery_after_one_iteration(self, rng):
        layout = make_layout([3, 2])
        q = 2
        params = random_local_params(layout, q, rng)
        prior = random_global_params(layout, q, rng)
        state = make_state(layout, params, empty_dataset(layout))
        result = local_round(state, prior, 1, "map")
        for k in layout.names:
            vp = prior.views[k]
            np.testing.assert_allclose(result.params.mu[k], vp.mu_tilde,
                                       atol=1e-12)
            np.testing.assert_allclose(result.params.w[k], vp.w_tilde,
                                       atol=1e-12)
            assert result.params.sigma2[k] == pytest.approx(
                vp.beta / (vp.alpha + 1.0), rel=1e-12)

    def test_update_ops_do_not_touch_other_views(self, rng):
        layout = make_layout([3, 2])
        params = random_local_params(layout, 2, rng)
        prior = random_global_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 6)
        state = make_state(layout, params, ds)
        stats = e_step(state)
        snapshot = params.copy()
        update_mu(state, "view1", prior)
        update_w(state, "view1", prior, stats)
        update_sigma2(state, "view1", prior, stats)
        for k in layout.names:
            np.testing.assert_array_equal(state.params.mu[k], snapshot.mu[k])
            np.testing.assert_array_equal(state.params.w[k], snapshot.w[k])
            assert state.params.sigma2[k] == snapshot.sigma2[k]

    def test_subject_permutation_invariance(self, rng):
        layout = make_layout([3, 2])
        params = random_local_params(layout, 2, rng)
        ds = dataset_from_params(layout, params, rng, 11)
        prior = random_global_params(layout, 2, rng)
        perm = rng.permutation(11)
        shuffled = ds.subset(perm)
        r1 = local_round(make_state(layout, params.copy(), ds), prior, 3,
                         "map")
        r2 = local_round(make_state(layout, params.copy(), shuffled), prior,
                         3, "map")
        for k in layout.names:
            np.testing.assert_allclose(r1.params.mu[k], r2.params.mu[k],
                                       rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(r1.params.w[k], r2.params.w[k],
                                       rtol=1e-12, atol=1e-12)
            assert r1.params.sigma2[k] == pytest.approx(
                r2.params.sigma2[k], rel=1e-12)

    def test_em_converges_to_ml_ppca(self):
        # single view, single center: EM must reach the closed-form ML
        # solution (noise = mean discarded sample-covariance eigenvalue,
        # loadings spanning the leading eigenspace)
        rng = np.random.default_rng(42)
        layout = make_layout([8], ["view1"])
        q = 2
        truth = random_local_params(layout, q, rng, sigma_lo=0.4,
                                    sigma_hi=0.6)
        ds = dataset_from_params(layout, truth, rng, 600)
        params = init_params(layout, {"view1"}, q,
                             np.random.default_rng(1))
        result = local_round(make_state(layout, params, ds), None, 800, "em")

        data = ds.views["view1"]
        centered = data - data.mean(axis=0)
        sample_cov = centered.T @ centered / data.shape[0]
        eigvals, eigvecs = np.linalg.eigh(sample_cov)
        eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
        sigma2_ml = eigvals[q:].mean()
        assert result.params.sigma2["view1"] == pytest.approx(sigma2_ml,
                                                              rel=1e-4)
        angles = subspace_angles(result.params.w["view1"], eigvecs[:, :q])
        assert np.max(angles) < 1e-3

    def test_floor_applied(self, rng):
        layout = make_layout([3])
        q = 1
        params = random_local_params(layout, q, rng)
        params.w["view1"] = np.zeros((3, q))
        mu = params.mu["view1"]
        ds = CenterDataset(layout=layout, ids=["a", "b"], groups=["g1", "g1"],
                           views={"view1": np.vstack([mu, mu])})
        result = local_round(make_state(layout, params, ds), None, 1, "em")
        assert result.params.sigma2["view1"] == 1e-12


class TestInitParams:
    def test_degenerate_prior_recovers_center(self, rng):
        layout = make_layout([4])
        prior = random_global_params(layout, 2, rng)
        prior.views["view1"].sigma2_mu_tilde = 1e-30
        got = init_params(layout, {"view1"}, 2, rng, prior=prior)
        np.testing.assert_allclose(got.mu["view1"],
                                   prior.views["view1"].mu_tilde, atol=1e-10)

    def test_same_seed_bitwise_identical(self, rng):
        layout = make_layout([3, 2])
        prior = random_global_params(layout, 2, rng)
        for p in (None, prior):
            a = init_params(layout, set(layout.names), 2,
                            np.random.default_rng(99), prior=p)
            b = init_params(layout, set(layout.names), 2,
                            np.random.default_rng(99), prior=p)
            for k in layout.names:
                np.testing.assert_array_equal(a.mu[k], b.mu[k])
                np.testing.assert_array_equal(a.w[k], b.w[k])
                assert a.sigma2[k] == b.sigma2[k]

    def test_inverse_gamma_draw_moments(self, rng):
        layout = make_layout([2])
        prior = random_global_params(layout, 1, rng)
        prior.views["view1"].alpha = 3.0
        prior.views["view1"].beta = 2.0
        gen = np.random.default_rng(5)
        draws = [init_params(layout, {"view1"}, 1, gen,
                             prior=prior).sigma2["view1"]
                 for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(1.0, rel=0.02)

    def test_respects_present_views(self, rng):
        layout = make_layout([3, 2])
        got = init_params(layout, {"view2"}, 2, rng)
        assert got.views == ("view2",)
