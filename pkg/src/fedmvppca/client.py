"""Federated center: E-steps and closed-form MAP/EM parameter updates.

One round of local work runs I iterations, each being an E-step followed by
per-view updates in the order mu -> W -> sigma2, where W sees the freshly
updated mu and sigma2 sees both.  In ``map`` mode every update is pulled
toward the master prior; in ``em`` mode the prior terms vanish and the
iterations maximize the expected complete-data log-likelihood alone.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve
from scipy.special import gammaln

from .errors import InvalidVariance, NoObservedView, SingularUpdate
from .model import (
    LOG_2PI,
    LocalParams,
    PosteriorMoments,
    joint_marginal_loglik,
    pad_loading_columns,
)

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


@dataclass
class ClientState:
    """Mutable per-center state carried across local iterations."""

    center_id: str
    dataset: "CenterDataset"
    params: LocalParams
    latent_dim: int
    iteration_counter: int = 0


@dataclass
class SufficientStats:
    """E-step output: per-subject posterior moments plus their exact sums.

    All subjects of a center share the observed-view set, hence a single
    posterior precision; per-subject moments differ only in the mean.
    """

    n: int
    means: np.ndarray        # (n, q) posterior means
    precision: np.ndarray    # (q, q), shared across subjects
    cov: np.ndarray          # (q, q) inverse of precision
    sum_x: np.ndarray        # (q,)
    sum_xxT: np.ndarray      # (q, q)
    cross: dict = field(default_factory=dict)  # view -> (d_k, q)

    def moments(self, i):
        mean = self.means[i]
        return PosteriorMoments(
            mean=mean,
            second_moment=self.cov + np.outer(mean, mean),
            precision=self.precision,
        )

    @property
    def moments_list(self):
        return [self.moments(i) for i in range(self.n)]


@dataclass
class LocalRoundResult:
    params: LocalParams
    objectives: list


def e_step(state):
    """Latent posterior moments for every subject plus their aggregates."""
    params = state.params
    views = [k for k in params.views if k in state.dataset.views]
    n = state.dataset.n_subjects
    q = params.latent_dim
    if n > 0 and not views:
        raise NoObservedView("dataset shares no view with the parameters")
    precision = np.eye(q)
    rhs = np.zeros((n, q))
    for k in views:
        w = params.w[k]
        s2 = params.sigma2[k]
        precision = precision + (w.T @ w) / s2
        rhs += (state.dataset.views[k] - params.mu[k]) @ w / s2
    cho = cho_factor(precision, lower=True)
    means = cho_solve(cho, rhs.T).T
    cov = cho_solve(cho, np.eye(q))
    cov = 0.5 * (cov + cov.T)
    sum_xxT = n * cov + means.T @ means
    sum_xxT = 0.5 * (sum_xxT + sum_xxT.T)
    cross = {
        k: (state.dataset.views[k] - params.mu[k]).T @ means for k in views
    }
    return SufficientStats(
        n=n,
        means=means,
        precision=precision,
        cov=cov,
        sum_x=means.sum(axis=0),
        sum_xxT=sum_xxT,
        cross=cross,
    )


def update_mu(state, k, prior=None, form="marginal", stats=None):
    """Closed-form offset update for one view.

    ``form="marginal"`` maximizes the view's marginal likelihood (through
    C_k built from the current W and sigma2) plus the Gaussian prior;
    ``form="joint"`` maximizes the expected complete-data log-likelihood
    plus the prior, which requires the E-step ``stats``.  The joint form is
    the one whose sequential updates provably ascend the MAP objective.
    Without a prior the update degenerates to the sample mean.
    """
    data = state.dataset.views[k]
    n = data.shape[0]
    if prior is None:
        if n == 0:
            return state.params.mu[k].copy()
        return data.mean(axis=0)
    vp = prior.views[k]
    w = state.params.w[k]
    s2 = state.params.sigma2[k]
    if form == "joint":
        if stats is None:
            raise ValueError("joint form needs the E-step statistics")
        denom = n / s2 + 1.0 / vp.sigma2_mu_tilde
        num = (data.sum(axis=0) - w @ stats.sum_x) / s2 \
            + vp.mu_tilde / vp.sigma2_mu_tilde
        if not np.all(np.isfinite(num)):
            raise SingularUpdate("non-finite mu update system", view=k)
        return num / denom
    if form != "marginal":
        raise ValueError(f"unknown mu update form {form!r}")
    d_k = w.shape[0]
    c = w @ w.T + s2 * np.eye(d_k)
    a = n * np.eye(d_k) + c / vp.sigma2_mu_tilde
    b = data.sum(axis=0) + c @ vp.mu_tilde / vp.sigma2_mu_tilde
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularUpdate("non-finite mu update system", view=k)
    return solve(a, b, assume_a="pos")


def update_w(state, k, prior, stats):
    """Closed-form loading update; the cross statistic uses the current mu."""
    data = state.dataset.views[k]
    n = data.shape[0]
    q = state.params.latent_dim
    if prior is None and n == 0:
        return state.params.w[k].copy()
    cross = (data - state.params.mu[k]).T @ stats.means
    if prior is None:
        ridge = 0.0
        target = 0.0
    else:
        vp = prior.views[k]
        ridge = state.params.sigma2[k] / vp.sigma2_w_tilde
        target = ridge * vp.w_tilde
    a = stats.sum_xxT + ridge * np.eye(q)
    b = cross + target
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularUpdate("non-finite W update system", view=k)
    w_new = solve(a, b.T, assume_a="pos").T
    return pad_loading_columns(w_new)


def update_sigma2(state, k, prior, stats):
    """Closed-form noise-variance update; mu and W must already be current.

    Uses the residual form sum_n ||(t - mu) - W<x>||^2 + n tr(W cov W^T),
    which is non-negative by construction.
    """
    data = state.dataset.views[k]
    n, d_k = data.shape
    w = state.params.w[k]
    resid = data - state.params.mu[k] - stats.means @ w.T
    num = float(np.sum(resid * resid)) + n * float(np.sum((w @ stats.cov) * w))
    den = n * d_k
    if prior is not None:
        vp = prior.views[k]
        num += 2.0 * vp.beta
        den += 2.0 * (vp.alpha + 1.0)
    if den == 0:
        return state.params.sigma2[k]
    value = num / den
    if not np.isfinite(value) or value < 0:
        raise InvalidVariance("noise variance update failed", view=k,
                              value=value)
    return value


def log_prior_density(params, prior):
    """Log density of local parameters under the master prior."""
    total = 0.0
    for k in params.views:
        vp = prior.views[k]
        d_k, q = params.w[k].shape
        dmu = params.mu[k] - vp.mu_tilde
        total += -0.5 * d_k * (LOG_2PI + np.log(vp.sigma2_mu_tilde)) \
            - 0.5 * float(dmu @ dmu) / vp.sigma2_mu_tilde
        dw = params.w[k] - vp.w_tilde
        total += -0.5 * d_k * q * (LOG_2PI + np.log(vp.sigma2_w_tilde)) \
            - 0.5 * float(np.sum(dw * dw)) / vp.sigma2_w_tilde
        s2 = params.sigma2[k]
        total += (vp.alpha * np.log(vp.beta) - gammaln(vp.alpha)
                  - (vp.alpha + 1.0) * np.log(s2) - vp.beta / s2)
    return float(total)


def local_round(state, prior, iterations, mode="map", sigma2_floor=SIGMA2_FLOOR,
                record_objective=True):
    """Run ``iterations`` local optimization steps and return the result.

    Each iteration performs one E-step and then the per-view mu, W, sigma2
    updates (mu through the joint form in MAP mode, so that every sub-step
    ascends the same functional).  The recorded objective is the MAP
    objective: the joint marginal log-likelihood of the observed views plus,
    in ``map`` mode, the log prior density.
    """
    if mode not in ("map", "em"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "map" and prior is None:
        raise ValueError("map mode requires a prior")
    effective_prior = prior if mode == "map" else None
    mu_form = "joint" if mode == "map" else "marginal"
    objectives = []
    for _ in range(iterations):
        stats = e_step(state)
        for k in state.params.views:
            state.params.mu[k] = update_mu(state, k, effective_prior,
                                           form=mu_form, stats=stats)
            state.params.w[k] = update_w(state, k, effective_prior, stats)
            s2 = update_sigma2(state, k, effective_prior, stats)
            if s2 < sigma2_floor:
                log.debug("sigma2 floored for %s/%s: %.3e",
                          state.center_id, k, s2)
                s2 = sigma2_floor
            state.params.sigma2[k] = s2
        state.iteration_counter += 1
        if record_objective:
            obj = joint_marginal_loglik(state.params, state.dataset.views)
            if effective_prior is not None:
                obj += log_prior_density(state.params, effective_prior)
            objectives.append(obj)
    return LocalRoundResult(params=state.params, objectives=objectives)


def init_params(layout, present_views, latent_dim, rng, prior=None,
                sigma_floor=0.1):
    """Initialize local parameters randomly or by drawing from the prior.

    Random mode uses standard-normal entries for mu and W and
    ``|N(0,1)| + sigma_floor`` for sigma2; prior mode samples the Gaussian,
    matrix-normal and inverse-gamma laws exactly.  Draws follow the canonical
    layout order so equal seeds give bit-identical parameters.
    """
    mu, w, sigma2 = {}, {}, {}
    for k in layout.names:
        if k not in present_views:
            continue
        d_k = layout.dim(k)
        if prior is None:
            mu[k] = rng.standard_normal(d_k)
            w[k] = pad_loading_columns(rng.standard_normal((d_k, latent_dim)))
            sigma2[k] = float(np.abs(rng.standard_normal()) + sigma_floor)
        else:
            vp = prior.views[k]
            mu[k] = vp.mu_tilde + np.sqrt(vp.sigma2_mu_tilde) \
                * rng.standard_normal(d_k)
            w[k] = pad_loading_columns(
                vp.w_tilde + np.sqrt(vp.sigma2_w_tilde)
                * rng.standard_normal((d_k, latent_dim)))
            sigma2[k] = float(1.0 / rng.gamma(vp.alpha, 1.0 / vp.beta))
    return LocalParams(latent_dim=latent_dim, mu=mu, w=w, sigma2=sigma2)
