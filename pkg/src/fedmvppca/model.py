"""Multi-view linear-Gaussian latent variable model.

Each view k of a subject is generated as ``t_k = W_k x + mu_k + eps_k`` with a
shared latent ``x ~ N(0, I_q)`` and isotropic view noise
``eps_k ~ N(0, sigma2_k I)``.  This module holds the parameter containers, the
latent posterior and the log-likelihood functionals that the client and the
evaluation code build on.  All functions are pure; randomness always comes in
through an explicit ``numpy.random.Generator``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    InvalidData,
    NoObservedView,
    ShapeMismatch,
    SingularPosterior,
    ViewParamsMissing,
)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ViewLayout:
    """Shared federation schema: ordered view names with their dimensions."""

    views: tuple

    def __post_init__(self):
        views = tuple((str(name), int(dim)) for name, dim in self.views)
        object.__setattr__(self, "views", views)
        names = [name for name, _ in views]
        if len(set(names)) != len(names):
            raise InvalidData("duplicate view names in layout", names=names)
        if any(dim < 1 for _, dim in views):
            raise InvalidData("view dimensions must be >= 1")

    @property
    def names(self):
        return tuple(name for name, _ in self.views)

    @property
    def total_dim(self):
        return sum(dim for _, dim in self.views)

    def dim(self, name):
        for view, dim in self.views:
            if view == name:
                return dim
        raise ViewParamsMissing("view not in layout", view=name)

    def __contains__(self, name):
        return any(view == name for view, _ in self.views)


def pad_loading_columns(w):
    """Zero the loading columns that exceed a view's dimension.

    Views with d_k < q only use their first d_k latent directions; the
    remaining columns are kept structurally zero.
    """
    w = np.asarray(w, dtype=float)
    d_k, q = w.shape
    if d_k < q:
        w = w.copy()
        w[:, d_k:] = 0.0
    return w


@dataclass
class LocalParams:
    """One center's per-view parameters {mu_k, W_k, sigma2_k}.

    Dict insertion order is the canonical view order and must follow the
    federation layout.  Arrays are treated as immutable by convention.
    """

    latent_dim: int
    mu: dict
    w: dict
    sigma2: dict

    @property
    def views(self):
        return tuple(self.mu)

    def validate(self):
        q = self.latent_dim
        if set(self.mu) != set(self.w) or set(self.mu) != set(self.sigma2):
            raise ShapeMismatch("mu/w/sigma2 cover different view sets")
        for k in self.mu:
            d_k = self.mu[k].shape[0]
            if self.w[k].shape != (d_k, q):
                raise ShapeMismatch(
                    "loading matrix shape mismatch", view=k,
                    expected=(d_k, q), got=self.w[k].shape,
                )
            if not self.sigma2[k] > 0:
                raise InvalidData("sigma2 must be positive", view=k,
                                  value=self.sigma2[k])
            if d_k < q and np.any(self.w[k][:, d_k:] != 0.0):
                raise InvalidData("padded loading columns must be zero", view=k)
        return self

    def copy(self):
        return LocalParams(
            latent_dim=self.latent_dim,
            mu={k: v.copy() for k, v in self.mu.items()},
            w={k: v.copy() for k, v in self.w.items()},
            sigma2=dict(self.sigma2),
        )


@dataclass
class ViewPrior:
    """Master-level distribution of one view's local parameters."""

    mu_tilde: np.ndarray
    sigma2_mu_tilde: float
    w_tilde: np.ndarray
    sigma2_w_tilde: float
    alpha: float
    beta: float

    @property
    def sigma2_mean(self):
        """Mean of the inverse-gamma noise prior, beta / (alpha - 1)."""
        return self.beta / (self.alpha - 1.0)

    @property
    def sigma2_var(self):
        """Variance of the inverse-gamma noise prior (finite for alpha > 2)."""
        a = self.alpha
        return self.beta ** 2 / ((a - 1.0) ** 2 * (a - 2.0))

    @property
    def sigma_tilde(self):
        return float(np.sqrt(self.sigma2_var))

    def validate(self, name=""):
        if not self.sigma2_mu_tilde > 0 or not self.sigma2_w_tilde > 0:
            raise InvalidData("prior spreads must be positive", view=name)
        if not self.alpha > 2:
            raise InvalidData("alpha must exceed 2 for a finite prior variance",
                              view=name, alpha=self.alpha)
        if not self.beta > 0:
            raise InvalidData("beta must be positive", view=name)
        return self


@dataclass
class GlobalParams:
    """Master hyperparameters, one ViewPrior per view in canonical order."""

    latent_dim: int
    views: dict

    @property
    def view_names(self):
        return tuple(self.views)

    def layout(self):
        return ViewLayout(tuple(
            (k, vp.mu_tilde.shape[0]) for k, vp in self.views.items()
        ))

    def validate(self):
        for name, vp in self.views.items():
            vp.validate(name)
        return self


@dataclass
class PosteriorMoments:
    """First and second latent posterior moments plus the posterior precision."""

    mean: np.ndarray
    second_moment: np.ndarray
    precision: np.ndarray


def _require_view(params, k):
    if k not in params.mu:
        raise ViewParamsMissing("no parameters for view", view=k)


def sample_subject(params, layout, rng):
    """Draw one subject from the generative model.

    Returns the latent vector and a dict of per-view observations covering
    every view in ``layout``, all of which must be parameterized.
    """
    latent, records = sample_subjects(params, layout, rng, 1)
    return latent[0], {k: v[0] for k, v in records.items()}


def sample_subjects(params, layout, rng, n):
    """Vectorized version of :func:`sample_subject` for ``n`` subjects."""
    for k in layout.names:
        _require_view(params, k)
    q = params.latent_dim
    latent = rng.standard_normal((n, q))
    records = {}
    for k in layout.names:
        d_k = layout.dim(k)
        noise = rng.standard_normal((n, d_k)) * np.sqrt(params.sigma2[k])
        records[k] = latent @ params.w[k].T + params.mu[k] + noise
    return latent, records


def marginal_view_covariance(params, k):
    """Covariance of one view under the model: C_k = W_k W_k^T + sigma2_k I."""
    _require_view(params, k)
    w = params.w[k]
    return w @ w.T + params.sigma2[k] * np.eye(w.shape[0])


def latent_posterior(params, record):
    """Posterior moments of the shared latent given the observed views.

    Only views present both in ``record`` and in ``params`` enter the sums;
    missing views are simply left out.
    """
    observed = [k for k in params.views if k in record]
    if not observed:
        raise NoObservedView("record shares no view with the parameters")
    q = params.latent_dim
    precision = np.eye(q)
    rhs = np.zeros(q)
    for k in observed:
        w = params.w[k]
        s2 = params.sigma2[k]
        precision = precision + (w.T @ w) / s2
        rhs = rhs + w.T @ (np.asarray(record[k], dtype=float) - params.mu[k]) / s2
    if not np.all(np.isfinite(precision)) or not np.all(np.isfinite(rhs)):
        raise SingularPosterior("non-finite posterior system")
    try:
        cho = cho_factor(precision, lower=True)
    except np.linalg.LinAlgError as exc:  # only reachable through NaN inputs
        raise SingularPosterior(str(exc))
    mean = cho_solve(cho, rhs)
    cov = cho_solve(cho, np.eye(q))
    cov = 0.5 * (cov + cov.T)
    return PosteriorMoments(
        mean=mean,
        second_moment=cov + np.outer(mean, mean),
        precision=precision,
    )


def _view_quad_and_logdet(params, k, data):
    """Per-row Mahalanobis terms and log|C_k| through the q x q kernel.

    Uses |C| = sigma2^(d-q) |sigma2 I + W^T W| and the matching Woodbury
    identity so no d_k x d_k system is ever factored.
    """
    w = params.w[k]
    s2 = params.sigma2[k]
    d_k, q = w.shape
    kernel = s2 * np.eye(q) + w.T @ w
    cho = cho_factor(kernel, lower=True)
    logdet = (d_k - q) * np.log(s2) + 2.0 * np.sum(np.log(np.diag(cho[0])))
    resid = data - params.mu[k]
    proj = resid @ w  # (n, q)
    half = cho_solve(cho, proj.T).T
    quad = (np.sum(resid * resid, axis=1) - np.sum(proj * half, axis=1)) / s2
    return quad, logdet


def view_marginal_loglik_rows(params, k, data):
    """Per-row Gaussian log-density of one view's marginal distribution."""
    _require_view(params, k)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if not np.all(np.isfinite(data)):
        raise InvalidData("non-finite observations", view=k)
    if data.shape[1] != params.mu[k].shape[0]:
        raise ShapeMismatch("data width does not match view dimension",
                            view=k, got=data.shape[1])
    d_k = data.shape[1]
    quad, logdet = _view_quad_and_logdet(params, k, data)
    return -0.5 * (d_k * LOG_2PI + logdet + quad)


def view_marginal_loglik(params, k, data):
    """Total marginal log-likelihood of a view's data matrix."""
    return float(np.sum(view_marginal_loglik_rows(params, k, data)))


def joint_marginal_loglik(params, data):
    """Marginal log-likelihood of the stacked observed views.

    The joint covariance over all observed views is W W^T + Psi with
    block-diagonal noise; determinant and quadratic form are reduced to the
    q x q latent system so the cost matches one E-step.
    """
    views = [k for k in params.views if k in data]
    if not views:
        raise NoObservedView("no observed view overlaps the parameters")
    q = params.latent_dim
    n = np.asarray(data[views[0]]).shape[0]
    if n == 0:
        return 0.0
    precision = np.eye(q)
    rhs = np.zeros((n, q))
    quad = np.zeros(n)
    logdet_psi = 0.0
    d_total = 0
    for k in views:
        w = params.w[k]
        s2 = params.sigma2[k]
        d_k = w.shape[0]
        resid = np.asarray(data[k], dtype=float) - params.mu[k]
        precision = precision + (w.T @ w) / s2
        rhs += resid @ w / s2
        quad += np.sum(resid * resid, axis=1) / s2
        logdet_psi += d_k * np.log(s2)
        d_total += d_k
    cho = cho_factor(precision, lower=True)
    half = cho_solve(cho, rhs.T).T
    quad -= np.sum(rhs * half, axis=1)
    logdet = logdet_psi + 2.0 * np.sum(np.log(np.diag(cho[0])))
    return float(-0.5 * (n * d_total * LOG_2PI + n * logdet + np.sum(quad)))


def expected_complete_loglik(params, data, moments):
    """Posterior expectation of the complete-data log-likelihood.

    ``data`` maps view names to (N, d_k) matrices (missing views are simply
    absent); ``moments`` is one :class:`PosteriorMoments` per subject, usually
    from the E-step that produced them.  Constant 2*pi terms are dropped, as
    they play no role in the optimization this quantity tracks.
    """
    views = [k for k in params.views if k in data]
    sizes = {np.asarray(data[k]).shape[0] for k in views}
    if len(sizes) > 1:
        raise ShapeMismatch("views disagree on subject count", sizes=sizes)
    n = sizes.pop() if sizes else 0
    if n == 0:
        return 0.0
    if len(moments) != n:
        raise ShapeMismatch("one posterior moment per subject required",
                            subjects=n, moments=len(moments))
    means = np.stack([m.mean for m in moments])
    second_sum = np.sum([m.second_moment for m in moments], axis=0)
    total = 0.5 * np.trace(second_sum)
    for k in views:
        w = params.w[k]
        s2 = params.sigma2[k]
        d_k = w.shape[0]
        resid = np.asarray(data[k], dtype=float) - params.mu[k]
        if resid.shape[1] != d_k:
            raise ShapeMismatch("data width does not match view dimension",
                                view=k, got=resid.shape[1])
        ssq = float(np.sum(resid * resid))
        tr_wws = float(np.sum((w.T @ w) * second_sum))
        cross = float(np.sum((means @ w.T) * resid))
        total += (0.5 * n * d_k * np.log(s2)
                  + 0.5 * ssq / s2 + 0.5 * tr_wws / s2 - cross / s2)
    return -float(total)
