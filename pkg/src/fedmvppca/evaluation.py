"""Metrics and model selection on top of fitted global parameters.

Reconstruction and latent projections use deterministic point parameters
taken from the global means (mu_tilde, W_tilde and the inverse-gamma mean);
WAIC instead samples whole parameter sets from the global distributions.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .client import init_params
from .errors import (
    DegenerateLabels,
    InvalidDenominator,
    NoObservedView,
    ViewNotMissing,
    WaicDegenerate,
)
from .model import (
    LocalParams,
    latent_posterior,
    view_marginal_loglik_rows,
)


def point_params(global_params, views=None):
    """Deterministic local parameters at the global distribution means."""
    names = views if views is not None else global_params.view_names
    mu, w, sigma2 = {}, {}, {}
    for k in names:
        vp = global_params.views[k]
        mu[k] = vp.mu_tilde
        w[k] = vp.w_tilde
        sigma2[k] = vp.sigma2_mean
    return LocalParams(latent_dim=global_params.latent_dim, mu=mu, w=w,
                       sigma2=sigma2)


def _batch_latent_means(params, view_matrices):
    """Posterior latent means for stacked records sharing one view set."""
    views = [k for k in params.views if k in view_matrices]
    if not views:
        raise NoObservedView("no observed view overlaps the parameters")
    q = params.latent_dim
    precision = np.eye(q)
    n = next(iter(view_matrices.values())).shape[0]
    rhs = np.zeros((n, q))
    for k in views:
        w = params.w[k]
        s2 = params.sigma2[k]
        precision = precision + (w.T @ w) / s2
        rhs += (view_matrices[k] - params.mu[k]) @ w / s2
    cho = cho_factor(precision, lower=True)
    return cho_solve(cho, rhs.T).T, precision


def reconstruct(global_params, record, sample_latent=False, rng=None):
    """Decode every view of a record through the shared latent posterior.

    The latent is its posterior mean given the observed views (or one
    posterior draw when ``sample_latent``); each view decodes as
    W_tilde x + mu_tilde.
    """
    params = point_params(global_params)
    moments = latent_posterior(params, record)
    x = moments.mean
    if sample_latent:
        cov = moments.second_moment - np.outer(moments.mean, moments.mean)
        x = rng.multivariate_normal(moments.mean, cov)
    return {k: params.w[k] @ x + params.mu[k] for k in params.views}


def mae(global_params, datasets):
    """Mean absolute reconstruction error over subjects and observed coords."""
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    total = 0.0
    count = 0
    for ds in datasets:
        if ds.n_subjects == 0:
            continue
        params = point_params(global_params, views=ds.present_views)
        means, _ = _batch_latent_means(params, ds.views)
        for k in ds.present_views:
            recon = means @ params.w[k].T + params.mu[k]
            total += float(np.sum(np.abs(ds.views[k] - recon)))
            count += ds.views[k].size
    if count == 0:
        raise NoObservedView("no observed coordinates to evaluate")
    return total / count


def waic(global_params, datasets, n_param_samples=1000, seed=0):
    """Widely applicable information criterion, -2 (lppd - p_waic).

    Parameter sets are drawn from the global distributions; per subject the
    log marginal likelihood sums the observed views.  The log-sum-exp over
    draws is stabilized; the effective-parameter term uses the sample
    variance over draws.
    """
    if n_param_samples < 2:
        raise ValueError("need at least two parameter draws")
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    layout = global_params.layout()
    rng = np.random.default_rng(seed)
    n_total = sum(ds.n_subjects for ds in datasets)
    lp = np.empty((n_param_samples, n_total))
    for s in range(n_param_samples):
        draw = init_params(layout, set(layout.names),
                           global_params.latent_dim, rng,
                           prior=global_params)
        offset = 0
        for ds in datasets:
            n = ds.n_subjects
            block = np.zeros(n)
            for k in ds.present_views:
                block += view_marginal_loglik_rows(draw, k, ds.views[k])
            lp[s, offset:offset + n] = block
            offset += n
    if np.any(np.all(np.isneginf(lp), axis=0)):
        raise WaicDegenerate("a subject has zero likelihood under every draw")
    lppd = float(np.sum(logsumexp(lp, axis=0) - np.log(n_param_samples)))
    p_waic = float(np.sum(lp.var(axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic)


def waic_std_diff(waic_samples_q, waic_samples_prev):
    """Standardized mean difference between two WAIC sample sets.

    Evaluates (mean_q - mean_prev) / sqrt(var_q/N_q - var_prev/N_prev); the
    subtraction under the root can be non-positive, which is surfaced as an
    error rather than patched.
    """
    a = np.asarray(waic_samples_q, dtype=float)
    b = np.asarray(waic_samples_prev, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InvalidDenominator("empty sample set")
    denom2 = a.var(ddof=1) / a.size - b.var(ddof=1) / b.size
    if not denom2 > 0:
        raise InvalidDenominator("variance difference under the root is "
                                 "not positive", value=float(denom2))
    return float((a.mean() - b.mean()) / np.sqrt(denom2))


class TwoClassLda:
    """Two-class LDA with pooled ML covariance and frequency priors."""

    def __init__(self, ridge=1e-6):
        self.ridge = ridge
        self.ridged = False

    def fit(self, x, labels):
        x = np.asarray(x, dtype=float)
        labels = np.asarray(labels, dtype=object)
        self.classes = sorted(set(labels))
        if len(self.classes) != 2:
            raise DegenerateLabels("need exactly two classes",
                                   classes=self.classes)
        n, q = x.shape
        self.means = []
        self.log_priors = []
        pooled = np.zeros((q, q))
        for c in self.classes:
            xc = x[labels == c]
            m = xc.mean(axis=0)
            self.means.append(m)
            self.log_priors.append(np.log(len(xc) / n))
            dev = xc - m
            pooled += dev.T @ dev
        pooled /= n
        try:
            cho = cho_factor(pooled, lower=True)
        except np.linalg.LinAlgError:
            pooled = pooled + self.ridge * np.trace(pooled) / q * np.eye(q)
            self.ridged = True
            cho = cho_factor(pooled, lower=True)
        self._solve = lambda v: cho_solve(cho, v)
        return self

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        scores = []
        for m, logp in zip(self.means, self.log_priors):
            sm = self._solve(m)
            scores.append(x @ sm - 0.5 * float(m @ sm) + logp)
        scores = np.stack(scores, axis=1)
        return np.asarray(self.classes, dtype=object)[scores.argmax(axis=1)]

    def accuracy(self, x, labels):
        pred = self.predict(x)
        return float(np.mean(pred == np.asarray(labels, dtype=object)))


def latent_projections(global_params, datasets):
    """Posterior-mean latent coordinates and labels, pooled over datasets."""
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    xs, labels = [], []
    for ds in datasets:
        if ds.n_subjects == 0:
            continue
        params = point_params(global_params, views=ds.present_views)
        means, _ = _batch_latent_means(params, ds.views)
        xs.append(means)
        labels.extend(ds.groups)
    return np.concatenate(xs), labels


def latent_accuracy(global_params, train_datasets, test_datasets):
    """Test accuracy of an LDA trained on pooled train latent projections."""
    x_train, y_train = latent_projections(global_params, train_datasets)
    x_test, y_test = latent_projections(global_params, test_datasets)
    lda = TwoClassLda().fit(x_train, y_train)
    return lda.accuracy(x_test, y_test)


def impute_view(global_params, record, view):
    """Predictive mean and per-coordinate stds of one missing view.

    The latent posterior comes from the observed views; the predictive
    marginal variance adds the latent uncertainty diag(W S^-1 W^T) to the
    inverse-gamma mean noise level.
    """
    if view in record:
        raise ViewNotMissing("view is present in the record", view=view)
    if view not in global_params.views:
        raise NoObservedView("view unknown to the global parameters",
                             view=view)
    params = point_params(global_params)
    observed = {k: v for k, v in record.items() if k in params.views}
    obs_params = point_params(
        global_params, views=[k for k in params.views if k in observed])
    moments = latent_posterior(obs_params, observed)
    vp = global_params.views[view]
    mean = vp.w_tilde @ moments.mean + vp.mu_tilde
    cov = moments.second_moment - np.outer(moments.mean, moments.mean)
    marginal_var = np.einsum("ij,jk,ik->i", vp.w_tilde, cov, vp.w_tilde) \
        + vp.sigma2_mean
    return mean, np.sqrt(marginal_var)


@dataclass
class MetricsReport:
    mae_train: float
    mae_test: float
    accuracy_latent: float
    waic: float | None = None
    imputation_mae: dict | None = None
    round_index: int | None = None

    def as_dict(self):
        out = {
            "mae_train": self.mae_train,
            "mae_test": self.mae_test,
            "accuracy_latent": self.accuracy_latent,
        }
        if self.waic is not None:
            out["waic"] = self.waic
        if self.imputation_mae is not None:
            out["imputation_mae"] = dict(self.imputation_mae)
        if self.round_index is not None:
            out["round"] = self.round_index
        return out
