"""Master-side maximum-likelihood aggregation of collected local parameters.

Per view, the Gaussian means/loadings are averaged over the contributing
centers with spreads given by the normalized squared deviations; the noise
variances get an inverse-gamma fit via profile-likelihood Newton.  Views
missing at some centers are aggregated over the contributors only.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, polygamma

from .errors import InvalidData, ViewUnrepresented
from .model import GlobalParams, LocalParams, ViewPrior

SPREAD_FLOOR = 1e-8
ALPHA_MIN = 2.0 + 1e-6
ALPHA_MAX = 1e6


@dataclass
class AggregationInput:
    center_id: str
    params: LocalParams


def _contributors(inputs, k):
    # canonical center order makes aggregation bit-exact under any
    # message arrival order
    found = [inp.params for inp in sorted(inputs, key=lambda i: i.center_id)
             if k in inp.params.views]
    if not found:
        raise ViewUnrepresented("no center contributes this view", view=k)
    return found


def aggregate_mu(inputs, k):
    """ML mean and spread of the per-center offsets for view ``k``."""
    params = _contributors(inputs, k)
    mus = np.stack([p.mu[k] for p in params])
    c_k, d_k = mus.shape
    mu_tilde = mus.mean(axis=0)
    dev = mus - mu_tilde
    sigma2 = float(np.sum(dev * dev) / (c_k * d_k))
    return mu_tilde, sigma2


def aggregate_w(inputs, k):
    """ML mean and Frobenius spread of the per-center loadings for view ``k``."""
    params = _contributors(inputs, k)
    ws = np.stack([p.w[k] for p in params])
    c_k, d_k, q = ws.shape
    w_tilde = ws.mean(axis=0)
    dev = ws - w_tilde
    sigma2 = float(np.sum(dev * dev) / (c_k * d_k * q))
    return w_tilde, sigma2


class InverseGammaFit(NamedTuple):
    alpha: float
    beta: float
    degenerate: bool


def moment_match_inverse_gamma(mean, var):
    """Inverse-gamma parameters whose first two moments equal (mean, var)."""
    alpha = mean ** 2 / var + 2.0
    return alpha, mean * (alpha - 1.0)


def fit_inverse_gamma(values, alpha_min=ALPHA_MIN, alpha_max=ALPHA_MAX):
    """Maximum-likelihood inverse-gamma fit of positive scalars.

    Beta is profiled out in closed form, beta(alpha) = n alpha / sum(1/x),
    and alpha solves the profiled score by safeguarded Newton from a
    moment-matched start.  Identical values push alpha to infinity; that case
    returns the clamped alpha with beta matching the sample mean and the
    ``degenerate`` flag set.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidData("need a non-empty vector of variances")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise InvalidData("variances must be positive and finite")
    n = x.size
    m = float(x.mean())
    if n == 1 or float(x.std()) <= 1e-12 * m:
        return InverseGammaFit(alpha_max, m * (alpha_max - 1.0), True)

    inv_sum = float(np.sum(1.0 / x))
    log_sum = float(np.sum(np.log(x)))

    def score(a):
        return n * (np.log(n * a / inv_sum) - digamma(a)) - log_sum

    def score_prime(a):
        return n * (1.0 / a - polygamma(1, a))

    # score is strictly decreasing in alpha
    if score(alpha_min) <= 0:
        return InverseGammaFit(alpha_min, n * alpha_min / inv_sum, False)
    if score(alpha_max) >= 0:
        return InverseGammaFit(alpha_max, m * (alpha_max - 1.0), True)
    lo, hi = alpha_min, alpha_max
    a = min(max(m * m / max(float(x.var(ddof=1)), 1e-300) + 2.0, alpha_min),
            alpha_max)
    for _ in range(100):
        f = score(a)
        if f > 0:
            lo = a
        else:
            hi = a
        step = f / score_prime(a)
        a_new = a - step
        if not (lo < a_new < hi):
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) <= 1e-12 * a:
            a = a_new
            break
        a = a_new
    return InverseGammaFit(float(a), n * float(a) / inv_sum, False)


def aggregate_round(inputs, layout, latent_dim, spread_floor=SPREAD_FLOOR):
    """Build the new global parameters from all centers' local parameters.

    Spreads are floored at ``spread_floor`` so a view contributed by a single
    center (or identical contributions) still yields a usable prior.
    """
    views = {}
    for k in layout.names:
        mu_tilde, s2_mu = aggregate_mu(inputs, k)
        w_tilde, s2_w = aggregate_w(inputs, k)
        sigma2s = [p.sigma2[k] for p in _contributors(inputs, k)]
        fit = fit_inverse_gamma(sigma2s)
        views[k] = ViewPrior(
            mu_tilde=mu_tilde,
            sigma2_mu_tilde=max(s2_mu, spread_floor),
            w_tilde=w_tilde,
            sigma2_w_tilde=max(s2_w, spread_floor),
            alpha=fit.alpha,
            beta=fit.beta,
        )
    return GlobalParams(latent_dim=latent_dim, views=views).validate()
