"""Differential privacy toolkit: mechanisms, difference clipping, accounting.

Shared local parameters are privatized by clipping their difference to the
current prior mean at a bound proportional to the prior standard deviation,
then perturbing with noise calibrated to twice that bound.  Gaussian noise
covers the offsets, matrix-normal noise the loadings, and Laplace noise the
scalar noise variances; each release is recorded in an append-only ledger.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DpDomainError, InvalidSensitivity
from .model import LocalParams, pad_loading_columns

IMPROVED_GAUSSIAN = "improved_gaussian"
CLASSIC_GAUSSIAN = "classic_gaussian"


@dataclass(frozen=True)
class PrivacySpec:
    """Per-parameter privacy budget and clipping configuration."""

    epsilon: float
    delta: float
    clip_multiplier: float = 1.0
    norm_order: int = 2
    mechanism_variant: str = IMPROVED_GAUSSIAN

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DpDomainError("epsilon must be positive",
                                epsilon=self.epsilon)
        if not 0 < self.delta < 0.5:
            raise DpDomainError("delta must lie in (0, 0.5)", delta=self.delta)
        if self.mechanism_variant not in (IMPROVED_GAUSSIAN, CLASSIC_GAUSSIAN):
            raise DpDomainError("unknown mechanism variant",
                                variant=self.mechanism_variant)
        if self.mechanism_variant == CLASSIC_GAUSSIAN and not self.epsilon < 1:
            raise DpDomainError("classic Gaussian mechanism requires eps < 1",
                                epsilon=self.epsilon)
        if not self.clip_multiplier > 0:
            raise DpDomainError("clip multiplier must be positive")
        if self.norm_order not in (1, 2):
            raise DpDomainError("norm order must be 1 or 2",
                                p=self.norm_order)


@dataclass(frozen=True)
class LedgerEntry:
    parameter: str
    view: str
    mechanism: str
    epsilon: float
    delta: float
    round_index: int


@dataclass
class PrivacyLedger:
    """Append-only record of every privatized release by one center."""

    entries: list = field(default_factory=list)

    def extend(self, entries):
        self.entries.extend(entries)

    def totals(self):
        eps = sum(e.epsilon for e in self.entries)
        delta = sum(e.delta for e in self.entries)
        return eps, delta

    def round_totals(self, round_index):
        eps = sum(e.epsilon for e in self.entries
                  if e.round_index == round_index)
        delta = sum(e.delta for e in self.entries
                    if e.round_index == round_index)
        return eps, delta

    def report(self):
        lines = ["round parameter view mechanism epsilon delta"]
        for e in self.entries:
            lines.append(f"{e.round_index} {e.parameter} {e.view} "
                         f"{e.mechanism} {e.epsilon!r} {e.delta!r}")
        eps, delta = self.totals()
        lines.append(f"total epsilon={eps!r} delta={delta!r}")
        return "\n".join(lines)


def laplace_scale(sensitivity_l1, epsilon):
    if not sensitivity_l1 > 0:
        raise InvalidSensitivity("l1 sensitivity must be positive",
                                 value=sensitivity_l1)
    if not epsilon > 0:
        raise DpDomainError("epsilon must be positive", epsilon=epsilon)
    return sensitivity_l1 / epsilon


def laplace_mechanism(value, sensitivity_l1, epsilon, rng):
    """Add iid Laplace noise with scale sensitivity/epsilon per coordinate."""
    value = np.asarray(value, dtype=float)
    scale = laplace_scale(sensitivity_l1, epsilon)
    return value + rng.laplace(0.0, scale, size=value.shape)


def gaussian_noise_std(sensitivity_l2, epsilon, delta,
                       variant=IMPROVED_GAUSSIAN):
    """Closed-form noise standard deviation of the Gaussian mechanisms.

    The improved variant is valid for any epsilon > 0 with delta in (0, 0.5)
    and uses std = (c + sqrt(c^2 + eps)) * sens / (eps * sqrt(2)) with
    c = sqrt(ln(2 / (sqrt(16 delta + 1) - 1))); the classic variant needs
    epsilon < 1 and uses std = sqrt(2 ln(1.25/delta)) * sens / eps.
    """
    if not sensitivity_l2 > 0:
        raise InvalidSensitivity("l2 sensitivity must be positive",
                                 value=sensitivity_l2)
    if not epsilon > 0:
        raise DpDomainError("epsilon must be positive", epsilon=epsilon)
    if variant == IMPROVED_GAUSSIAN:
        if not 0 < delta < 0.5:
            raise DpDomainError("delta must lie in (0, 0.5)", delta=delta)
        c = math.sqrt(math.log(2.0 / (math.sqrt(16.0 * delta + 1.0) - 1.0)))
        return (c + math.sqrt(c * c + epsilon)) * sensitivity_l2 \
            / (epsilon * math.sqrt(2.0))
    if variant == CLASSIC_GAUSSIAN:
        if not epsilon < 1:
            raise DpDomainError("classic Gaussian mechanism requires eps < 1",
                                epsilon=epsilon)
        if not 0 < delta < 1:
            raise DpDomainError("delta must lie in (0, 1)", delta=delta)
        return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity_l2 \
            / epsilon
    raise DpDomainError("unknown mechanism variant", variant=variant)


def gaussian_mechanism(value, sensitivity_l2, epsilon, delta,
                       variant=IMPROVED_GAUSSIAN, rng=None):
    """Add iid zero-mean Gaussian noise at the variant's closed-form std."""
    value = np.asarray(value, dtype=float)
    std = gaussian_noise_std(sensitivity_l2, epsilon, delta, variant)
    return value + rng.normal(0.0, std, size=value.shape)


def matrix_normal_mechanism(value, sensitivity_l2, epsilon, delta, rng,
                            variant=IMPROVED_GAUSSIAN):
    """Matrix-normal mechanism MN(0, I_d, s^2 I_q): iid per-entry noise.

    Entry-wise this is the Gaussian mechanism on the flattened matrix, so the
    same seed stream produces identical output either way.
    """
    value = np.asarray(value, dtype=float)
    if value.ndim != 2:
        raise InvalidSensitivity("matrix mechanism expects a matrix",
                                 shape=value.shape)
    std = gaussian_noise_std(sensitivity_l2, epsilon, delta, variant)
    return value + rng.normal(0.0, std, size=value.shape)


def clip_difference(delta_param, bound, norm_order=2):
    """Scale a difference so its l_p norm is at most ``bound``.

    Values already within the bound pass through bit-exact.
    """
    if not bound > 0:
        raise InvalidSensitivity("clip bound must be positive", bound=bound)
    arr = np.asarray(delta_param, dtype=float)
    if norm_order == 1:
        norm = float(np.sum(np.abs(arr)))
    elif norm_order == 2:
        norm = float(np.sqrt(np.sum(arr * arr)))
    else:
        raise DpDomainError("norm order must be 1 or 2", p=norm_order)
    if norm <= bound:
        return arr.copy()
    return arr * (bound / norm)


def privatize_local_params(theta_c, prior, spec, rng, round_index=0,
                           clip_observer=None):
    """Clip-and-perturb one center's update against the current prior.

    Per observed view the offset difference gets Gaussian noise, the loading
    difference matrix-normal noise and the scalar variance difference Laplace
    noise, each with sensitivity twice its clip bound; the prior center is
    added back afterwards.  Noise streams are spawned per (view, parameter)
    in canonical order.  Returns the privatized parameters and the three
    ledger entries per view.
    """
    views = theta_c.views
    streams = iter(rng.spawn(3 * len(views)))
    mu, w, sigma2 = {}, {}, {}
    entries = []
    for k in views:
        vp = prior.views[k]

        g_mu = spec.clip_multiplier * math.sqrt(vp.sigma2_mu_tilde)
        diff = clip_difference(theta_c.mu[k] - vp.mu_tilde, g_mu,
                               spec.norm_order)
        if clip_observer is not None:
            clip_observer(k, "mu", diff, g_mu)
        mu[k] = vp.mu_tilde + gaussian_mechanism(
            diff, 2.0 * g_mu, spec.epsilon, spec.delta,
            spec.mechanism_variant, next(streams))
        entries.append(LedgerEntry("mu", k, spec.mechanism_variant,
                                   spec.epsilon, spec.delta, round_index))

        g_w = spec.clip_multiplier * math.sqrt(vp.sigma2_w_tilde)
        diff = clip_difference(theta_c.w[k] - vp.w_tilde, g_w, spec.norm_order)
        if clip_observer is not None:
            clip_observer(k, "w", diff, g_w)
        w[k] = pad_loading_columns(vp.w_tilde + matrix_normal_mechanism(
            diff, 2.0 * g_w, spec.epsilon, spec.delta, next(streams),
            spec.mechanism_variant))
        entries.append(LedgerEntry("w", k, "matrix_normal",
                                   spec.epsilon, spec.delta, round_index))

        g_s = spec.clip_multiplier * vp.sigma_tilde
        center = vp.sigma2_mean
        diff = clip_difference(
            np.asarray(theta_c.sigma2[k] - center), g_s, spec.norm_order)
        if clip_observer is not None:
            clip_observer(k, "sigma2", diff, g_s)
        noisy = center + float(laplace_mechanism(
            diff, 2.0 * g_s, spec.epsilon, next(streams)))
        sigma2[k] = max(noisy, 1e-12)
        entries.append(LedgerEntry("sigma2", k, "laplace",
                                   spec.epsilon, 0.0, round_index))
    out = LocalParams(latent_dim=theta_c.latent_dim, mu=mu, w=w,
                      sigma2=sigma2)
    return out, entries


def round_budget(n_views, epsilon, delta):
    """Total per-round budget of the symmetric scheme: (3 K eps, 2 K delta)."""
    if n_views < 1:
        raise DpDomainError("need at least one view", views=n_views)
    return 3.0 * n_views * epsilon, 2.0 * n_views * delta


def global_param_budget(per_center_budgets):
    """Budget bound of a global parameter: component-wise max over centers."""
    budgets = list(per_center_budgets)
    if not budgets:
        raise DpDomainError("need at least one center budget")
    eps = max(b[0] for b in budgets)
    delta = max(b[1] for b in budgets)
    return eps, delta
