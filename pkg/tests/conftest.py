import numpy as np
import pytest

from fedmvppca import (
    CenterDataset,
    ClientState,
    GlobalParams,
    LocalParams,
    ViewLayout,
    ViewPrior,
)
from fedmvppca.model import pad_loading_columns


def make_layout(dims, names=None):
    names = names or [f"view{i + 1}" for i in range(len(dims))]
    return ViewLayout(tuple(zip(names, dims)))


def random_local_params(layout, q, rng, present=None, sigma_lo=0.3,
                        sigma_hi=1.5):
    present = layout.names if present is None else present
    mu, w, sigma2 = {}, {}, {}
    for k in layout.names:
        if k not in present:
            continue
        d_k = layout.dim(k)
        mu[k] = rng.standard_normal(d_k)
        w[k] = pad_loading_columns(rng.standard_normal((d_k, q)))
        sigma2[k] = float(rng.uniform(sigma_lo, sigma_hi))
    return LocalParams(latent_dim=q, mu=mu, w=w, sigma2=sigma2)


def random_global_params(layout, q, rng, present=None):
    present = layout.names if present is None else present
    views = {}
    for k in layout.names:
        if k not in present:
            continue
        d_k = layout.dim(k)
        views[k] = ViewPrior(
            mu_tilde=rng.standard_normal(d_k),
            sigma2_mu_tilde=float(rng.uniform(0.2, 1.0)),
            w_tilde=pad_loading_columns(rng.standard_normal((d_k, q))),
            sigma2_w_tilde=float(rng.uniform(0.2, 1.0)),
            alpha=float(rng.uniform(3.0, 6.0)),
            beta=float(rng.uniform(1.0, 4.0)),
        )
    return GlobalParams(latent_dim=q, views=views)


def dataset_from_params(layout, params, rng, n, present=None):
    present = params.views if present is None else present
    q = params.latent_dim
    latents = rng.standard_normal((n, q))
    views = {}
    for k in present:
        d_k = layout.dim(k)
        noise = rng.standard_normal((n, d_k)) * np.sqrt(params.sigma2[k])
        views[k] = latents @ params.w[k].T + params.mu[k] + noise
    groups = ["g1" if i % 2 == 0 else "g2" for i in range(n)]
    return CenterDataset(layout=layout,
                         ids=[f"s{i:04d}" for i in range(n)],
                         groups=groups, views=views)


def make_state(layout, params, dataset, center_id="c1"):
    return ClientState(center_id=center_id, dataset=dataset, params=params,
                       latent_dim=params.latent_dim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
