"""Datasets: synthetic generation, scenario splits, tabular I/O, CV folds.

The synthetic recipe draws one parameter set at random, samples shared
latents, shifts a subset of them by a single random vector to create two
groups, and emits every view through the generative model.  Scenario splits
redistribute one dataset over C centers: IID (stratified), G (group-skewed),
K (missing views), GK (both).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadCenterCount,
    HeaderMismatch,
    InsufficientGroupSamples,
    InvalidData,
    NonNumericCell,
    RaggedRow,
)
from .model import LocalParams, ViewLayout, pad_loading_columns

GROUP_SHIFTED = "g1"
GROUP_BASE = "g2"


@dataclass
class CenterDataset:
    """Per-center multi-view records; a view is present for all subjects or none."""

    layout: ViewLayout
    ids: list
    groups: list
    views: dict  # view name -> (N, d_k) array

    def __post_init__(self):
        n = len(self.ids)
        if len(self.groups) != n:
            raise InvalidData("one group label per subject required")
        if len(set(self.groups)) > 2:
            raise InvalidData("at most two group labels allowed",
                              labels=sorted(set(self.groups)))
        for k, mat in self.views.items():
            mat = np.asarray(mat, dtype=float)
            if mat.shape != (n, self.layout.dim(k)):
                raise InvalidData("view matrix shape mismatch", view=k,
                                  expected=(n, self.layout.dim(k)),
                                  got=mat.shape)
            self.views[k] = mat

    @property
    def n_subjects(self):
        return len(self.ids)

    @property
    def present_views(self):
        return tuple(k for k in self.layout.names if k in self.views)

    def record(self, i):
        return {k: self.views[k][i] for k in self.present_views}

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return CenterDataset(
            layout=self.layout,
            ids=[self.ids[i] for i in indices],
            groups=[self.groups[i] for i in indices],
            views={k: self.views[k][indices] for k in self.views},
        )

    def drop_view(self, name):
        views = {k: v for k, v in self.views.items() if k != name}
        return CenterDataset(self.layout, list(self.ids), list(self.groups),
                             views)


def concat_datasets(datasets):
    """Pool datasets sharing one layout and one present-view set."""
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.layout != first.layout or ds.present_views != first.present_views:
            raise InvalidData("can only pool datasets with equal views")
    return CenterDataset(
        layout=first.layout,
        ids=[i for ds in datasets for i in ds.ids],
        groups=[g for ds in datasets for g in ds.groups],
        views={k: np.concatenate([ds.views[k] for ds in datasets])
               for k in first.present_views},
    )


@dataclass
class SyntheticSpec:
    n_subjects: int = 400
    view_dims: tuple = (15, 8, 10)
    latent_dim: int = 5
    shifted_count: int = 250
    seed: int = 0
    sigma_range: tuple = (0.1, 0.5)
    loading_scale: float = 1.0
    mean_scale: float = 1.0
    shift_scale: float = 2.0
    view_names: tuple = ()

    def __post_init__(self):
        if self.shifted_count > self.n_subjects:
            raise ValueError("shifted_count ≤ n_subjects is required")
        if self.latent_dim >= min(self.view_dims):
            raise ValueError("latent_dim must be below every view dimension")
        if not self.view_names:
            self.view_names = tuple(f"view{i + 1}"
                                    for i in range(len(self.view_dims)))
        if len(self.view_names) != len(self.view_dims):
            raise ValueError("one name per view dimension required")

    def layout(self):
        return ViewLayout(tuple(zip(self.view_names, self.view_dims)))


@dataclass
class GroundTruth:
    params: LocalParams
    latents: np.ndarray
    shift: np.ndarray
    shifted_indices: np.ndarray


def generate_synthetic(spec):
    """Generate one synthetic dataset plus the parameters that produced it."""
    rng = np.random.default_rng(spec.seed)
    layout = spec.layout()
    q = spec.latent_dim
    mu, w, sigma2 = {}, {}, {}
    for k in layout.names:
        d_k = layout.dim(k)
        w[k] = pad_loading_columns(
            spec.loading_scale * rng.standard_normal((d_k, q)))
        mu[k] = spec.mean_scale * rng.standard_normal(d_k)
        sigma = rng.uniform(*spec.sigma_range)
        sigma2[k] = float(sigma ** 2)
    params = LocalParams(latent_dim=q, mu=mu, w=w, sigma2=sigma2)

    latents = rng.standard_normal((spec.n_subjects, q))
    shift = spec.shift_scale * rng.standard_normal(q)
    shifted = rng.choice(spec.n_subjects, size=spec.shifted_count,
                         replace=False)
    latents[shifted] += shift
    groups = np.full(spec.n_subjects, GROUP_BASE, dtype=object)
    groups[shifted] = GROUP_SHIFTED

    views = {}
    for k in layout.names:
        d_k = layout.dim(k)
        noise = rng.standard_normal((spec.n_subjects, d_k)) \
            * np.sqrt(sigma2[k])
        views[k] = latents @ w[k].T + mu[k] + noise
    dataset = CenterDataset(
        layout=layout,
        ids=[f"s{i:04d}" for i in range(spec.n_subjects)],
        groups=list(groups),
        views=views,
    )
    truth = GroundTruth(params=params, latents=latents, shift=shift,
                        shifted_indices=np.sort(shifted))
    return dataset, truth


def _deal_indices(pools, n_slots, rng):
    """Round-robin deal of shuffled per-group index pools over n_slots."""
    slots = [[] for _ in range(n_slots)]
    for pool in pools:
        pool = list(pool)
        rng.shuffle(pool)
        for j, idx in enumerate(pool):
            slots[j % n_slots].append(idx)
    return [np.sort(np.asarray(s, dtype=int)) for s in slots]


def _group_indices(dataset):
    groups = {}
    for i, g in enumerate(dataset.groups):
        groups.setdefault(g, []).append(i)
    return groups


def split_scenario(dataset, scenario, n_centers, seed=0):
    """Distribute one dataset over centers per the named scenario.

    IID: stratified even split, all views everywhere.  G: one third mixed
    centers, one third holding only the first group, one third only the
    second.  K: IID split but the second view is absent in one third of the
    centers and the third view in another third.  GK: G and K combined.
    """
    scenario = scenario.upper().replace("/", "")
    if scenario not in ("IID", "G", "K", "GK"):
        raise ValueError(f"unknown scenario {scenario!r}")
    if n_centers < 1:
        raise BadCenterCount("need at least one center", centers=n_centers)
    rng = np.random.default_rng(seed)
    groups = _group_indices(dataset)

    if scenario in ("G", "GK"):
        if n_centers % 3 != 0:
            raise BadCenterCount("scenario needs a center count divisible "
                                 "by 3", scenario=scenario, centers=n_centers)
        labels = sorted(groups)
        if len(labels) != 2:
            raise InsufficientGroupSamples("scenario needs two groups",
                                           labels=labels)
        m = n_centers // 3
        g1, g2 = labels
        pools = {g: list(groups[g]) for g in labels}
        for g in labels:
            rng.shuffle(pools[g])
        assignments = [[] for _ in range(n_centers)]
        for g in labels:
            pool = pools[g]
            # mixed centers take an iid share; the group's pure centers
            # split the remainder
            share = len(pool) // n_centers
            mixed_take = share * m
            mixed_part, rest = pool[:mixed_take], pool[mixed_take:]
            for j, idx in enumerate(mixed_part):
                assignments[j % m].append(idx)
            pure_start = m if g == g1 else 2 * m
            if len(rest) < m:
                raise InsufficientGroupSamples(
                    "not enough subjects for the pure centers", group=g)
            for j, idx in enumerate(rest):
                assignments[pure_start + j % m].append(idx)
        parts = [np.sort(np.asarray(a, dtype=int)) for a in assignments]
    else:
        parts = _deal_indices([groups[g] for g in sorted(groups)],
                              n_centers, rng)

    if any(len(p) == 0 for p in parts):
        raise InsufficientGroupSamples("a center received no subjects",
                                       scenario=scenario, centers=n_centers)
    centers = [dataset.subset(p) for p in parts]

    if scenario in ("K", "GK"):
        if n_centers % 3 != 0:
            raise BadCenterCount("scenario needs a center count divisible "
                                 "by 3", scenario=scenario, centers=n_centers)
        names = dataset.layout.names
        if len(names) < 3:
            raise InvalidData("missing-view scenarios need at least 3 views")
        m = n_centers // 3
        centers = [
            ds if i < m else
            ds.drop_view(names[1]) if i < 2 * m else
            ds.drop_view(names[2])
            for i, ds in enumerate(centers)
        ]
        covered = set().union(*(ds.present_views for ds in centers))
        if set(names) - covered:
            raise InvalidData("a view vanished from every center")
    return centers


# ---- tabular I/O -----------------------------------------------------------

def _feature_columns(layout):
    cols = {}
    for k in layout.names:
        cols[k] = [f"{k}.f{j}" for j in range(layout.dim(k))]
    return cols


def save_tabular(dataset, path):
    """Write a dataset as CSV with ``view.feature`` columns."""
    cols = _feature_columns(dataset.layout)
    header = ["id", "group"]
    for k in dataset.present_views:
        header.extend(cols[k])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_subjects):
            row = [dataset.ids[i], dataset.groups[i]]
            for k in dataset.present_views:
                row.extend(repr(float(v)) for v in dataset.views[k][i])
            writer.writerow(row)


def load_tabular(path, layout):
    """Read a dataset written by :func:`save_tabular`, validated against
    ``layout``; wholly absent column groups mark a missing view."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch("empty file", path=str(path))
        rows = list(reader)

    expected = _feature_columns(layout)
    feature_cols = [c for c in header if c not in ("id", "group")]
    present = []
    for k in layout.names:
        found = [c for c in feature_cols if c.startswith(f"{k}.")]
        if not found:
            continue
        if found != expected[k]:
            raise HeaderMismatch("view columns do not match the layout",
                                 view=k, got=found)
        present.append(k)
    known = {c for k in present for c in expected[k]} | {"id", "group"}
    unknown = [c for c in header if c not in known]
    if unknown:
        raise HeaderMismatch("unrecognized columns", columns=unknown)

    col_index = {c: j for j, c in enumerate(header)}
    n = len(rows)
    ids = []
    groups = []
    views = {k: np.empty((n, layout.dim(k))) for k in present}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise RaggedRow("row width differs from header", row=i,
                            got=len(row), expected=len(header))
        ids.append(row[col_index["id"]] if "id" in col_index else f"s{i:04d}")
        groups.append(row[col_index["group"]] if "group" in col_index
                      else GROUP_BASE)
        for k in present:
            for j, c in enumerate(expected[k]):
                cell = row[col_index[c]]
                try:
                    views[k][i, j] = float(cell)
                except ValueError:
                    raise NonNumericCell("cell is not a number", row=i,
                                         column=c, value=cell)
    return CenterDataset(layout=layout, ids=ids, groups=groups, views=views)


# ---- standardization -------------------------------------------------------

@dataclass
class Scaler:
    """Per-feature affine map fitted on training data."""

    mean: dict
    std: dict
    zero_variance: dict = field(default_factory=dict)

    def transform(self, dataset):
        views = {}
        for k in dataset.present_views:
            if k not in self.mean:
                raise InvalidData("scaler was not fitted for view", view=k)
            views[k] = (dataset.views[k] - self.mean[k]) / self.std[k]
        return CenterDataset(dataset.layout, list(dataset.ids),
                             list(dataset.groups), views)


def standardize(train, apply_to):
    """Fit per-feature scalers on the training pool and apply them.

    ``train`` and ``apply_to`` may each be one dataset or a list.  Features
    with zero variance pass through centered and are flagged on the scaler.
    """
    train_list = train if isinstance(train, (list, tuple)) else [train]
    apply_list = apply_to if isinstance(apply_to, (list, tuple)) else [apply_to]
    mean, std, flags = {}, {}, {}
    all_views = {k for ds in train_list for k in ds.present_views}
    for k in sorted(all_views):
        stacked = np.concatenate([ds.views[k] for ds in train_list
                                  if k in ds.views])
        if stacked.shape[0] == 0:
            raise InvalidData("no training rows for view", view=k)
        mean[k] = stacked.mean(axis=0)
        s = stacked.std(axis=0)
        zero = s == 0.0
        s = np.where(zero, 1.0, s)
        std[k] = s
        flags[k] = zero
    scaler = Scaler(mean=mean, std=std, zero_variance=flags)
    transformed = [scaler.transform(ds) for ds in apply_list]
    if not isinstance(apply_to, (list, tuple)):
        return transformed[0], scaler
    return transformed, scaler


# ---- cross-validation ------------------------------------------------------

def kfold(dataset, k=3, repeats=10, seed=0):
    """Stratified k-fold index sets, reshuffled per repeat with derived seeds.

    Returns a list over repeats, each a list of ``k`` sorted index arrays
    that partition the subjects exactly.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = _group_indices(dataset)
    for g, idx in groups.items():
        if len(idx) < k:
            raise InsufficientGroupSamples("group smaller than fold count",
                                           group=g, size=len(idx), k=k)
    out = []
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        folds = _deal_indices([groups[g] for g in sorted(groups)], k, rng)
        out.append(folds)
    return out
