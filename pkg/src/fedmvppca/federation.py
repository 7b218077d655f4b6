"""Round loop orchestrating clients and master over an in-process transport.

Round 1: every center initializes randomly and runs plain EM iterations
(the exploratory phase).  Later rounds: centers draw fresh parameters from
the current global prior, run MAP iterations against it, and the master
re-estimates the global parameters from the collected (optionally privatized)
local parameters.  All cross-boundary data moves as serialized messages, so
transport delivery is bit-transparent.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .client import ClientState, init_params, local_round
from .dp import PrivacyLedger, PrivacySpec, privatize_local_params
from .errors import FedPpcaError, ViewUnrepresented
from .master import AggregationInput, aggregate_round
from .model import GlobalParams, ViewPrior
from .wire import deserialize_params, serialize_params

DP_BOOTSTRAP_SEEDED = "seeded_prior"
DP_BOOTSTRAP_PERMISSIVE = "permissive"


@dataclass
class FederationConfig:
    rounds: int = 100
    local_iterations: int = 15
    first_round_iterations: int = 30
    latent_dim: int = 5
    dp: PrivacySpec | None = None
    seed: int = 0
    transport: str = "in_process"
    dp_bootstrap: str = DP_BOOTSTRAP_SEEDED
    dropout: dict = field(default_factory=dict)  # round -> center ids
    dropout_policy: str = "abort"
    history_thin: int = 1
    sigma2_floor: float = 1e-12
    spread_floor: float = 1e-8

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.local_iterations < 0 or self.first_round_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.transport != "in_process":
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.dropout_policy not in ("abort", "skip"):
            raise ValueError(f"unknown dropout policy {self.dropout_policy!r}")
        if self.dp_bootstrap not in (DP_BOOTSTRAP_SEEDED,
                                     DP_BOOTSTRAP_PERMISSIVE):
            raise ValueError(f"unknown dp bootstrap {self.dp_bootstrap!r}")


@dataclass
class RoundRecord:
    round_index: int
    wall_times: dict
    global_blob: bytes
    spreads: dict  # view -> (sigma_mu, sigma_w, sigma_tilde)
    metrics: dict | None = None
    privacy_totals: dict | None = None

    def global_params(self):
        return deserialize_params(self.global_blob)

    def export_record(self):
        rec = {
            "round": self.round_index,
            "spreads": {k: list(v) for k, v in self.spreads.items()},
        }
        if self.metrics is not None:
            rec["metrics"] = self.metrics
        if self.privacy_totals is not None:
            rec["privacy_totals"] = {c: list(v)
                                     for c, v in self.privacy_totals.items()}
        return rec


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    ledgers: dict = field(default_factory=dict)  # center_id -> PrivacyLedger

    def export_text(self):
        lines = [json.dumps(r.export_record(), sort_keys=True)
                 for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")

    def spread_series(self, view):
        """Per-round (sigma_mu, sigma_w, sigma_tilde) triples for one view."""
        return [rec.spreads[view] for rec in self.records]


class InProcessTransport:
    """Synchronous barrier transport: all uplinks land before aggregation."""

    def __init__(self):
        self._uplink = {}
        self._downlink = {}

    def send(self, round_index, center_id, blob):
        self._uplink.setdefault(round_index, {})[center_id] = blob

    def collect(self, round_index, expected_ids):
        inbox = self._uplink.get(round_index, {})
        missing = [c for c in expected_ids if c not in inbox]
        if missing:
            raise FedPpcaError("missing client messages", round=round_index,
                               centers=missing)
        return {c: inbox[c] for c in expected_ids}

    def broadcast(self, round_index, blob):
        self._downlink[round_index] = blob

    def receive_broadcast(self, round_index):
        return self._downlink[round_index]


def seed_prior(layout, latent_dim):
    """Uninformative bootstrap prior: zero means, unit spreads, unit-mean IG."""
    views = {}
    for name, dim in layout.views:
        views[name] = ViewPrior(
            mu_tilde=np.zeros(dim),
            sigma2_mu_tilde=1.0,
            w_tilde=np.zeros((dim, latent_dim)),
            sigma2_w_tilde=1.0,
            alpha=3.0,
            beta=2.0,
        )
    return GlobalParams(latent_dim=latent_dim, views=views)


def _check_datasets(datasets):
    layout = datasets[0].layout
    for ds in datasets[1:]:
        if ds.layout != layout:
            raise FedPpcaError("centers disagree on the view layout")
    covered = set()
    for ds in datasets:
        covered.update(ds.present_views)
    for name in layout.names:
        if name not in covered:
            raise ViewUnrepresented("view observed at no center", view=name)
    return layout


def _rng(seed, round_index, center_index, tag):
    return np.random.default_rng(
        np.random.SeedSequence((seed, round_index, center_index, tag)))


def _run(config, center_datasets, use_dp, metrics_fn=None):
    datasets = list(center_datasets)
    if not datasets:
        raise ViewUnrepresented("no centers supplied", view="*")
    layout = _check_datasets(datasets)
    center_ids = [f"center{i + 1}" for i in range(len(datasets))]
    q = config.latent_dim
    transport = InProcessTransport()
    history = RunHistory(ledgers={c: PrivacyLedger() for c in center_ids}
                         if use_dp else {})
    bootstrap = None
    if use_dp and config.dp_bootstrap == DP_BOOTSTRAP_SEEDED:
        bootstrap = seed_prior(layout, q)

    current_global = None
    for r in range(1, config.rounds + 1):
        dropped = set(config.dropout.get(r, ()))
        if dropped and config.dropout_policy == "abort":
            raise FedPpcaError("center dropped out", round=r,
                               centers=sorted(dropped))
        wall_times = {}
        for ci, (center_id, dataset) in enumerate(zip(center_ids, datasets)):
            if center_id in dropped:
                continue
            start = time.perf_counter()
            rng_init = _rng(config.seed, r, ci, 0)
            if r == 1:
                params = init_params(layout, dataset.present_views, q,
                                     rng_init)
                state = ClientState(center_id, dataset, params, q)
                result = local_round(state, None,
                                     config.first_round_iterations, "em",
                                     sigma2_floor=config.sigma2_floor)
                reference = bootstrap
            else:
                params = init_params(layout, dataset.present_views, q,
                                     rng_init, prior=current_global)
                state = ClientState(center_id, dataset, params, q)
                result = local_round(state, current_global,
                                     config.local_iterations, "map",
                                     sigma2_floor=config.sigma2_floor)
                reference = current_global
            outgoing = result.params
            if use_dp and reference is not None:
                outgoing, entries = privatize_local_params(
                    outgoing, reference, config.dp, _rng(config.seed, r, ci, 1),
                    round_index=r)
                history.ledgers[center_id].extend(entries)
            wall_times[center_id] = time.perf_counter() - start
            transport.send(r, center_id, serialize_params(outgoing))

        active = [c for c in center_ids if c not in dropped]
        blobs = transport.collect(r, active)
        inputs = [AggregationInput(c, deserialize_params(blobs[c]))
                  for c in active]
        new_global = aggregate_round(inputs, layout, q,
                                     spread_floor=config.spread_floor)
        global_blob = serialize_params(new_global)
        transport.broadcast(r, global_blob)
        current_global = deserialize_params(transport.receive_broadcast(r))

        if r % config.history_thin == 0 or r == config.rounds:
            spreads = {
                k: (float(np.sqrt(vp.sigma2_mu_tilde)),
                    float(np.sqrt(vp.sigma2_w_tilde)),
                    vp.sigma_tilde)
                for k, vp in current_global.views.items()
            }
            record = RoundRecord(
                round_index=r,
                wall_times=wall_times,
                global_blob=global_blob,
                spreads=spreads,
                metrics=metrics_fn(current_global, r) if metrics_fn else None,
                privacy_totals={c: history.ledgers[c].totals()
                                for c in center_ids} if use_dp else None,
            )
            history.records.append(record)
    return current_global, history


def run_fed_mv_ppca(config, center_datasets, metrics_fn=None):
    """Run the plain federated algorithm; ignores any DP spec in the config."""
    return _run(config, center_datasets, use_dp=False, metrics_fn=metrics_fn)


def run_dp_fed_mv_ppca(config, center_datasets, metrics_fn=None):
    """Run the differentially private variant; config.dp must be set."""
    if config.dp is None:
        raise ValueError("config.dp must be a PrivacySpec")
    return _run(config, center_datasets, use_dp=True, metrics_fn=metrics_fn)
