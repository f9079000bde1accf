"""Federated training loop with poisoned clients and a pluggable server rule."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _rng, nn
from .aggregation import AggregatorKind, AggregatorSpec
from .attacks import AttackConfig, AttackKind, adversarial_client_update, most_confused_flip_map
from .data import AuxiliaryDataset, Dataset, build_auxiliary, dirichlet_partition, load_csv, split
from .data import CsvSchema, synthesize
from .defense import SelectionResult, aggregate_selected, default_top_t, weibull_filter
from .metrics import macro_f1, per_class_recall

logger = logging.getLogger(__name__)

# sub-stream tags for _rng.derive(master, TAG, ...)
_DATA, _SPLIT, _SERVER, _PARTITION, _INIT, _REFERENCE, _AUX, _ADVERSARY, _SAMPLE, _CLIENT = range(10)


@dataclass
class ClientShard:
    id: int
    data: Dataset
    is_adversary: bool = False
    attack: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if len(self.data) == 0:
            raise ValueError(f"client {self.id} has no data")


@dataclass
class Metrics:
    f1: float
    per_class_recall: np.ndarray
    tcr: float
    flags: list[str] = field(default_factory=list)


def compute_metrics(arch, params, test: Dataset, target_labels=()) -> Metrics:
    """Macro F1 and per-class recall on ``test``; TCR is the mean target recall."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    pred = nn.predict(arch, params, test.features)
    recall = per_class_recall(test.labels, pred, test.n_classes)
    flags = [f"class {c} absent from test set" for c in np.flatnonzero(np.isnan(recall))]
    targets = [t for t in target_labels if not np.isnan(recall[t])]
    tcr = float(np.mean(recall[targets])) if targets else math.nan
    return Metrics(macro_f1(test.labels, pred, test.n_classes), recall, tcr, flags)


@dataclass
class RoundReport:
    round: int
    global_f1: float
    per_class_recall: np.ndarray
    tcr: float
    selected_ids: list[int]
    rejected_ids: list[int]
    agg_wall_time: float
    defense_log: dict | None = None


@dataclass
class ServerSetup:
    """Everything about a run that stays fixed across rounds."""

    arch: nn.MlpArchitecture
    sgd: nn.SgdSettings
    spec: AggregatorSpec
    test: Dataset
    aux: AuxiliaryDataset | None = None
    target_labels: tuple[int, ...] = ()
    top_t: int | None = None
    floc: float = 0.0
    clients_per_round: int | None = None
    workers: int = 1


@dataclass
class FederationState:
    round: int
    global_params: np.ndarray
    clients: list[ClientShard]
    master_seed: int = 0

    @property
    def adversary_ids(self) -> set[int]:
        return {c.id for c in self.clients if c.is_adversary}


def time_aggregation(spec: AggregatorSpec, updates, setup: ServerSetup | None = None, **kw):
    """Run one server step and return ``(result, seconds)`` from a monotonic clock."""
    start = time.perf_counter()
    result = _server_step(spec, updates, setup, **kw)
    return result, time.perf_counter() - start


def _server_step(spec, updates, setup, client_ids=None, round_=0):
    if spec.kind is AggregatorKind.WEIDETECT:
        sel = weibull_filter(
            setup.arch, updates, setup.aux, setup.top_t, setup.floc, client_ids, round_
        )
        return aggregate_selected(updates, sel, client_ids), sel
    return spec.aggregate(updates), None


def _local_update(state: FederationState, setup: ServerSetup, client: ClientShard):
    seed = _rng.derive(state.master_seed, _CLIENT, client.id, state.round)
    if client.is_adversary:
        params, _ = adversarial_client_update(
            setup.arch, state.global_params, client.data, client.attack, setup.sgd, seed
        )
        return params
    return setup.sgd.train(
        setup.arch, state.global_params, client.data.features, client.data.labels, seed
    )


def sample_clients(state: FederationState, m: int) -> list[int]:
    n = len(state.clients)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} clients")
    if m == n:
        return list(range(n))
    rng = _rng.rng(state.master_seed, _SAMPLE, state.round)
    return sorted(rng.choice(n, size=m, replace=False).tolist())


def run_round(state: FederationState, setup: ServerSetup):
    """Advance one round; returns the next state, the report and the client updates."""
    state = replace(state, round=state.round + 1)
    chosen = sample_clients(state, setup.clients_per_round or len(state.clients))
    clients = [state.clients[i] for i in chosen]
    if setup.workers > 1:
        with ThreadPoolExecutor(setup.workers) as pool:
            updates = list(pool.map(lambda c: _local_update(state, setup, c), clients))
    else:
        updates = [_local_update(state, setup, c) for c in clients]
    ids = [c.id for c in clients]

    (new_global, sel), seconds = time_aggregation(
        setup.spec, updates, setup, client_ids=ids, round_=state.round
    )
    if sel is not None and not sel.benign_ids:
        raise RuntimeError(f"round {state.round}: defense selected no clients")
    if not np.isfinite(new_global).all():
        raise FloatingPointError(f"round {state.round}: global model is not finite")

    m = compute_metrics(setup.arch, new_global, setup.test, setup.target_labels)
    report = RoundReport(
        round=state.round,
        global_f1=m.f1,
        per_class_recall=m.per_class_recall,
        tcr=m.tcr,
        selected_ids=list(sel.benign_ids) if sel else ids,
        rejected_ids=list(sel.rejected_ids) if sel else [],
        agg_wall_time=seconds,
        defense_log=sel.log_record() if sel else None,
    )
    return replace(state, global_params=new_global), report, (ids, updates)


# ---------------------------------------------------------------- experiment


@dataclass
class Environment:
    """Datasets, clients and server resources resolved from a config."""

    setup: ServerSetup
    state: FederationState
    train: Dataset
    server_pool: Dataset
    reference: np.ndarray
    attack: AttackConfig
    warnings: list[str] = field(default_factory=list)
    partition: object = None


def _load_dataset(cfg) -> Dataset:
    d = cfg.data
    if d.source == "csv":
        schema = CsvSchema.from_file(cfg.resolve_path(d.schema_path))
        return load_csv(cfg.resolve_path(d.csv_path), schema)
    return synthesize(
        d.n_classes, d.dim, d.class_counts, d.separation,
        _rng.derive(cfg.seeds.master, _DATA), d.noise,
    )


def _pick_adversaries(cfg, shards: list[Dataset], targets) -> list[int]:
    a = cfg.attack
    k = cfg.adversary_count
    if a.adversary_ids:
        return sorted(a.adversary_ids)
    if k == 0:
        return []
    n = len(shards)
    if a.adversary_placement == "target_holders":
        held = [int(np.isin(s.labels, targets).sum()) for s in shards]
        return sorted(sorted(range(n), key=lambda i: (-held[i], i))[:k])
    rng = _rng.rng(cfg.seeds.master, _ADVERSARY)
    return sorted(rng.choice(n, size=k, replace=False).tolist())


def build_environment(cfg, workers: int = 1) -> Environment:
    """Load data, carve out the server slice, partition clients, build aux set."""
    master = cfg.seeds.master
    d, t = cfg.data, cfg.training
    full = _load_dataset(cfg)
    warnings = []
    if any(not 0 <= c < full.n_classes for c in cfg.attack.target_labels):
        raise ValueError(f"attack.target_labels outside [0, {full.n_classes})")

    train_idx, test_idx, w = split(full, d.test_fraction, _rng.derive(master, _SPLIT))
    warnings += w
    train, test = full.subset(train_idx, "train"), full.subset(test_idx, "test")
    client_idx, server_idx, w = split(train, d.server_fraction, _rng.derive(master, _SERVER))
    warnings += w
    server_pool = train.subset(server_idx, "server")
    client_data = train.subset(client_idx, "clients")

    arch = nn.MlpArchitecture(full.dim, tuple(t.hidden), full.n_classes)
    sgd = nn.SgdSettings(t.lr, t.local_epochs, t.batch_size)
    init = nn.init_params(arch, _rng.derive(master, _INIT))
    reference = nn.sgd_epochs(
        arch, init, server_pool.features, server_pool.labels, t.lr, t.reference_epochs,
        t.batch_size, _rng.derive(master, _REFERENCE),
    )

    plan = dirichlet_partition(
        client_data.labels, full.n_classes, d.client_count, d.eta, _rng.derive(master, _PARTITION)
    )
    shards = [client_data.subset(ix, f"client-{k}") for k, ix in enumerate(plan.assignments)]

    spec = cfg.defense.spec()
    aux = None
    try:
        aux = build_auxiliary(
            arch, reference, server_pool, cfg.defense.aux_threshold, cfg.defense.aux_volume,
            _rng.derive(master, _AUX),
        )
        warnings += aux.warnings
    except ValueError as exc:
        if spec.kind is AggregatorKind.WEIDETECT:
            raise
        warnings.append(str(exc))

    attack = cfg.attack.attack_config()
    if attack.kind is AttackKind.LABEL_FLIP and attack.flip_map is None:
        attack = replace(
            attack,
            flip_map=most_confused_flip_map(arch, reference, server_pool, attack.target_labels),
        )
    adversaries = set(_pick_adversaries(cfg, shards, attack.target_labels))
    clients = [
        ClientShard(k, s, k in adversaries, attack if k in adversaries else AttackConfig())
        for k, s in enumerate(shards)
    ]
    m = cfg.clients_per_round
    setup = ServerSetup(
        arch, sgd, spec, test, aux, attack.target_labels,
        cfg.defense.top_t or default_top_t(m), cfg.defense.floc, m, workers,
    )
    start = reference.copy() if t.init == "reference" else init
    state = FederationState(0, start, clients, master)
    return Environment(setup, state, train, server_pool, reference, attack, warnings, plan)


@dataclass
class ExperimentResult:
    reports: list[RoundReport]
    params: np.ndarray
    env: Environment

    def summary(self) -> dict:
        f1 = [r.global_f1 for r in self.reports]
        tcr = [r.tcr for r in self.reports]

        def _best(xs):
            xs = [x for x in xs if not math.isnan(x)]
            return max(xs) if xs else None

        def _num(x):
            return None if x is None or math.isnan(x) else x

        return {
            "rounds": len(self.reports),
            "final_f1": _num(f1[-1]) if f1 else None,
            "best_f1": _best(f1),
            "final_tcr": _num(tcr[-1]) if tcr else None,
            "best_tcr": _best(tcr),
        }


def run_experiment(cfg, on_round=None, workers: int = 1) -> ExperimentResult:
    """Run ``cfg.training.rounds`` rounds.

    ``on_round(report, state, updates)`` is called after every round, which
    is how reports are streamed to disk while the run is still going.
    """
    env = build_environment(cfg, workers)
    state = env.state
    reports = []
    for _ in range(cfg.training.rounds):
        state, report, updates = run_round(state, env.setup)
        reports.append(report)
        if on_round is not None:
            on_round(report, state, updates)
    return ExperimentResult(reports, state.global_params, env)
