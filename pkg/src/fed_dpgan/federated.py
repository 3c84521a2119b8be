"""Federated orchestration: client sampling, FedAvg and the round driver.

One round is the three-step protocol: the server samples clients and
broadcasts the global parameters, every sampled client trains locally, and
the server replaces the global parameters with the ``N_k / N``-weighted mean
of the returned parameters. The same driver trains the GAN generator (only
theta travels; critics stay on the clients) and the classifier.
"""

import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol, Union

import numpy as np

from fed_dpgan import seeds
from fed_dpgan.classifier import ClassifierConfig, evaluate_loss, local_train
from fed_dpgan.data import ClientShard
from fed_dpgan.errors import FedDPGANError, ParameterError, ProtocolError, StructuralError
from fed_dpgan.gan import GanConfig, client_update
from fed_dpgan.nn import ParameterVector, decode_params, encode_params
from fed_dpgan.schemas import RoundRecord

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<QQQ")
_STATE_HEADER = struct.Struct("<Q")

STAGES = {
    "gan": (seeds.GAN_SELECT, seeds.GAN_CLIENT),
    "classifier": (seeds.CLASSIFIER_SELECT, seeds.CLASSIFIER_CLIENT),
}


@dataclass
class GlobalModelState:
    round: int
    theta: ParameterVector
    history: list[RoundRecord] = field(default_factory=list)


@dataclass
class ClientUpdateMsg:
    client_id: int
    params: ParameterVector
    n_k: int
    round: int = 0
    loss: float = 0.0
    stats: Any = None


class FederatedClient(Protocol):
    client_id: int

    @property
    def n_k(self) -> int: ...

    def train(self, theta: ParameterVector, round_index: int, rng: np.random.Generator) -> ClientUpdateMsg: ...


class ClassifierClient:
    """Runs E local epochs of mini-batch SGD on its shard."""

    def __init__(self, shard: ClientShard, cfg: ClassifierConfig):
        self.client_id = shard.client_id
        self.shard = shard
        self.cfg = cfg

    @property
    def n_k(self) -> int:
        return self.shard.n_k

    def train(self, theta, round_index, rng):
        params = local_train(theta, self.shard, self.cfg, rng)
        loss = evaluate_loss(params, self.cfg.spec, self.shard.dataset)
        return ClientUpdateMsg(self.client_id, params, self.n_k, round_index, loss)


class GanClient:
    """Holds a private critic across rounds and returns only the generator."""

    def __init__(self, shard: ClientShard, cfg: GanConfig, omega: ParameterVector):
        self.client_id = shard.client_id
        self.shard = shard
        self.cfg = cfg
        self.omega = omega.copy()

    @property
    def n_k(self) -> int:
        return self.shard.n_k

    def train(self, theta, round_index, rng):
        theta_k, stats = client_update(theta, self.omega, self.shard, self.cfg, rng)
        self.omega = stats.omega
        return ClientUpdateMsg(self.client_id, theta_k, self.n_k, round_index, stats.mean_loss, stats)


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int
    c_frac: float
    seed: int
    stage: str = "classifier"
    parallel: bool = False
    max_workers: int = 4
    evaluate: Optional[Callable[[ParameterVector], float]] = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ParameterError(f"round count must be non-negative, got {self.rounds}")
        if not 0 < self.c_frac <= 1:
            raise ParameterError(f"c_frac must lie in (0, 1], got {self.c_frac}")
        if self.stage not in STAGES:
            raise ParameterError(f"unknown stage {self.stage!r}")
        if self.max_workers < 1:
            raise ParameterError("max_workers must be >= 1")

    def round_seed(self, round_index: int) -> int:
        return seeds.derive_seed(self.seed, STAGES[self.stage][0], round_index)

    def client_rng(self, client_id: int, round_index: int) -> np.random.Generator:
        return seeds.derive_rng(self.seed, STAGES[self.stage][1], client_id, round_index)


# ─────────────────────────────────────────────────────────────────────────────
# Protocol steps
# ─────────────────────────────────────────────────────────────────────────────


def subset_size(K: int, c_frac: float) -> int:
    """``max(1, round(c_frac * K))`` with halves rounded up."""
    return max(1, int(np.floor(c_frac * K + 0.5)))


def select_clients(K: int, c_frac: float, rng: np.random.Generator) -> list[int]:
    """Uniform sample without replacement of client positions ``0..K-1``, sorted."""
    if K < 1:
        raise ParameterError(f"need at least one client, got K={K}")
    if not 0 < c_frac <= 1:
        raise ParameterError(f"c_frac must lie in (0, 1], got {c_frac}")
    chosen = rng.choice(K, size=min(K, subset_size(K, c_frac)), replace=False)
    return sorted(int(k) for k in chosen)


def fedavg_aggregate(updates: list[ClientUpdateMsg]) -> ParameterVector:
    """``sum_k (N_k / N) theta_k`` over the updates, summed in client-id order."""
    if not updates:
        raise ProtocolError("cannot aggregate an empty list of updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    layout = ordered[0].params.layout
    for update in ordered:
        if update.params.layout != layout:
            raise StructuralError(f"client {update.client_id} sent a different layout")
        if update.n_k < 1:
            raise ProtocolError(f"client {update.client_id} reported N_k={update.n_k}")
    n_total = sum(u.n_k for u in ordered)
    result = np.zeros(len(ordered[0].params))
    for update in ordered:
        result += (update.n_k / n_total) * update.params.values
    return ParameterVector(result, layout)


def _train_one(client: FederatedClient, theta: ParameterVector, round_index: int, cfg: TrainingConfig):
    rng = cfg.client_rng(client.client_id, round_index)
    try:
        return client.train(theta.copy(), round_index, rng)
    except FedDPGANError as e:
        logger.warning(f"client {client.client_id} dropped from round {round_index}: {e}")
        return None


def run_round(
    state: GlobalModelState,
    clients: Mapping[int, FederatedClient],
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> GlobalModelState:
    if not clients:
        raise ProtocolError("the client registry is empty")
    started = time.perf_counter()
    ids = sorted(clients)
    selected = [ids[k] for k in select_clients(len(ids), cfg.c_frac, rng)]

    if cfg.parallel and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            results = list(
                pool.map(lambda cid: _train_one(clients[cid], state.theta, state.round, cfg), selected)
            )
    else:
        results = [_train_one(clients[cid], state.theta, state.round, cfg) for cid in selected]

    updates = [msg for msg in results if msg is not None]
    dropped = [cid for cid, msg in zip(selected, results) if msg is None]
    if not updates:
        raise ProtocolError(f"every selected client failed in round {state.round}")

    theta = fedavg_aggregate(updates)
    accuracy = cfg.evaluate(theta) if cfg.evaluate is not None else None
    record = RoundRecord(
        round=state.round,
        stage=cfg.stage,
        selected=selected,
        dropped=dropped,
        mean_client_loss=float(np.mean([u.loss for u in updates])),
        eval_accuracy=accuracy,
        seed=cfg.round_seed(state.round),
    )
    logger.info(
        f"{cfg.stage} round {state.round}: {len(updates)}/{len(selected)} clients, "
        f"loss={record.mean_client_loss:.4f}"
        + (f", accuracy={accuracy:.4f}" if accuracy is not None else "")
        + f" ({time.perf_counter() - started:.2f}s)"
    )
    return GlobalModelState(round=state.round + 1, theta=theta, history=[*state.history, record])


def run_training(
    state: GlobalModelState,
    clients: Mapping[int, FederatedClient],
    cfg: TrainingConfig,
) -> GlobalModelState:
    """Run ``cfg.rounds`` rounds; no convergence test."""
    if cfg.rounds > 0 and not clients:
        raise ProtocolError("the client registry is empty")
    for _ in range(cfg.rounds):
        rng = np.random.default_rng(cfg.round_seed(state.round))
        state = run_round(state, clients, cfg, rng)
    return state


# ─────────────────────────────────────────────────────────────────────────────
# Wire format and checkpoints
# ─────────────────────────────────────────────────────────────────────────────


def encode_update(msg: ClientUpdateMsg) -> bytes:
    """Header ``(client_id, n_k, round)`` as u64, then the parameter vector."""
    return _HEADER.pack(msg.client_id, msg.n_k, msg.round) + encode_params(msg.params)


def decode_update(data: bytes) -> ClientUpdateMsg:
    if len(data) < _HEADER.size:
        raise StructuralError("update message shorter than its header")
    client_id, n_k, round_index = _HEADER.unpack_from(data, 0)
    params, end = decode_params(data, _HEADER.size)
    if end != len(data):
        raise StructuralError(f"{len(data) - end} trailing bytes after the update")
    return ClientUpdateMsg(client_id=client_id, params=params, n_k=n_k, round=round_index)


def save_state(state: GlobalModelState, path: Union[str, Path]) -> None:
    Path(path).write_bytes(_STATE_HEADER.pack(state.round) + encode_params(state.theta))


def load_state(path: Union[str, Path]) -> GlobalModelState:
    data = Path(path).read_bytes()
    if len(data) < _STATE_HEADER.size:
        raise StructuralError(f"{path}: checkpoint shorter than its header")
    (round_index,) = _STATE_HEADER.unpack_from(data, 0)
    theta, _ = decode_params(data, _STATE_HEADER.size)
    return GlobalModelState(round=round_index, theta=theta)

