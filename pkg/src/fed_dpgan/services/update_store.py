"""In-memory parameter-server state for the aggregation API."""

import logging
import threading
from dataclasses import dataclass, field
from typing import Optional

from fed_dpgan.errors import ParameterError, ProtocolError, StructuralError
from fed_dpgan.federated import ClientUpdateMsg, GlobalModelState, fedavg_aggregate
from fed_dpgan.nn import ParameterVector

logger = logging.getLogger(__name__)


@dataclass
class AggregationResult:
    round: int
    clients: list[int]
    n_total: int


@dataclass
class UpdateStore:
    """Holds the global model and the updates pending for the current round.

    One process, one model; a later update from the same client replaces
    the earlier one.
    """

    state: Optional[GlobalModelState] = None
    _pending: dict[int, ClientUpdateMsg] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def init_global(self, theta: ParameterVector) -> GlobalModelState:
        with self._lock:
            state = self.state = GlobalModelState(round=0, theta=theta.copy())
            self._pending.clear()
        logger.info(f"global model initialised with {len(theta)} parameters")
        return state

    def get(self) -> Optional[GlobalModelState]:
        with self._lock:
            return self.state

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._pending)

    def add_update(self, msg: ClientUpdateMsg) -> int:
        """Queue ``msg`` for the current round; returns the pending count."""
        with self._lock:
            if self.state is None:
                raise ProtocolError("no global model; initialise it first")
            if msg.round != self.state.round:
                raise ProtocolError(
                    f"update for round {msg.round} but the server is at round {self.state.round}"
                )
            if msg.n_k < 1:
                raise ParameterError(f"client {msg.client_id} reported N_k={msg.n_k}")
            if msg.params.layout != self.state.theta.layout:
                raise StructuralError(f"client {msg.client_id} sent a different layout")
            self._pending[msg.client_id] = msg
            return len(self._pending)

    def aggregate(self) -> AggregationResult:
        with self._lock:
            if self.state is None:
                raise ProtocolError("no global model; initialise it first")
            if not self._pending:
                raise ProtocolError(f"no updates pending for round {self.state.round}")
            updates = list(self._pending.values())
            theta = fedavg_aggregate(updates)
            state = self.state = GlobalModelState(
                round=self.state.round + 1, theta=theta, history=self.state.history
            )
            self._pending.clear()
        clients = sorted(u.client_id for u in updates)
        logger.info(f"aggregated {len(clients)} updates into round {state.round}")
        return AggregationResult(state.round, clients, sum(u.n_k for u in updates))
