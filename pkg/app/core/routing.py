"""
Carol 持有的路由表、端点注册、目录服务和会话建立

拓扑为星型套星型：每个端点只连接一个 Carol，Carol 之间全连接。
表更新采用按增量泛洪：每个增量向每个对等 Carol 发送一次认证消息，被篡改的更新被拒绝后重传。
"""
import json
import logging
from dataclasses import dataclass, field
from itertools import count
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from app.core.auth import DeliveryOutcome, DirectTransport, PoolRegistry, Transport, missing_pools, send_authenticated
from app.core.config import settings
from app.core.errors import (
    CapabilityError,
    ConflictError,
    KeyExhaustionError,
    NoKeyError,
    NotFoundError,
    PropagationStalled,
    RefusedError,
    RouteLostError,
    TamperAlarm,
)
from app.core.key_management import BootstrapPlan, SessionTerms
from app.models.auth import AuthScheme, BootstrapPolicy, ClassicalEnvelope
from app.models.network import Node
from app.models.protocol import Chain

logger = logging.getLogger(__name__)

DIRECT = "DIRECT"
CONTROL_SESSION = "control"


@dataclass
class RoutingTable:
    owner: str
    entries: Dict[str, str] = field(default_factory=dict)
    capabilities: Dict[str, Tuple[bool, bool]] = field(default_factory=dict)
    version: int = 0

    def set(self, endpoint: str, next_hop: str, capabilities: Tuple[bool, bool]) -> None:
        if endpoint == self.owner or next_hop == endpoint:
            raise ConflictError(f"table of {self.owner} cannot map {endpoint} to itself")
        self.entries[endpoint] = next_hop
        self.capabilities[endpoint] = capabilities
        self.version += 1

    def remove(self, endpoint: str) -> None:
        self.entries.pop(endpoint, None)
        self.capabilities.pop(endpoint, None)
        self.version += 1

    def attachment_of(self, endpoint: str) -> Optional[str]:
        hop = self.entries.get(endpoint)
        if hop is None:
            return None
        return self.owner if hop == DIRECT else hop


@dataclass(frozen=True)
class Route:
    nodes: Tuple[str, ...]

    @property
    def interior(self) -> Tuple[str, ...]:
        return self.nodes[1:-1]

    @property
    def chain(self) -> Chain:
        return Chain(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class DirectoryEntry:
    endpoint: str
    attachment: str
    can_transmit: bool
    can_receive: bool


@dataclass(frozen=True)
class DirectoryListing:
    carol: str
    entries: Tuple[DirectoryEntry, ...]

    def endpoints(self) -> List[str]:
        return [e.endpoint for e in self.entries]


@dataclass(frozen=True)
class TableDelta:
    origin: str
    endpoint: str
    action: str
    version: int
    capabilities: Tuple[bool, bool] = (True, True)

    def payload(self) -> bytes:
        return json.dumps({
            "origin": self.origin,
            "endpoint": self.endpoint,
            "action": self.action,
            "version": self.version,
            "capabilities": list(self.capabilities),
        }, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_payload(cls, payload: bytes) -> "TableDelta":
        data = json.loads(payload.decode("utf-8"))
        return cls(data["origin"], data["endpoint"], data["action"], data["version"], tuple(data["capabilities"]))


@dataclass
class PropagationReport:
    messages_sent: int = 0
    delivered: int = 0
    rejected: int = 0
    retransmits: int = 0


@dataclass
class SessionHandle:
    session_id: str
    alice: str
    bob: str
    route: Route
    terms: SessionTerms
    policy: BootstrapPolicy
    state: str = "established"

    @property
    def scheme(self) -> AuthScheme:
        return self.terms.scheme

    @property
    def route_lost(self) -> bool:
        return self.state == "route-lost"


@dataclass
class RouteCheck:
    ok: bool
    expected: Tuple[str, ...]
    announcers: Tuple[str, ...]
    extra: Tuple[str, ...] = ()
    missing: Tuple[str, ...] = ()


def verify_route_a_posteriori(announcers: Sequence[str], route: Route) -> RouteCheck:
    """announcers 为按链上顺序宣布了基的中继"""
    seen: List[str] = []
    for node in announcers:
        if node not in seen:
            seen.append(node)
    expected = route.interior
    extra = tuple(n for n in seen if n not in expected)
    missing = tuple(n for n in expected if n not in seen)
    ok = tuple(seen) == expected
    if not ok:
        logger.warning(f"Route mismatch on {'>'.join(route.nodes)}: extra={list(extra)} missing={list(missing)}")
    return RouteCheck(ok=ok, expected=expected, announcers=tuple(seen), extra=extra, missing=missing)


Scheduler = Callable[[Callable[[], None], int], None]


class RoutingFabric:
    def __init__(
            self,
            carols: Sequence[str],
            pools: PoolRegistry,
            transport: Optional[Transport] = None,
            scheduler: Optional[Scheduler] = None,
            run_pending: Optional[Callable[[], None]] = None,
            max_retransmits: Optional[int] = None,
    ):
        self.carols = list(carols)
        self.tables: Dict[str, RoutingTable] = {c: RoutingTable(owner=c) for c in self.carols}
        self.pools = pools
        self.transport = transport or DirectTransport()
        self.max_retransmits = settings.MAX_RETRANSMITS if max_retransmits is None else max_retransmits
        self.attachments: Dict[str, str] = {}
        self.nodes: Dict[str, Node] = {}
        self.pending: List[TableDelta] = []
        self.sessions: Dict[str, SessionHandle] = {}
        self.bootstrap: Dict[Tuple[str, str], BootstrapPlan] = {}
        self._applied: Dict[Tuple[str, str, str], int] = {}
        self._sequence: Dict[Tuple[str, str, str], int] = {}
        self._session_counter = count(1)
        self._queue: List[Tuple[int, Callable[[], None]]] = []
        self._scheduler = scheduler
        self._run_pending = run_pending
        self.on_delivery: Optional[Callable[[DeliveryOutcome], None]] = None

    def next_sequence(self, session_id: str, origin: str, destination: str) -> int:
        key = (session_id, origin, destination)
        self._sequence[key] = self._sequence.get(key, -1) + 1
        return self._sequence[key]

    def _carol(self, carol: str) -> RoutingTable:
        table = self.tables.get(carol)
        if table is None:
            raise NotFoundError(f"unknown carol {carol}")
        return table

    def register_endpoint(self, carol: str, endpoint: Node) -> TableDelta:
        table = self._carol(carol)
        if endpoint.id in self.attachments:
            raise ConflictError(f"endpoint {endpoint.id} is already registered at {self.attachments[endpoint.id]}")
        capabilities = (endpoint.can_transmit, endpoint.can_receive)
        table.set(endpoint.id, DIRECT, capabilities)
        self.attachments[endpoint.id] = carol
        self.nodes[endpoint.id] = endpoint
        delta = TableDelta(carol, endpoint.id, "add", table.version, capabilities)
        self.pending.append(delta)
        logger.info(f"Registered {endpoint.id} at {carol}")
        return delta

    def deregister_endpoint(self, carol: str, endpoint: str) -> TableDelta:
        table = self._carol(carol)
        if table.entries.get(endpoint) != DIRECT:
            raise NotFoundError(f"endpoint {endpoint} is not registered at {carol}")
        table.remove(endpoint)
        del self.attachments[endpoint]
        self.nodes.pop(endpoint, None)
        delta = TableDelta(carol, endpoint, "remove", table.version)
        self.pending.append(delta)
        for handle in self.sessions.values():
            if handle.state == "established" and endpoint in (handle.alice, handle.bob):
                handle.state = "route-lost"
                logger.warning(f"Session {handle.session_id} lost its route: {endpoint} deregistered")
        return delta

    def _apply(self, receiver: str, delta: TableDelta) -> None:
        key = (receiver, delta.origin, delta.endpoint)
        if self._applied.get(key, -1) >= delta.version:
            return
        self._applied[key] = delta.version
        table = self.tables[receiver]
        if delta.action == "add":
            table.set(delta.endpoint, delta.origin, delta.capabilities)
        else:
            table.remove(delta.endpoint)

    def _send_update(self, delta: TableDelta, peer: str, attempt: int, report: PropagationReport) -> None:
        envelope = ClassicalEnvelope(
            session_id=CONTROL_SESSION,
            sequence=self.next_sequence(CONTROL_SESSION, delta.origin, peer),
            origin=delta.origin,
            destination=peer,
            payload_type="ROUTE_UPDATE",
            payload=delta.payload(),
        )
        try:
            outcome = send_authenticated(AuthScheme.RELAY_MEDIATED, [delta.origin, peer], envelope, self.pools, self.transport)
        except (KeyExhaustionError, NoKeyError) as e:
            raise PropagationStalled(f"update {delta.origin}>{peer} for {delta.endpoint} cannot be sent: {e.detail}")
        report.messages_sent += 1
        self._record(outcome)
        if outcome.delivered:
            report.delivered += 1
            # 只应用经过认证的内容
            self._apply(peer, TableDelta.from_payload(outcome.envelope.payload))
            return
        report.rejected += 1
        # 被拒绝更新的密钥段作废
        self.pools.settle()
        if attempt >= self.max_retransmits:
            raise PropagationStalled(
                f"update {delta.origin}>{peer} for {delta.endpoint} rejected {attempt + 1} times"
            )
        report.retransmits += 1
        self._schedule(lambda: self._send_update(delta, peer, attempt + 1, report), 1)

    def _record(self, outcome: DeliveryOutcome) -> None:
        if self.on_delivery is not None:
            self.on_delivery(outcome)

    def _schedule(self, action: Callable[[], None], delay: int) -> None:
        if self._scheduler is not None:
            self._scheduler(action, delay)
        else:
            self._queue.append((delay, action))

    def _drain(self) -> None:
        if self._run_pending is not None:
            self._run_pending()
            return
        while self._queue:
            _, action = self._queue.pop(0)
            action()

    def propagate_tables(self) -> PropagationReport:
        report = PropagationReport()
        deltas, self.pending = self.pending, []
        for delta in deltas:
            for peer in self.carols:
                if peer != delta.origin:
                    self._schedule(lambda d=delta, p=peer: self._send_update(d, p, 0, report), 0)
        self._drain()
        logger.info(
            f"Routing tables propagated: {report.delivered} delivered, {report.rejected} rejected, "
            f"{report.retransmits} retransmits"
        )
        return report

    def converged(self) -> bool:
        return all(
            {e: table.attachment_of(e) for e in table.entries} == self.attachments
            for table in self.tables.values()
        )

    def lookup_route(self, source_carol: str, alice: str, bob: str) -> Route:
        table = self._carol(source_carol)
        if table.entries.get(alice) != DIRECT:
            raise NotFoundError(f"{alice} is not attached to {source_carol}")
        hop = table.entries.get(bob)
        if hop is None:
            raise NotFoundError(f"{source_carol} cannot resolve {bob}")
        if hop == DIRECT:
            return Route((alice, source_carol, bob))
        return Route((alice, source_carol, hop, bob))

    def _exchange(self, scheme: AuthScheme, path: Sequence[str], session_id: str, payload_type: str, payload: Mapping) -> ClassicalEnvelope:
        envelope = ClassicalEnvelope(
            session_id=session_id,
            sequence=self.next_sequence(session_id, path[0], path[-1]),
            origin=path[0],
            destination=path[-1],
            payload_type=payload_type,
            payload=json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8"),
        )
        outcome = send_authenticated(scheme, path, envelope, self.pools, self.transport)
        self._record(outcome)
        if not outcome.delivered:
            raise TamperAlarm(f"{payload_type} from {path[0]} rejected at {outcome.rejected_at}: {outcome.reason}", outcome.rejected_at)
        return outcome.envelope

    def directory_list(self, carol: str, requester: str) -> DirectoryListing:
        table = self._carol(carol)
        if not self.pools.has(requester, carol):
            raise NoKeyError(f"{requester} shares no authentication key with {carol}")
        self._exchange(AuthScheme.RELAY_MEDIATED, [requester, carol], CONTROL_SESSION, "DIRECTORY_REQUEST", {"requester": requester})
        entries = tuple(
            DirectoryEntry(endpoint, table.attachment_of(endpoint), *table.capabilities[endpoint])
            for endpoint in sorted(table.entries)
        )
        self._exchange(AuthScheme.RELAY_MEDIATED, [carol, requester], CONTROL_SESSION, "DIRECTORY_RESPONSE",
                       {"endpoints": [e.endpoint for e in entries]})
        return DirectoryListing(carol=carol, entries=entries)

    def _endpoint(self, node_id: str) -> Node:
        node = self.nodes.get(node_id)
        if node is None:
            raise NotFoundError(f"endpoint {node_id} is not registered")
        return node

    def establish_session(
            self,
            alice: str,
            bob: str,
            scheme: AuthScheme,
            policy: BootstrapPolicy,
            final_key_reserve: Optional[float] = None,
            session_id: Optional[str] = None,
    ) -> SessionHandle:
        alice_node, bob_node = self._endpoint(alice), self._endpoint(bob)
        if not alice_node.can_transmit:
            raise CapabilityError(f"{alice} cannot transmit qubits")
        if not bob_node.can_receive:
            raise CapabilityError(f"{bob} cannot receive qubits")
        plan = self.bootstrap.get(tuple(sorted((alice, bob))))
        if plan is None:
            plan = BootstrapPlan(policy=policy, pair=tuple(sorted((alice, bob))))
        reserve = settings.FINAL_KEY_RESERVE if final_key_reserve is None else final_key_reserve
        terms = plan.session_terms(scheme, self.pools, reserve)

        route = self.lookup_route(self.attachments[alice], alice, bob)
        missing = set()
        for i in range(len(route.nodes)):
            for j in range(i + 1, len(route.nodes)):
                missing.update(missing_pools(terms.scheme, route.nodes[i:j + 1], self.pools))
        if missing:
            raise NoKeyError(f"{terms.scheme.value} over {'>'.join(route.nodes)} needs pools {sorted(missing)}")

        session_id = session_id or f"s{next(self._session_counter)}-{alice}-{bob}"
        path = list(route.nodes)
        self._exchange(terms.scheme, path, session_id, "SESSION_REQUEST",
                       {"alice": alice, "bob": bob, "route": path, "scheme": terms.scheme.value})
        if not bob_node.accepts_sessions:
            self._exchange(terms.scheme, path[::-1], session_id, "SESSION_DECLINE", {"bob": bob})
            raise RefusedError(f"{bob} declined the session with {alice}")
        self._exchange(terms.scheme, path[::-1], session_id, "SESSION_ACCEPT", {"bob": bob, "route": path})

        # 传播期间查到的路由可能已过期，接受时再确认一次
        if bob not in self.attachments or self.lookup_route(self.attachments[alice], alice, bob) != route:
            raise RouteLostError(f"route {'>'.join(path)} changed during establishment")

        handle = SessionHandle(session_id, alice, bob, route, terms, plan.policy)
        self.sessions[session_id] = handle
        logger.info(f"Session {session_id} established over {'>'.join(path)} with {terms.scheme.value}")
        return handle
