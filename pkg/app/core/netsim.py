"""
离散事件网络仿真

逻辑时钟每经过一跳经典链路前进一个刻度，每条链路上的消息先进先出、不丢失。
会话按阶段执行：量子阶段 → 基宣布 → 路由事后核对 → 基比对 → 逐对估计/纠错/放大 →
密钥池补充 → 结束消息 → 速率检查。任一阶段失败都以分类后的失败记录结束会话，之前的记录保留。
"""
import heapq
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from itertools import combinations, count
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app.core.auth import AuthenticatedSender, PoolRegistry, flip_payload_bit
from app.core.errors import (
    ConfigValidationError,
    QberAbort,
    RelayNetError,
    RouteLostError,
    RouteMismatchError,
    TamperAlarm,
)
from app.core.key_management import apply_bootstrap_policy, check_rate_compatibility, refresh_pools
from app.core.postprocessing import BACKWARD
from app.core.protocol import QuantumPhase, carol_shadow_key, derive_pair_keys, surviving_keys
from app.core.rng import Rng
from app.core.routing import CONTROL_SESSION, RoutingFabric, SessionHandle, verify_route_a_posteriori
from app.core.sifting import sift
from app.core.transcript import Transcript, key_digest, raw_digest, round_digest
from app.models.auth import AuthScheme, AuthTag, ClassicalEnvelope, TagCoverage, TagSegment, pool_key
from app.models.network import AdversaryKind, AdversaryModel, Link, LinkKind, MultiplexPolicy, Node, NodeRole
from app.models.protocol import (
    AmplificationParams,
    Chain,
    LinkAttack,
    Pair,
    PairOutcome,
    ProtocolParams,
    ReconciliationParams,
    RoundRecord,
)
from app.models.qubit import NOISELESS, NoiseModel
from app.schemas.report import PairReport, PoolReport, RouteCheckReport, ScenarioReport, SessionReport
from app.schemas.scenario import ScenarioConfig, SessionConfig, validate_config
from app.schemas.transcript import (
    InjectionRecord,
    PairAccounting,
    PhaseMarker,
    QuantumRound,
    RefreshAccounting,
    RouteCheckRecord,
    ScenarioHeader,
    SessionHeader,
    SessionOutcome,
    SiftRecord,
    TapRecord,
)

logger = logging.getLogger(__name__)


class EventLoop:
    def __init__(self, rng: Rng):
        self.rng = rng
        self.clock = 0
        self.link_traffic: Counter = Counter()
        self._queue: List[Tuple[int, int, Callable[[], None]]] = []
        self._counter = count()

    def schedule(self, action: Callable[[], None], delay: int = 0) -> None:
        heapq.heappush(self._queue, (self.clock + delay, next(self._counter), action))

    def advance(self, ticks: int = 1) -> None:
        self.clock += ticks

    def run(self) -> None:
        while self._queue:
            due, _, action = heapq.heappop(self._queue)
            self.clock = max(self.clock, due)
            action()

    @property
    def idle(self) -> bool:
        return not self._queue


@dataclass
class Network:
    config: ScenarioConfig
    nodes: Dict[str, Node]
    links: Dict[Tuple[LinkKind, Pair], Link]
    pools: PoolRegistry
    loop: EventLoop
    rng: Rng
    transcript: Transcript
    fabric: Optional[RoutingFabric] = None

    def link(self, kind: LinkKind, a: str, b: str) -> Optional[Link]:
        return self.links.get((kind, pool_key(a, b)))

    def links_of(self, kind: LinkKind) -> List[Link]:
        return [link for (k, _), link in self.links.items() if k is kind]

    @property
    def carols(self) -> List[str]:
        return [n.id for n in self.nodes.values() if n.is_relay]

    def protocol_params(self, session: SessionConfig) -> ProtocolParams:
        p = self.config.protocol
        return ProtocolParams(
            sample_fraction=p.sample_fraction,
            reconciliation=ReconciliationParams(p.block_size, p.passes, p.verification_tag_bits),
            amplification=AmplificationParams(),
            qber_threshold=session.qber_threshold,
        )


class NetworkTransport:
    """按链路上的经典攻击者处理经过的信封，并维护各节点的序号窗口"""

    def __init__(self, network: Network, session_id: str, rng: Rng):
        self.network = network
        self.session_id = session_id
        self.rng = rng
        self.seen: Dict[Tuple[str, str, str, str], int] = {}
        self.captured: Dict[Tuple[str, str, str], ClassicalEnvelope] = {}

    @property
    def clock(self) -> int:
        return self.network.loop.clock

    def carry(self, envelope: ClassicalEnvelope, sender: str, receiver: str) -> ClassicalEnvelope:
        loop = self.network.loop
        loop.advance(1)
        loop.link_traffic[(sender, receiver)] += 1
        link = self.network.link(LinkKind.CLASSICAL, sender, receiver)
        adversary = link.adversary if link else None
        if adversary is None or not adversary.matches(sender, receiver, envelope.payload_type):
            return envelope

        if adversary.kind is AdversaryKind.INJECT:
            self.captured[(sender, receiver, envelope.payload_type)] = replace(envelope, tag_chain=list(envelope.tag_chain))
            return envelope
        altered = adversary.kind is AdversaryKind.TAMPER and self.rng.bernoulli(adversary.fraction)
        if altered:
            bit = int(self.rng.random() * max(1, len(envelope.payload)) * 8)
            envelope = flip_payload_bit(envelope, bit)
            logger.debug(f"Tampered {envelope.payload_type}#{envelope.sequence} on {sender}>{receiver}")
        self.network.transcript.append(TapRecord(
            session_id=envelope.session_id,
            clock=loop.clock,
            link=[sender, receiver],
            sequence=envelope.sequence,
            payload_type=envelope.payload_type,
            altered=altered,
        ))
        return envelope

    def sequence_fresh(self, node: str, envelope: ClassicalEnvelope) -> bool:
        key = (node, envelope.session_id, envelope.origin, envelope.destination)
        return envelope.sequence > self.seen.get(key, -1)

    def accept_sequence(self, node: str, envelope: ClassicalEnvelope) -> None:
        self.seen[(node, envelope.session_id, envelope.origin, envelope.destination)] = envelope.sequence


def _star_and_mesh(config: ScenarioConfig) -> List[Pair]:
    edges = [pool_key(a, b) for a, b in combinations(config.carols, 2)]
    edges.extend(pool_key(n.id, n.attachment) for n in config.endpoints)
    return sorted(set(edges))


def build_network(config: ScenarioConfig, seed: Optional[int] = None) -> Network:
    violations = validate_config(config)
    if violations:
        raise ConfigValidationError(violations)
    seed = config.seed if seed is None else seed
    rng = Rng(seed)
    protocol = config.protocol
    nodes = {
        n.id: Node(n.id, n.role, n.can_transmit, n.can_receive,
                   n.attachment if n.role is NodeRole.ENDPOINT else None, n.accepts_sessions)
        for n in config.network.nodes
    }

    noise = {pool_key(*l.endpoints): NoiseModel(l.flip_probability) for l in config.network.links}
    links: Dict[Tuple[LinkKind, Pair], Link] = {}
    for edge in _star_and_mesh(config):
        links[(LinkKind.QUANTUM, edge)] = Link(edge, LinkKind.QUANTUM, noise.get(edge, NOISELESS))
        links[(LinkKind.CLASSICAL, edge)] = Link(edge, LinkKind.CLASSICAL)
    for a in config.adversaries:
        kind = LinkKind.QUANTUM if a.model.quantum else LinkKind.CLASSICAL
        links[(kind, pool_key(*a.link))].adversary = AdversaryModel(
            a.model, tuple(a.link), a.fraction, a.target_phase, a.attempts, a.replay,
        )

    pools = PoolRegistry(protocol.tag_bits, protocol.tag_key_cost)
    for edge in _star_and_mesh(config):
        if protocol.initial_pool_bits:
            pools.add(edge[0], edge[1], rng.derive(f"pool:{edge[0]}:{edge[1]}").bits(protocol.initial_pool_bits))

    network = Network(config, nodes, links, pools, EventLoop(rng.derive("loop")), rng, Transcript())
    network.transcript.append(ScenarioHeader(
        name=config.name, seed=seed, tag_bits=protocol.tag_bits, tag_key_cost=protocol.tag_key_cost,
    ))
    transport = NetworkTransport(network, CONTROL_SESSION, rng.derive("adversary:control"))
    network.fabric = RoutingFabric(
        config.carols, pools, transport,
        scheduler=lambda action, delay: network.loop.schedule(action, delay),
        run_pending=network.loop.run,
    )
    network.fabric.on_delivery = lambda outcome: network.transcript.record_delivery(outcome, network.loop.clock)

    preshared = {pool_key(*p.endpoints): p.bits for p in config.pools}
    plans = {}
    for session in config.sessions:
        pair = pool_key(session.alice, session.bob)
        if pair in plans:
            continue
        bits = preshared.pop(pair, None)
        seeded = rng.derive(f"preshared:{pair[0]}:{pair[1]}").bits(bits) if bits else None
        plans[pair] = apply_bootstrap_policy(session.bootstrap, pools, pair, seeded)
    for pair, bits in sorted(preshared.items()):
        if not pools.has(*pair):
            pools.add(pair[0], pair[1], rng.derive(f"preshared:{pair[0]}:{pair[1]}").bits(bits))
    network.fabric.bootstrap.update(plans)

    for endpoint in config.endpoints:
        network.fabric.register_endpoint(endpoint.attachment, nodes[endpoint.id])
    network.fabric.propagate_tables()
    logger.info(
        f"Network {config.name}: {len(nodes)} nodes, {len(network.links_of(LinkKind.QUANTUM))} quantum links, "
        f"{len(pools.pools)} pools"
    )
    return network


def _pair_name(pair: Pair) -> str:
    return f"{pair[0]}~{pair[1]}"


class EnvelopeChannel:
    """把一对节点的公开讨论作为认证信封沿会话路由发送"""

    def __init__(self, run: "SessionRun", pair: Pair):
        self.run = run
        self.path = run.subpath(*pair)

    def exchange(self, direction: str, payload_type: str, payload: Dict[str, Any]) -> None:
        path = self.path[::-1] if direction == BACKWARD else self.path
        self.run.send(path, payload_type, payload)


@dataclass
class SessionRun:
    network: Network
    handle: SessionHandle
    request: SessionConfig
    destination: Optional[str] = None
    records: List[RoundRecord] = field(default_factory=list)
    report: Optional[SessionReport] = None

    def __post_init__(self):
        self.rng = self.network.rng.derive(f"session:{self.handle.session_id}")
        self.transport = NetworkTransport(self.network, self.handle.session_id, self.rng.derive("adversary"))
        self.route = list(self.handle.route.nodes)
        self.physical = list(self.route)
        self.rogue: Optional[str] = None
        if self.request.reroute_via and self.request.reroute_via not in self.route:
            self.rogue = self.request.reroute_via
            self.physical.insert(2, self.rogue)
        self.report = SessionReport(
            session_id=self.handle.session_id, alice=self.handle.alice, bob=self.handle.bob,
            route=self.route, scheme=self.handle.scheme.value, bootstrap=self.handle.policy.value,
        )
        self.offsets_before = self.network.pools.offsets()
        self.sizes_before = self.network.pools.sizes()
        self.phase: Optional[QuantumPhase] = None
        self.failed = False
        self.chain_digest = ""

    @property
    def transcript(self) -> Transcript:
        return self.network.transcript

    def _marker(self, phase: str) -> None:
        self.transcript.append(PhaseMarker(session_id=self.handle.session_id, phase=phase, clock=self.network.loop.clock))

    def subpath(self, a: str, b: str) -> List[str]:
        if a == self.rogue or b == self.rogue:
            diverter = self.route[1]
            if a == self.rogue:
                return [a] + self.subpath(diverter, b) if b != diverter else [a, b]
            return self.subpath(a, diverter) + [b] if a != diverter else [a, b]
        i, j = self.route.index(a), self.route.index(b)
        return self.route[i:j + 1] if i < j else self.route[j:i + 1][::-1]

    def send(self, path: Sequence[str], payload_type: str, payload: Dict[str, Any], scheme: Optional[AuthScheme] = None) -> ClassicalEnvelope:
        origin, destination = path[0], path[-1]
        envelope = ClassicalEnvelope(
            session_id=self.handle.session_id,
            sequence=self.network.fabric.next_sequence(self.handle.session_id, origin, destination),
            origin=origin,
            destination=destination,
            payload_type=payload_type,
            payload=json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8"),
        )
        sender = AuthenticatedSender(scheme or self.handle.scheme, path, self.network.pools, self.transport)
        outcome = sender.send(envelope)
        self.transcript.record_delivery(outcome, self.network.loop.clock)
        if not outcome.delivered:
            raise TamperAlarm(
                f"{payload_type} from {origin} to {destination} rejected at {outcome.rejected_at}: {outcome.reason}",
                outcome.rejected_at,
            )
        return outcome.envelope

    def _checkpoint(self, phase: str) -> None:
        if self.request.deregister_after == phase:
            bob = self.handle.bob
            self.network.fabric.deregister_endpoint(self.network.fabric.attachments[bob], bob)
            self.network.fabric.propagate_tables()
        if self.handle.route_lost:
            raise RouteLostError(f"{self.handle.bob} left the network during session {self.handle.session_id}")

    def _quantum_attack(self) -> Optional[LinkAttack]:
        for hop, (a, b) in enumerate(zip(self.physical, self.physical[1:])):
            link = self.network.link(LinkKind.QUANTUM, a, b)
            if link is not None and link.adversary is not None and set(link.adversary.link) == {a, b}:
                return LinkAttack(hop, link.adversary.fraction)
        return None

    def start(self) -> None:
        self.transcript.append(SessionHeader(
            session_id=self.handle.session_id, alice=self.handle.alice, bob=self.handle.bob,
            route=self.route, chain=self.physical, scheme=self.handle.scheme.value,
            tag_bits=self.network.pools.tag_bits, tag_key_cost=self.network.pools.tag_key_cost,
            rounds=self.request.rounds,
        ))
        self._marker("quantum")
        noise = []
        for a, b in zip(self.physical, self.physical[1:]):
            link = self.network.link(LinkKind.QUANTUM, a, b)
            noise.append(link.noise if link else NOISELESS)
        try:
            self._checkpoint("establish")
            self.phase = QuantumPhase(Chain(tuple(self.physical)), noise, self.rng, self._quantum_attack(), self.network.nodes)
        except RelayNetError as e:
            self._fail(e)

    def step(self) -> None:
        if self.phase is None:
            return
        record = self.phase.step(self.destination)
        self.records.append(record)
        bits = "".join(str(b) for b in record.bits)
        self.chain_digest = round_digest(
            self.chain_digest, record.round_index, record.pattern, bits, record.intercepted, record.destination,
        )
        self.transcript.append(QuantumRound.model_construct(
            kind="round",
            session_id=self.handle.session_id,
            round_index=record.round_index,
            bases=record.pattern,
            bits=bits,
            intercepted=record.intercepted,
            destination=record.destination,
            digest=self.chain_digest,
        ))

    def finish(self) -> SessionReport:
        if not self.failed:
            try:
                self._classical()
            except RelayNetError as e:
                self._fail(e)
        self.network.pools.settle()
        if self.handle.state == "established":
            self.handle.state = "closed"
        self.transcript.append(SessionOutcome(
            session_id=self.handle.session_id, status=self.report.status,
            failure_class=self.report.failure_class, detail=self.report.detail,
        ))
        logger.info(f"Session {self.handle.session_id} finished: {self.report.status} {self.report.failure_class or ''}".rstrip())
        return self.report

    def _fail(self, error: RelayNetError) -> None:
        self.failed = True
        self.report.status = "FAILED"
        self.report.failure_class = error.failure_class
        self.report.detail = error.detail
        level = logging.WARNING if isinstance(error, (TamperAlarm, RouteMismatchError, QberAbort)) else logging.INFO
        logger.log(level, f"Session {self.handle.session_id} failed with {error.failure_class}: {error.detail}")

    def _announce(self) -> List[str]:
        self._marker("announce")
        announcers = [n for n in self.physical if n != self.request.silent_relay]
        for position, node in enumerate(self.physical):
            if node not in announcers:
                continue
            bases = "".join(r.bases[position].value for r in self.records)
            for recipient in self.physical:
                if recipient == node:
                    continue
                # 路由外的中继只和网状邻居共享密钥，只能逐跳认证
                scheme = AuthScheme.RELAY_MEDIATED if self.rogue in (node, recipient) else None
                self.send(self.subpath(node, recipient), "ANNOUNCE", {"node": node, "bases": bases}, scheme)
        self._inject()
        alice = self.handle.alice
        heard = [
            h.origin for h in self.transcript.of_kind("hop", self.handle.session_id)
            if h.action == "delivered" and h.payload_type == "ANNOUNCE" and h.destination == alice
        ]
        return [n for n in heard if n not in (alice, self.handle.bob)]

    def _forge(self, path: Sequence[str], at_index: int, payload_type: str) -> ClassicalEnvelope:
        pools = self.network.pools
        scheme = self.handle.scheme
        if scheme is AuthScheme.RELAY_MEDIATED:
            authors = [at_index - 1]
        elif scheme is AuthScheme.END_TO_END:
            authors = [0]
        else:
            authors = list(range(at_index))
        width = (pools.tag_bits + 3) // 4
        tags = []
        for index in authors:
            author = path[index]
            if scheme is AuthScheme.RELAY_MEDIATED:
                verifiers = [path[index + 1]]
            elif scheme is AuthScheme.END_TO_END:
                verifiers = [path[-1]]
            else:
                verifiers = list(path[index + 1:])
            segments = []
            for verifier in verifiers:
                pool = pools.get(author, verifier)
                offset = pool.views[verifier] if pool else 0
                forged = self.transport.rng.seed_material() % (1 << pools.tag_bits)
                segments.append(TagSegment(verifier, offset, format(forged, f"0{width}x")))
            covers = TagCoverage.PAYLOAD_AND_PRIOR_TAGS if scheme is AuthScheme.FULL_CHAIN else TagCoverage.PAYLOAD
            tags.append(AuthTag(author, covers, tuple(segments)))
        return ClassicalEnvelope(
            session_id=self.handle.session_id,
            sequence=self.network.fabric.next_sequence(self.handle.session_id, path[0], path[-1]),
            origin=path[0],
            destination=path[-1],
            payload_type=payload_type,
            payload=json.dumps({"node": path[0], "bases": "".join("XY"[int(b)] for b in self.transport.rng.bits(64))},
                               separators=(",", ":")).encode("utf-8"),
            tag_chain=tags,
        )

    def _inject(self) -> None:
        for link in self.network.links_of(LinkKind.CLASSICAL):
            adversary = link.adversary
            if adversary is None or adversary.kind is not AdversaryKind.INJECT:
                continue
            u, v = adversary.link
            path = None
            for candidate in (self.route, self.route[::-1]):
                if u in candidate and v in candidate and candidate.index(v) == candidate.index(u) + 1:
                    path = candidate
            if path is None:
                continue
            payload_type = adversary.target_phase or "ANNOUNCE"
            at_index = path.index(v)
            sender = AuthenticatedSender(self.handle.scheme, path, self.network.pools, self.transport)
            accepted = 0
            attempts = 0
            for _ in range(adversary.attempts):
                if adversary.replay:
                    envelope = self.transport.captured.get((u, v, payload_type))
                    if envelope is None:
                        break
                    envelope = replace(envelope, tag_chain=list(envelope.tag_chain))
                else:
                    envelope = self._forge(path, at_index, payload_type)
                outcome = sender.inject(envelope, at_index)
                self.transcript.record_delivery(outcome, self.network.loop.clock)
                attempts += 1
                accepted += int(outcome.delivered)
            self.transcript.append(InjectionRecord(
                session_id=self.handle.session_id, link=[u, v], attempts=attempts, accepted=accepted,
                replay=adversary.replay,
            ))
            self.report.forgeries_attempted += attempts
            self.report.forgeries_accepted += accepted
            logger.info(f"Injected {attempts} envelopes on {u}>{v}, {accepted} accepted")

    def _classical(self) -> None:
        handle = self.handle
        self._checkpoint("quantum")
        announcers = self._announce()
        self._checkpoint("announce")

        check = verify_route_a_posteriori(announcers, handle.route)
        self.transcript.append(RouteCheckRecord(
            session_id=handle.session_id, expected=list(check.expected), announcers=list(check.announcers),
            ok=check.ok, extra=list(check.extra), missing=list(check.missing),
        ))
        self.report.route_check = RouteCheckReport(
            ok=check.ok, expected=list(check.expected), announcers=list(check.announcers),
            extra=list(check.extra), missing=list(check.missing),
        )
        if not check.ok:
            raise RouteMismatchError(f"announcers {list(check.announcers)} do not match route interior {list(check.expected)}")

        self._marker("sift")
        chain = handle.route.chain
        assignment = sift(self.records)
        counts = assignment.pattern_counts(chain)
        pair_rounds: Dict[str, int] = {}
        raw_digests: Dict[str, str] = {}
        for span, rounds in sorted(assignment.pair_rounds().items()):
            name = _pair_name(chain.pair(span))
            pair_rounds[name] = len(rounds)
            raw_digests[name] = raw_digest(
                "".join(str(self.records[r].bits[span[0]]) for r in rounds),
                "".join(str(self.records[r].bits[span[1]]) for r in rounds),
            )
        n = len(self.records)
        self.transcript.append(SiftRecord(
            session_id=handle.session_id, rounds=n, unused=len(assignment.unused_rounds),
            group_counts=dict(sorted(counts.items())), pair_rounds=pair_rounds, raw_digests=raw_digests,
        ))
        self.report.rounds = n
        self.report.group_counts = dict(sorted(counts.items()))
        self.report.group_fractions = {label: c / n for label, c in sorted(counts.items())}
        self.report.usable_fraction = assignment.usable_fraction
        self._checkpoint("sift")

        self._marker("derive")
        params = self.network.protocol_params(self.request)
        outcomes = derive_pair_keys(
            self.records, assignment, params, self.rng, chain,
            channel_factory=lambda pair: EnvelopeChannel(self, pair),
        )
        for outcome in outcomes.values():
            self._account(outcome)
        endpoints = (handle.alice, handle.bob)
        endpoint_outcome = outcomes.get(endpoints)
        if endpoint_outcome is not None and endpoint_outcome.failure == "qber-abort":
            raise QberAbort(
                f"{handle.alice}~{handle.bob} qber {endpoint_outcome.qber:.4f} exceeds {params.qber_threshold}",
                endpoint_outcome.qber,
            )
        self._checkpoint("derive")

        self._marker("refresh")
        keys = surviving_keys(outcomes)
        refresh = refresh_pools(
            keys, self.network.pools, handle.terms.final_key_reserve, endpoints, handle.session_id,
            divert_all=handle.terms.divert_all,
        )
        endpoint_bits = len(keys[endpoints]) if endpoints in keys else 0
        self.transcript.append(RefreshAccounting(
            session_id=handle.session_id,
            pool_growth={_pair_name(p): g for p, g in sorted(refresh.pool_growth.items())},
            endpoint_key_bits=endpoint_bits, reserve_bits=refresh.reserve_bits, secret_bits=refresh.secret_bits,
        ))
        self.report.endpoint_key_bits = endpoint_bits
        self.report.reserve_bits = refresh.reserve_bits
        self.report.secret_bits = refresh.secret_bits

        if endpoint_outcome is not None and endpoint_outcome.ok:
            for position, relay in enumerate(chain.nodes):
                if relay in chain.interior:
                    _, distance = carol_shadow_key(
                        self.records, assignment, endpoint_outcome.discussion, position, endpoint_outcome.key.bits,
                    )
                    self.report.shadow_distance[relay] = distance

        self.send(self.route, "END", {"session": handle.session_id, "secret_bits": refresh.secret_bits})
        self.network.pools.settle()
        self._rates(keys, refresh.reserve_bits, refresh.pool_growth)

    def _account(self, outcome: PairOutcome) -> None:
        name = _pair_name(outcome.pair)
        fields = dict(
            pair=name, rounds=outcome.rounds, raw_bits=outcome.raw_bits, disclosed=outcome.disclosed,
            reconciliation_input=outcome.reconciliation_input, leakage_bits=outcome.leakage_bits,
            amplification_input=outcome.amplification_input, compression=outcome.compression,
            final_bits=outcome.final_bits, qber=outcome.qber, failure=outcome.failure,
            key_digest=key_digest(outcome.key.bits) if outcome.ok else None,
        )
        self.transcript.append(PairAccounting(session_id=self.handle.session_id, **fields))
        self.report.pairs.append(PairReport(**fields))

    def _rates(self, keys, reserve_bits: int, growth: Dict[Pair, int]) -> None:
        pools = self.network.pools
        on_route = set(self.route)
        consumed = {}
        for pair, pool in pools.pools.items():
            if set(pair) <= on_route:
                consumed[pair] = pool.consumed_offset - self.offsets_before.get(pair, 0)
        endpoints = pool_key(self.handle.alice, self.handle.bob)
        generation = {pool_key(*p): len(k) for p, k in keys.items()}
        rate_consumption = dict(consumed)
        rate_consumption[endpoints] = max(consumed.get(endpoints, 0), reserve_bits)
        report = check_rate_compatibility(rate_consumption, generation, self.handle.scheme, endpoints)
        for rate in report.pools:
            pool = pools.pools.get(rate.pair)
            self.report.pools.append(PoolReport(
                pair=_pair_name(rate.pair),
                size_before=self.sizes_before.get(rate.pair, 0),
                size_after=int(pool.bits.size) if pool else 0,
                consumed=consumed.get(rate.pair, 0),
                growth=growth.get(rate.pair, 0),
                generation=rate.generation,
                rate_consumption=rate.consumption,
                flag=rate.flag.value,
                net_rate=rate.net_rate,
                net_flag=rate.net_flag.value if rate.net_flag else None,
            ))


def establish(network: Network, index: int, request: SessionConfig) -> Tuple[Optional[SessionHandle], Optional[SessionReport]]:
    session_id = f"s{index + 1}-{request.alice}-{request.bob}"
    try:
        handle = network.fabric.establish_session(
            request.alice, request.bob, request.scheme, request.bootstrap, request.final_key_reserve, session_id,
        )
        return handle, None
    except RelayNetError as e:
        logger.info(f"Session {session_id} not established: {e.failure_class}: {e.detail}")
        network.transcript.append(SessionHeader(
            session_id=session_id, alice=request.alice, bob=request.bob, route=[], chain=[],
            scheme=request.scheme.value, tag_bits=network.pools.tag_bits,
            tag_key_cost=network.pools.tag_key_cost, rounds=request.rounds,
        ))
        network.transcript.append(SessionOutcome(
            session_id=session_id, status="FAILED", failure_class=e.failure_class, detail=e.detail,
        ))
        return None, SessionReport(
            session_id=session_id, alice=request.alice, bob=request.bob, scheme=request.scheme.value,
            bootstrap=request.bootstrap.value, status="FAILED", failure_class=e.failure_class, detail=e.detail,
        )


def run_session(network: Network, handle: SessionHandle, request: SessionConfig) -> SessionReport:
    run = SessionRun(network, handle, request)
    run.start()
    for _ in range(request.rounds if run.phase else 0):
        run.step()
    return run.finish()


def multiplex_sessions(network: Network, requests: Sequence[SessionConfig], policy: MultiplexPolicy) -> List[SessionReport]:
    """
    RUN_BY_RUN：按顺序逐个完整执行，每个会话在轮到它时才建立
    QUBIT_BY_QUBIT：先建立全部会话，量子轮次按轮转交替并带上目的地标签，之后依次完成经典阶段
    """
    reports: List[Optional[SessionReport]] = [None] * len(requests)
    if policy is MultiplexPolicy.RUN_BY_RUN:
        for index, request in enumerate(requests):
            handle, failed = establish(network, index, request)
            reports[index] = failed or run_session(network, handle, request)
        return reports

    runs: List[Tuple[int, SessionRun]] = []
    for index, request in enumerate(requests):
        handle, failed = establish(network, index, request)
        if failed:
            reports[index] = failed
            continue
        run = SessionRun(network, handle, request, destination=request.bob)
        run.start()
        runs.append((index, run))
    remaining = {index: run.request.rounds if run.phase else 0 for index, run in runs}
    while any(remaining.values()):
        for index, run in runs:
            if remaining[index]:
                run.step()
                remaining[index] -= 1
    for index, run in runs:
        reports[index] = run.finish()
    return reports


def run_scenario(config: ScenarioConfig, seed: Optional[int] = None) -> Tuple[ScenarioReport, Transcript]:
    network = build_network(config, seed)
    sessions = multiplex_sessions(network, config.sessions, config.multiplex)
    report = ScenarioReport(
        name=config.name,
        seed=config.seed if seed is None else seed,
        multiplex=config.multiplex.value,
        sessions=sessions,
    )
    return report, network.transcript
