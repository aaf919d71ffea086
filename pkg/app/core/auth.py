"""
经典信道认证

三种认证码放置方式：
- RELAY_MEDIATED：逐跳认证，每个中继验证上一跳的认证码后剥离，并用下一跳的密钥重新签
- END_TO_END：起点用与终点共享的密钥签一次，中继只转发
- FULL_CHAIN：每个节点验证已有的全部认证码，再追加自己的（覆盖消息和之前的认证码）
"""
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import KeyExhaustionError, NoKeyError
from app.core.security import compute_tag, tags_equal
from app.models.auth import (
    AuthKeyPool,
    AuthScheme,
    AuthTag,
    ClassicalEnvelope,
    TagCoverage,
    TagSegment,
    pool_key,
)
from app.models.protocol import Pair

logger = logging.getLogger(__name__)


class PoolRegistry:
    def __init__(self, tag_bits: Optional[int] = None, tag_key_cost: Optional[int] = None):
        self.tag_bits = tag_bits or settings.TAG_BITS
        self.tag_key_cost = tag_key_cost or settings.TAG_KEY_COST
        self.pools: Dict[Pair, AuthKeyPool] = {}

    def get(self, a: str, b: str) -> Optional[AuthKeyPool]:
        return self.pools.get(pool_key(a, b))

    def require(self, a: str, b: str) -> AuthKeyPool:
        pool = self.get(a, b)
        if pool is None:
            raise NoKeyError(f"{a} and {b} share no authentication key")
        return pool

    def has(self, a: str, b: str) -> bool:
        return pool_key(a, b) in self.pools

    def add(self, a: str, b: str, bits: np.ndarray) -> AuthKeyPool:
        pool = AuthKeyPool.create(a, b, bits)
        self.pools[pool.pair] = pool
        return pool

    def ensure(self, a: str, b: str) -> AuthKeyPool:
        return self.get(a, b) or self.add(a, b, np.zeros(0, dtype=np.uint8))

    def settle(self) -> None:
        for pool in self.pools.values():
            pool.settle()

    def offsets(self) -> Dict[Pair, int]:
        return {pair: pool.consumed_offset for pair, pool in self.pools.items()}

    def sizes(self) -> Dict[Pair, int]:
        return {pair: int(pool.bits.size) for pair, pool in self.pools.items()}


def make_tag(
        pool: AuthKeyPool,
        message_digest_input: bytes,
        author: str,
        verifier: Optional[str] = None,
        covers: TagCoverage = TagCoverage.PAYLOAD,
        tag_bits: Optional[int] = None,
        cost: Optional[int] = None,
) -> AuthTag:
    tag_bits = tag_bits or settings.TAG_BITS
    cost = cost or settings.TAG_KEY_COST
    verifier = verifier or pool.other(author)
    offset = pool.views[author]
    if pool.bits.size - offset < cost:
        raise KeyExhaustionError(
            f"pool {pool.pair[0]}~{pool.pair[1]} has {pool.bits.size - offset} bits left, a tag needs {cost}"
        )
    segment = pool.bits[offset:offset + cost]
    pool.views[author] = offset + cost
    pool.segments.append((offset, offset + cost))
    return AuthTag(author=author, covers=covers, segments=(TagSegment(verifier, offset, compute_tag(segment, message_digest_input, tag_bits)),))


def segment_hex(pool: AuthKeyPool, offset: int, cost: int) -> Optional[str]:
    """密钥段的十六进制形式，写入记录供重放；越界时为 None"""
    if offset < 0 or offset + cost > pool.bits.size:
        return None
    return np.packbits(pool.bits[offset:offset + cost]).tobytes().hex()


def verify_tag(
        pool: Optional[AuthKeyPool],
        message_digest_input: bytes,
        tag: AuthTag,
        verifier: Optional[str] = None,
        tag_bits: Optional[int] = None,
        cost: Optional[int] = None,
) -> bool:
    if pool is None or tag.author not in pool.views:
        raise NoKeyError(f"no shared pool with author {tag.author}")
    tag_bits = tag_bits or settings.TAG_BITS
    cost = cost or settings.TAG_KEY_COST
    verifier = verifier or pool.other(tag.author)
    segment = tag.segment_for(verifier)
    if segment is None:
        return False
    # 已用过的密钥段不再接受
    if segment.key_offset < pool.views[verifier] or segment.key_offset + cost > pool.bits.size:
        return False
    key = pool.bits[segment.key_offset:segment.key_offset + cost]
    if not tags_equal(compute_tag(key, message_digest_input, tag_bits), segment.tag_bits):
        return False
    pool.views[verifier] = segment.key_offset + cost
    return True


def required_pools(scheme: AuthScheme, path: Sequence[str]) -> Set[Pair]:
    if len(path) < 2:
        return set()
    if scheme is AuthScheme.RELAY_MEDIATED:
        return {pool_key(a, b) for a, b in zip(path, path[1:])}
    if scheme is AuthScheme.END_TO_END:
        return {pool_key(path[0], path[-1])}
    return {pool_key(a, b) for a, b in combinations(path, 2)}


def missing_pools(scheme: AuthScheme, path: Sequence[str], pools: PoolRegistry) -> List[Pair]:
    return sorted(pair for pair in required_pools(scheme, path) if pair not in pools.pools)


@dataclass
class HopRecord:
    node: str
    action: str
    payload: bytes
    payload_type: str
    author: Optional[str] = None
    verifier: Optional[str] = None
    key_offset: Optional[int] = None
    key_segment: Optional[str] = None
    tag_bits: Optional[str] = None
    covers: Optional[TagCoverage] = None
    prior_tags: Tuple[AuthTag, ...] = ()
    ok: Optional[bool] = None
    reason: Optional[str] = None


@dataclass
class DeliveryOutcome:
    delivered: bool
    rejected_at: Optional[str] = None
    reason: Optional[str] = None
    hops: List[HopRecord] = field(default_factory=list)
    envelope: Optional[ClassicalEnvelope] = None

    @property
    def tags_verified_at_destination(self) -> int:
        if not self.delivered or self.envelope is None:
            return 0
        return sum(1 for h in self.hops if h.node == self.envelope.destination and h.action == "verified" and h.ok)


class Transport(Protocol):
    def carry(self, envelope: ClassicalEnvelope, sender: str, receiver: str) -> ClassicalEnvelope:
        ...

    def sequence_fresh(self, node: str, envelope: ClassicalEnvelope) -> bool:
        ...

    def accept_sequence(self, node: str, envelope: ClassicalEnvelope) -> None:
        ...


class DirectTransport:
    """无时钟的直连传输；tamper 中的链路 (发送方, 接收方) 上每条消息的首字节最低位被翻转"""

    def __init__(self, tamper: Iterable[Pair] = ()):
        self.tamper = set(tamper)
        self.seen: Dict[Tuple[str, str, str, str], int] = {}

    def carry(self, envelope: ClassicalEnvelope, sender: str, receiver: str) -> ClassicalEnvelope:
        if (sender, receiver) in self.tamper:
            return flip_payload_bit(envelope)
        return envelope

    def sequence_fresh(self, node: str, envelope: ClassicalEnvelope) -> bool:
        key = (node, envelope.session_id, envelope.origin, envelope.destination)
        return envelope.sequence > self.seen.get(key, -1)

    def accept_sequence(self, node: str, envelope: ClassicalEnvelope) -> None:
        self.seen[(node, envelope.session_id, envelope.origin, envelope.destination)] = envelope.sequence


def flip_payload_bit(envelope: ClassicalEnvelope, bit_index: int = 0) -> ClassicalEnvelope:
    payload = bytearray(envelope.payload or b"\x00")
    payload[(bit_index // 8) % len(payload)] ^= 1 << (bit_index % 8)
    return replace(envelope, payload=bytes(payload), tag_chain=list(envelope.tag_chain))


class AuthenticatedSender:
    """按方案沿路径逐跳投递一个信封"""

    def __init__(self, scheme: AuthScheme, path: Sequence[str], pools: PoolRegistry, transport: Transport):
        self.scheme = scheme
        self.path = list(path)
        self.pools = pools
        self.transport = transport

    def _tag(self, author: str, verifiers: Sequence[str], envelope: ClassicalEnvelope, hops: List[HopRecord]) -> AuthTag:
        covers = TagCoverage.PAYLOAD_AND_PRIOR_TAGS if self.scheme is AuthScheme.FULL_CHAIN else TagCoverage.PAYLOAD
        digest_input = envelope.digest_input(covers, tuple(envelope.tag_chain))
        segments = []
        for verifier in verifiers:
            pool = self.pools.require(author, verifier)
            tag = make_tag(pool, digest_input, author, verifier, covers, self.pools.tag_bits, self.pools.tag_key_cost)
            segments.extend(tag.segments)
            hops.append(HopRecord(
                node=author, action="tagged", payload=envelope.payload, payload_type=envelope.payload_type,
                author=author, verifier=verifier, key_offset=tag.segments[0].key_offset,
                key_segment=segment_hex(pool, tag.segments[0].key_offset, self.pools.tag_key_cost),
                tag_bits=tag.segments[0].tag_bits, covers=covers, prior_tags=tuple(envelope.tag_chain),
            ))
        return AuthTag(author=author, covers=covers, segments=tuple(segments))

    def _verify(self, node: str, envelope: ClassicalEnvelope, tag: AuthTag, prior: Tuple[AuthTag, ...], hops: List[HopRecord]) -> bool:
        pool = self.pools.require(tag.author, node)
        digest_input = envelope.digest_input(tag.covers, prior)
        segment = tag.segment_for(node)
        key_hex = None
        # 只记录可能通过校验的密钥段，过期或越界的偏移直接失败
        if segment is not None and segment.key_offset >= pool.views[node]:
            key_hex = segment_hex(pool, segment.key_offset, self.pools.tag_key_cost)
        ok = verify_tag(pool, digest_input, tag, node, self.pools.tag_bits, self.pools.tag_key_cost)
        hops.append(HopRecord(
            node=node, action="verified", payload=envelope.payload, payload_type=envelope.payload_type,
            author=tag.author, verifier=node,
            key_offset=segment.key_offset if segment else None, key_segment=key_hex,
            tag_bits=segment.tag_bits if segment else None, covers=tag.covers, prior_tags=prior, ok=ok,
        ))
        return ok

    def _downstream(self, index: int) -> List[str]:
        if self.scheme is AuthScheme.RELAY_MEDIATED:
            return [self.path[index + 1]]
        if self.scheme is AuthScheme.END_TO_END:
            return [self.path[-1]] if index == 0 else []
        return self.path[index + 1:]

    def send(self, envelope: ClassicalEnvelope) -> DeliveryOutcome:
        missing = missing_pools(self.scheme, self.path, self.pools)
        if missing:
            raise NoKeyError(f"{self.scheme.value} over {'>'.join(self.path)} needs pools {missing}")
        hops: List[HopRecord] = []
        envelope = replace(envelope, tag_chain=[])
        envelope.tag_chain.append(self._tag(self.path[0], self._downstream(0), envelope, hops))
        return self._traverse(1, envelope, hops)

    def inject(self, envelope: ClassicalEnvelope, at_index: int) -> DeliveryOutcome:
        """从 path[at_index - 1] → path[at_index] 这条链路注入一个信封"""
        return self._traverse(at_index, envelope, [])

    def _reject(self, node: str, reason: str, envelope: ClassicalEnvelope, hops: List[HopRecord]) -> DeliveryOutcome:
        hops.append(HopRecord(node=node, action="rejected", payload=envelope.payload,
                              payload_type=envelope.payload_type, ok=False, reason=reason))
        logger.warning(f"Envelope {envelope.session_id}#{envelope.sequence} rejected at {node}: {reason}")
        return DeliveryOutcome(delivered=False, rejected_at=node, reason=reason, hops=hops, envelope=envelope)

    def _traverse(self, start: int, envelope: ClassicalEnvelope, hops: List[HopRecord]) -> DeliveryOutcome:
        last = len(self.path) - 1
        for index in range(start, last + 1):
            sender, node = self.path[index - 1], self.path[index]
            envelope = self.transport.carry(envelope, sender, node)
            verifying = self.scheme is not AuthScheme.END_TO_END or index == last

            if verifying:
                if not self.transport.sequence_fresh(node, envelope):
                    return self._reject(node, "replay", envelope, hops)
                if self.scheme is AuthScheme.FULL_CHAIN:
                    to_check = list(enumerate(envelope.tag_chain))
                else:
                    to_check = [(len(envelope.tag_chain) - 1, envelope.tag_chain[-1])] if envelope.tag_chain else []
                if not to_check:
                    return self._reject(node, "missing-tag", envelope, hops)
                for position, tag in to_check:
                    prior = tuple(envelope.tag_chain[:position])
                    try:
                        ok = self._verify(node, envelope, tag, prior, hops)
                    except NoKeyError:
                        return self._reject(node, "unknown-author", envelope, hops)
                    if not ok:
                        return self._reject(node, "tag-mismatch", envelope, hops)
                self.transport.accept_sequence(node, envelope)
            else:
                hops.append(HopRecord(node=node, action="forwarded", payload=envelope.payload,
                                      payload_type=envelope.payload_type))

            if index == last:
                hops.append(HopRecord(node=node, action="delivered", payload=envelope.payload,
                                      payload_type=envelope.payload_type, ok=True))
                return DeliveryOutcome(delivered=True, hops=hops, envelope=envelope)

            if self.scheme is AuthScheme.RELAY_MEDIATED:
                envelope = replace(envelope, tag_chain=[])
            downstream = self._downstream(index)
            if downstream:
                envelope.tag_chain.append(self._tag(node, downstream, envelope, hops))
        raise AssertionError("path traversal ended without delivery")


def send_authenticated(
        scheme: AuthScheme,
        route: Sequence[str],
        envelope: ClassicalEnvelope,
        pools: PoolRegistry,
        transport: Optional[Transport] = None,
) -> DeliveryOutcome:
    return AuthenticatedSender(scheme, route, pools, transport or DirectTransport()).send(envelope)
