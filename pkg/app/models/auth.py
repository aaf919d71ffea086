from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.protocol import Pair


class AuthScheme(str, Enum):
    RELAY_MEDIATED = "RELAY_MEDIATED"
    END_TO_END = "END_TO_END"
    FULL_CHAIN = "FULL_CHAIN"


class BootstrapPolicy(str, Enum):
    TRUST_CAROL_ALWAYS = "TRUST_CAROL_ALWAYS"
    FIRST_RUN_BOOTSTRAP = "FIRST_RUN_BOOTSTRAP"
    OUT_OF_BAND_PRESHARED = "OUT_OF_BAND_PRESHARED"


class TagCoverage(str, Enum):
    PAYLOAD = "payload"
    PAYLOAD_AND_PRIOR_TAGS = "payload+prior-tags"


def pool_key(a: str, b: str) -> Pair:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TagSegment:
    verifier: str
    key_offset: int
    tag_bits: str


@dataclass(frozen=True)
class AuthTag:
    """一个作者的认证码；FULL_CHAIN 下包含给每个下游节点各一段"""
    author: str
    covers: TagCoverage
    segments: Tuple[TagSegment, ...]

    def segment_for(self, verifier: str) -> Optional[TagSegment]:
        return next((s for s in self.segments if s.verifier == verifier), None)

    @property
    def tag_bits(self) -> str:
        return self.segments[0].tag_bits


@dataclass
class ClassicalEnvelope:
    session_id: str
    sequence: int
    origin: str
    destination: str
    payload_type: str
    payload: bytes
    tag_chain: List[AuthTag] = field(default_factory=list)

    def header_bytes(self) -> bytes:
        return f"{self.session_id}|{self.sequence}|{self.origin}|{self.destination}|{self.payload_type}|".encode("utf-8")

    def digest_input(self, covers: TagCoverage, prior: Tuple[AuthTag, ...] = ()) -> bytes:
        body = self.header_bytes() + self.payload
        if covers is TagCoverage.PAYLOAD_AND_PRIOR_TAGS:
            for tag in prior:
                body += b"|" + tag.author.encode("utf-8")
                for segment in tag.segments:
                    body += f":{segment.verifier}:{segment.key_offset}:{segment.tag_bits}".encode("utf-8")
        return body


@dataclass
class AuthKeyPool:
    """
    两个节点共享的认证密钥池
    views 记录每个持有者已消耗到的位置；静止时双方一致
    """
    pair: Pair
    bits: np.ndarray
    views: Dict[str, int]
    refresh_log: List[Tuple[str, int]] = field(default_factory=list)
    segments: List[Tuple[int, int]] = field(default_factory=list)

    @classmethod
    def create(cls, a: str, b: str, bits: np.ndarray) -> "AuthKeyPool":
        pair = pool_key(a, b)
        return cls(pair=pair, bits=bits.astype(np.uint8), views={pair[0]: 0, pair[1]: 0})

    @property
    def consumed_offset(self) -> int:
        return max(self.views.values())

    @property
    def remaining(self) -> int:
        return int(self.bits.size) - self.consumed_offset

    def remaining_for(self, owner: str) -> int:
        return int(self.bits.size) - self.views[owner]

    def other(self, owner: str) -> str:
        return self.pair[1] if owner == self.pair[0] else self.pair[0]

    def settle(self) -> None:
        offset = self.consumed_offset
        for owner in self.views:
            self.views[owner] = offset

    def append(self, session_id: str, bits: np.ndarray) -> None:
        self.bits = np.concatenate([self.bits, bits.astype(np.uint8)])
        self.refresh_log.append((session_id, int(bits.size)))
