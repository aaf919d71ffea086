from dataclasses import dataclass
from enum import Enum
from typing import Optional

from app.models.protocol import Pair
from app.models.qubit import NOISELESS, NoiseModel


class NodeRole(str, Enum):
    ENDPOINT = "ENDPOINT"
    RELAY = "RELAY"


class LinkKind(str, Enum):
    QUANTUM = "QUANTUM"
    CLASSICAL = "CLASSICAL"


class AdversaryKind(str, Enum):
    EVE_INTERCEPT_RESEND = "EVE_INTERCEPT_RESEND"
    PASSIVE_TAP = "PASSIVE_TAP"
    TAMPER = "TAMPER"
    INJECT = "INJECT"

    @property
    def quantum(self) -> bool:
        return self is AdversaryKind.EVE_INTERCEPT_RESEND


class MultiplexPolicy(str, Enum):
    RUN_BY_RUN = "RUN_BY_RUN"
    QUBIT_BY_QUBIT = "QUBIT_BY_QUBIT"


@dataclass
class Node:
    """
    网络节点
    中继节点必须同时具备发送和接收能力（面向 Alice 的 Bob 盒子和面向 Bob 的 Alice 盒子）
    """
    id: str
    role: NodeRole
    can_transmit: bool = True
    can_receive: bool = True
    attachment: Optional[str] = None
    accepts_sessions: bool = True

    @property
    def is_relay(self) -> bool:
        return self.role is NodeRole.RELAY


@dataclass(frozen=True)
class AdversaryModel:
    """
    link 是有向的 (发送方, 接收方)；量子攻击只作用在量子链路上，其余只作用在经典链路上
    target_phase 限定被攻击的消息类型，为空表示全部
    """
    kind: AdversaryKind
    link: Pair
    fraction: float = 1.0
    target_phase: Optional[str] = None
    attempts: int = 0
    replay: bool = False

    def matches(self, sender: str, receiver: str, payload_type: str) -> bool:
        if (sender, receiver) != self.link:
            return False
        return self.target_phase is None or payload_type == self.target_phase


@dataclass
class Link:
    endpoints: Pair
    kind: LinkKind
    noise: NoiseModel = NOISELESS
    adversary: Optional[AdversaryModel] = None
