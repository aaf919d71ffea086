from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field


class ScenarioHeader(BaseModel):
    kind: Literal["scenario"] = "scenario"
    name: str
    seed: int
    tag_bits: int
    tag_key_cost: int


class SessionHeader(BaseModel):
    kind: Literal["session"] = "session"
    session_id: str
    alice: str
    bob: str
    route: List[str]
    chain: List[str] = Field(description="量子比特实际经过的节点，诚实运行时等于 route")
    scheme: str
    tag_bits: int
    tag_key_cost: int
    rounds: int


class PhaseMarker(BaseModel):
    kind: Literal["phase"] = "phase"
    session_id: str
    phase: str
    clock: int


class QuantumRound(BaseModel):
    kind: Literal["round"] = "round"
    session_id: str
    round_index: int
    bases: str
    bits: str
    intercepted: bool = False
    destination: Optional[str] = None
    digest: str = Field(default="", description="本会话到这一轮为止的链式摘要")


class TagRecord(BaseModel):
    author: str
    covers: str
    segments: List[List[Union[str, int]]] = Field(description="[verifier, key_offset, tag_bits]")


class EnvelopeHop(BaseModel):
    kind: Literal["hop"] = "hop"
    session_id: str
    clock: int
    sequence: int
    origin: str
    destination: str
    payload_type: str
    payload: str = Field(description="latin-1 解码的载荷")
    node: str
    action: str
    author: Optional[str] = None
    verifier: Optional[str] = None
    key_offset: Optional[int] = None
    key_segment: Optional[str] = None
    tag_bits: Optional[str] = None
    covers: Optional[str] = None
    prior_tags: List[TagRecord] = Field(default_factory=list)
    ok: Optional[bool] = None
    reason: Optional[str] = None


class TapRecord(BaseModel):
    kind: Literal["tap"] = "tap"
    session_id: str
    clock: int
    link: List[str]
    sequence: int
    payload_type: str
    altered: bool = False


class InjectionRecord(BaseModel):
    kind: Literal["inject"] = "inject"
    session_id: str
    link: List[str]
    attempts: int
    accepted: int
    replay: bool = False


class RouteCheckRecord(BaseModel):
    kind: Literal["route-check"] = "route-check"
    session_id: str
    expected: List[str]
    announcers: List[str]
    ok: bool
    extra: List[str] = Field(default_factory=list)
    missing: List[str] = Field(default_factory=list)


class SiftRecord(BaseModel):
    kind: Literal["sift"] = "sift"
    session_id: str
    rounds: int
    unused: int
    group_counts: Dict[str, int]
    pair_rounds: Dict[str, int]
    raw_digests: Dict[str, str] = Field(default_factory=dict, description="每对节点两端原始比特的摘要")


class PairAccounting(BaseModel):
    kind: Literal["pair"] = "pair"
    session_id: str
    pair: str
    rounds: int
    raw_bits: int
    disclosed: int
    reconciliation_input: int
    leakage_bits: int
    amplification_input: int
    compression: int
    final_bits: int
    qber: Optional[float] = None
    failure: Optional[str] = None
    key_digest: Optional[str] = None


class RefreshAccounting(BaseModel):
    kind: Literal["refresh"] = "refresh"
    session_id: str
    pool_growth: Dict[str, int]
    endpoint_key_bits: int
    reserve_bits: int
    secret_bits: int


class SessionOutcome(BaseModel):
    kind: Literal["outcome"] = "outcome"
    session_id: str
    status: str
    failure_class: Optional[str] = None
    detail: Optional[str] = None


TranscriptRecord = Union[
    ScenarioHeader,
    SessionHeader,
    PhaseMarker,
    QuantumRound,
    EnvelopeHop,
    TapRecord,
    InjectionRecord,
    RouteCheckRecord,
    SiftRecord,
    PairAccounting,
    RefreshAccounting,
    SessionOutcome,
]

RECORD_TYPES = {
    model.model_fields["kind"].default: model
    for model in (
        ScenarioHeader, SessionHeader, PhaseMarker, QuantumRound, EnvelopeHop, TapRecord, InjectionRecord,
        RouteCheckRecord, SiftRecord, PairAccounting, RefreshAccounting, SessionOutcome,
    )
}
