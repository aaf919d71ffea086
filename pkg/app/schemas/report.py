from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class PairReport(BaseModel):
    pair: str
    rounds: int = Field(ge=0)
    raw_bits: int = Field(ge=0)
    disclosed: int = Field(ge=0)
    reconciliation_input: int = Field(ge=0)
    leakage_bits: int = Field(ge=0)
    amplification_input: int = Field(ge=0)
    compression: int = Field(ge=0)
    final_bits: int = Field(ge=0)
    qber: Optional[float] = None
    failure: Optional[str] = None
    key_digest: Optional[str] = Field(default=None, description="最终密钥的 BLAKE2b 指纹")


class PoolReport(BaseModel):
    pair: str
    size_before: int = Field(ge=0)
    size_after: int = Field(ge=0)
    consumed: int = Field(ge=0, description="本次会话消耗的标签密钥")
    growth: int = Field(ge=0)
    generation: int = Field(ge=0)
    rate_consumption: int = Field(ge=0, description="速率检查采用的消耗量")
    flag: str
    net_rate: Optional[int] = None
    net_flag: Optional[str] = None


class RouteCheckReport(BaseModel):
    ok: bool
    expected: List[str]
    announcers: List[str]
    extra: List[str] = Field(default_factory=list)
    missing: List[str] = Field(default_factory=list)


class SessionReport(BaseModel):
    session_id: str
    alice: str
    bob: str
    route: List[str] = Field(default_factory=list)
    scheme: Optional[str] = None
    bootstrap: Optional[str] = None
    rounds: int = Field(0, ge=0)
    group_counts: Dict[str, int] = Field(default_factory=dict)
    group_fractions: Dict[str, float] = Field(default_factory=dict)
    usable_fraction: float = 0.0
    pairs: List[PairReport] = Field(default_factory=list)
    pools: List[PoolReport] = Field(default_factory=list)
    endpoint_key_bits: int = Field(0, ge=0)
    reserve_bits: int = Field(0, ge=0)
    secret_bits: int = Field(0, ge=0)
    route_check: Optional[RouteCheckReport] = None
    shadow_distance: Dict[str, int] = Field(default_factory=dict, description="各中继重建的 Alice~Bob 密钥与真实密钥的汉明距离")
    forgeries_attempted: int = Field(0, ge=0)
    forgeries_accepted: int = Field(0, ge=0)
    status: str = "ok"
    failure_class: Optional[str] = None
    detail: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class ScenarioReport(BaseModel):
    name: str
    seed: int
    multiplex: str
    sessions: List[SessionReport] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.sessions)
