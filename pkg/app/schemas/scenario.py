"""
场景配置

YAML 文本，分为 network / pools / sessions / adversaries / protocol 几节，外加唯一的 seed。
省略的字段取 settings 中的默认值。
"""
from itertools import combinations
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.config import settings
from app.core.errors import ConfigSyntaxError, ConfigValidationError
from app.models.auth import AuthScheme, BootstrapPolicy
from app.models.network import AdversaryKind, MultiplexPolicy, NodeRole


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NodeConfig(StrictModel):
    id: str = Field(min_length=1)
    role: NodeRole
    can_transmit: bool = True
    can_receive: bool = True
    attachment: Optional[Union[str, List[str]]] = Field(None, description="端点所连接的 Carol，只能有一个")
    accepts_sessions: bool = True


class LinkConfig(StrictModel):
    endpoints: Tuple[str, str]
    flip_probability: float = Field(0.0, ge=0.0, le=1.0)


class NetworkConfig(StrictModel):
    nodes: List[NodeConfig]
    links: List[LinkConfig] = Field(default_factory=list, description="量子链路噪声，未列出的链路无噪声")


class PoolConfig(StrictModel):
    endpoints: Tuple[str, str]
    bits: int = Field(ge=1)


class SessionConfig(StrictModel):
    alice: str
    bob: str
    rounds: int = Field(default_factory=lambda: settings.DEFAULT_ROUNDS, ge=1)
    scheme: AuthScheme = AuthScheme.RELAY_MEDIATED
    bootstrap: BootstrapPolicy = BootstrapPolicy.TRUST_CAROL_ALWAYS
    final_key_reserve: float = Field(default_factory=lambda: settings.FINAL_KEY_RESERVE, ge=0.0, le=1.0)
    qber_threshold: float = Field(default_factory=lambda: settings.QBER_ABORT_THRESHOLD, ge=0.0, le=1.0)
    reroute_via: Optional[str] = Field(None, description="路由上第一个中继暗中把量子比特转给这个 Carol")
    silent_relay: Optional[str] = Field(None, description="不宣布基的中继")
    deregister_after: Optional[str] = Field(None, description="在该阶段结束后注销 Bob")


class AdversaryConfig(StrictModel):
    model: AdversaryKind
    link: Tuple[str, str]
    fraction: float = Field(1.0, ge=0.0, le=1.0)
    target_phase: Optional[str] = None
    attempts: int = Field(0, ge=0)
    replay: bool = False


class ProtocolConfig(StrictModel):
    tag_bits: int = Field(default_factory=lambda: settings.TAG_BITS, ge=8, le=120)
    tag_key_cost: int = Field(default_factory=lambda: settings.TAG_KEY_COST, ge=2)
    initial_pool_bits: int = Field(default_factory=lambda: settings.INITIAL_POOL_BITS, ge=0)
    sample_fraction: float = Field(default_factory=lambda: settings.ESTIMATION_SAMPLE_FRACTION, gt=0.0, lt=1.0)
    block_size: int = Field(default_factory=lambda: settings.RECONCILIATION_BLOCK_SIZE, ge=1)
    passes: int = Field(default_factory=lambda: settings.RECONCILIATION_PASSES, ge=1)
    verification_tag_bits: int = Field(default_factory=lambda: settings.VERIFICATION_TAG_BITS, ge=8, le=120)


class ScenarioConfig(StrictModel):
    name: str = "scenario"
    seed: int = Field(ge=0, lt=1 << 64)
    network: NetworkConfig
    pools: List[PoolConfig] = Field(default_factory=list, description="线下预共享的认证密钥")
    sessions: List[SessionConfig] = Field(default_factory=list)
    multiplex: MultiplexPolicy = MultiplexPolicy.RUN_BY_RUN
    adversaries: List[AdversaryConfig] = Field(default_factory=list)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)

    def node(self, node_id: str) -> Optional[NodeConfig]:
        return next((n for n in self.network.nodes if n.id == node_id), None)

    @property
    def carols(self) -> List[str]:
        return [n.id for n in self.network.nodes if n.role is NodeRole.RELAY]

    @property
    def endpoints(self) -> List[NodeConfig]:
        return [n for n in self.network.nodes if n.role is NodeRole.ENDPOINT]


SESSION_PHASES = ("quantum", "announce", "sift", "derive")


def _edges(config: ScenarioConfig) -> set:
    edges = {frozenset(pair) for pair in combinations(config.carols, 2)}
    for node in config.endpoints:
        if isinstance(node.attachment, str):
            edges.add(frozenset((node.id, node.attachment)))
    return edges


def validate_config(config: ScenarioConfig) -> List[str]:
    """返回全部语义错误，每条带位置"""
    violations = []
    ids = [n.id for n in config.network.nodes]
    seen = set()
    for i, node_id in enumerate(ids):
        if node_id in seen:
            violations.append(f"network.nodes[{i}].id: duplicate id {node_id}")
        seen.add(node_id)
    carols = set(config.carols)
    known = set(ids)

    for i, node in enumerate(config.network.nodes):
        where = f"network.nodes[{i}]"
        if node.role is NodeRole.RELAY:
            if node.attachment is not None:
                violations.append(f"{where}.attachment: relay {node.id} cannot be attached")
            if not (node.can_transmit and node.can_receive):
                violations.append(f"{where}: relay {node.id} must both transmit and receive")
            continue
        attachment = node.attachment
        if attachment is None:
            violations.append(f"{where}.attachment: endpoint {node.id} is not attached to any carol")
        elif isinstance(attachment, list):
            if len(attachment) != 1:
                violations.append(f"{where}.attachment: endpoint {node.id} is attached to {len(attachment)} carols")
            for carol in attachment:
                if carol not in carols:
                    violations.append(f"{where}.attachment: undefined carol {carol}")
        elif attachment not in carols:
            violations.append(f"{where}.attachment: undefined carol {attachment}")

    edges = _edges(config)
    for i, link in enumerate(config.network.links):
        for node_id in link.endpoints:
            if node_id not in known:
                violations.append(f"network.links[{i}].endpoints: undefined node {node_id}")
        if set(link.endpoints) <= known and frozenset(link.endpoints) not in edges:
            violations.append(f"network.links[{i}].endpoints: {link.endpoints[0]}-{link.endpoints[1]} is not a star or mesh edge")

    for i, pool in enumerate(config.pools):
        for node_id in pool.endpoints:
            if node_id not in known:
                violations.append(f"pools[{i}].endpoints: undefined node {node_id}")
        if pool.endpoints[0] == pool.endpoints[1]:
            violations.append(f"pools[{i}].endpoints: a pool needs two distinct nodes")

    policies = {}
    for i, session in enumerate(config.sessions):
        where = f"sessions[{i}]"
        for field_name in ("alice", "bob"):
            node = config.node(getattr(session, field_name))
            if node is None:
                violations.append(f"{where}.{field_name}: undefined node {getattr(session, field_name)}")
            elif node.role is not NodeRole.ENDPOINT:
                violations.append(f"{where}.{field_name}: {node.id} is not an endpoint")
        if session.alice == session.bob:
            violations.append(f"{where}: alice and bob must differ")
        for field_name in ("reroute_via", "silent_relay"):
            value = getattr(session, field_name)
            if value is not None and value not in carols:
                violations.append(f"{where}.{field_name}: undefined carol {value}")
        if session.deregister_after is not None and session.deregister_after not in SESSION_PHASES:
            violations.append(f"{where}.deregister_after: unknown phase {session.deregister_after}")
        pair = tuple(sorted((session.alice, session.bob)))
        if policies.setdefault(pair, session.bootstrap) is not session.bootstrap:
            violations.append(f"{where}.bootstrap: pair {pair[0]}~{pair[1]} already uses {policies[pair].value}")
        preshared = any(set(p.endpoints) == set(pair) for p in config.pools)
        if session.bootstrap is BootstrapPolicy.OUT_OF_BAND_PRESHARED and not preshared:
            violations.append(f"{where}.bootstrap: OUT_OF_BAND_PRESHARED needs a pools entry for {pair[0]}~{pair[1]}")
        if session.bootstrap is not BootstrapPolicy.OUT_OF_BAND_PRESHARED and preshared:
            violations.append(f"{where}.bootstrap: {session.bootstrap.value} forbids a preshared {pair[0]}~{pair[1]} pool")

    occupied: Dict[Tuple[bool, FrozenSet[str]], int] = {}
    for i, adversary in enumerate(config.adversaries):
        where = f"adversaries[{i}]"
        # 每条链路的每个平面（量子/经典）最多一个攻击者
        slot = (adversary.model.quantum, frozenset(adversary.link))
        if slot in occupied:
            violations.append(
                f"{where}.link: {adversary.link[0]}-{adversary.link[1]} already has an adversary "
                f"(adversaries[{occupied[slot]}])"
            )
        occupied.setdefault(slot, i)
        for node_id in adversary.link:
            if node_id not in known:
                violations.append(f"{where}.link: undefined node {node_id}")
        if set(adversary.link) <= known and frozenset(adversary.link) not in edges:
            violations.append(f"{where}.link: {adversary.link[0]}-{adversary.link[1]} is not a network edge")
        if adversary.model is AdversaryKind.INJECT and adversary.attempts == 0:
            violations.append(f"{where}.attempts: INJECT needs at least one attempt")
    return violations


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigSyntaxError([f"yaml: {e}"])
    if not isinstance(data, dict):
        raise ConfigSyntaxError(["scenario must be a mapping"])
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError([
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
        ])
    violations = validate_config(config)
    if violations:
        raise ConfigValidationError(violations)
    return config


def render_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
