"""
认证密钥池的补充、速率检查和初始认证策略

补充规则：涉及中继的节点对把整把会话密钥追加进对应密钥池；
Alice~Bob 只把 final_key_reserve 比例的密钥放进池子，其余作为本次会话的秘密输出。
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional

import numpy as np

from app.core.auth import PoolRegistry
from app.core.errors import MalformedInputError, NoKeyError
from app.models.auth import AuthScheme, BootstrapPolicy, pool_key
from app.models.protocol import Pair, PairKey

logger = logging.getLogger(__name__)


@dataclass
class RefreshRecord:
    session_id: str
    pool_growth: Dict[Pair, int] = field(default_factory=dict)
    reserve_bits: int = 0
    secret_bits: int = 0
    secret_key: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))


def refresh_pools(
        session_keys: Mapping[Pair, PairKey],
        pools: PoolRegistry,
        final_key_reserve: float,
        endpoints: Pair,
        session_id: str = "",
        divert_all: bool = False,
) -> RefreshRecord:
    if not 0.0 <= final_key_reserve <= 1.0:
        raise MalformedInputError(f"final_key_reserve must lie in [0, 1], got {final_key_reserve}")
    record = RefreshRecord(session_id=session_id)
    endpoint_pair = pool_key(*endpoints)

    for pair, key in sorted(session_keys.items()):
        if pool_key(*pair) != endpoint_pair:
            pools.ensure(*pair).append(session_id, key.bits)
            record.pool_growth[pool_key(*pair)] = len(key)
            continue
        reserve = len(key) if divert_all else int(round(final_key_reserve * len(key)))
        if reserve:
            pools.ensure(*pair).append(session_id, key.bits[:reserve])
            record.pool_growth[endpoint_pair] = reserve
        record.reserve_bits = reserve
        record.secret_key = key.bits[reserve:].copy()
        record.secret_bits = len(key) - reserve

    logger.debug(f"Session {session_id} refreshed {len(record.pool_growth)} pools, secret output {record.secret_bits} bits")
    return record


class RateFlag(str, Enum):
    SUSTAINABLE = "SUSTAINABLE"
    UNSUSTAINABLE = "UNSUSTAINABLE"


class NetFlag(str, Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


@dataclass
class PoolRate:
    pair: Pair
    generation: int
    consumption: int
    flag: RateFlag
    net_rate: Optional[int] = None
    net_flag: Optional[NetFlag] = None


@dataclass
class RateReport:
    scheme: AuthScheme
    pools: List[PoolRate]

    def for_pair(self, a: str, b: str) -> Optional[PoolRate]:
        key = pool_key(a, b)
        return next((p for p in self.pools if p.pair == key), None)

    @property
    def sustainable(self) -> bool:
        return all(p.flag is RateFlag.SUSTAINABLE for p in self.pools if p.net_flag is None)


def check_rate_compatibility(
        consumption: Mapping[Pair, int],
        generation: Mapping[Pair, int],
        scheme: AuthScheme,
        endpoints: Pair,
) -> RateReport:
    """
    consumption 与 generation 都是单次会话的比特数
    Alice~Bob 的 consumption 应为标签消耗与预留量中的较大者
    """
    endpoint_pair = pool_key(*endpoints)
    consumption = {pool_key(*p): n for p, n in consumption.items()}
    generation = {pool_key(*p): n for p, n in generation.items()}
    # RELAY_MEDIATED 下 Alice~Bob 不消耗认证密钥，但仍报告净速率
    pairs = sorted(set(consumption) | set(generation) | {endpoint_pair})

    rates = []
    for pair in pairs:
        used = consumption.get(pair, 0)
        made = generation.get(pair, 0)
        flag = RateFlag.SUSTAINABLE if used <= made else RateFlag.UNSUSTAINABLE
        rate = PoolRate(pair=pair, generation=made, consumption=used, flag=flag)
        if pair == endpoint_pair:
            rate.net_rate = made - used
            rate.net_flag = NetFlag.POSITIVE if rate.net_rate > 0 else NetFlag.NEGATIVE
        elif flag is RateFlag.UNSUSTAINABLE:
            logger.warning(f"Pool {pair[0]}~{pair[1]} consumes {used} bits per session but gains {made}")
        rates.append(rate)
    return RateReport(scheme=scheme, pools=rates)


@dataclass
class SessionTerms:
    scheme: AuthScheme
    final_key_reserve: float
    divert_all: bool = False


@dataclass
class BootstrapPlan:
    policy: BootstrapPolicy
    pair: Pair
    actions: List[str] = field(default_factory=list)

    def session_terms(self, requested: AuthScheme, pools: PoolRegistry, final_key_reserve: float) -> SessionTerms:
        has_pool = pools.has(*self.pair)
        if self.policy is BootstrapPolicy.TRUST_CAROL_ALWAYS:
            if requested is not AuthScheme.RELAY_MEDIATED:
                raise NoKeyError(f"{requested.value} needs an {self.pair[0]}~{self.pair[1]} pool, which TRUST_CAROL_ALWAYS never creates")
            return SessionTerms(AuthScheme.RELAY_MEDIATED, 0.0)
        if self.policy is BootstrapPolicy.FIRST_RUN_BOOTSTRAP and not has_pool:
            if requested is not AuthScheme.RELAY_MEDIATED:
                logger.info(f"Pair {self.pair[0]}~{self.pair[1]} has no pool yet, bootstrap session runs RELAY_MEDIATED")
            return SessionTerms(AuthScheme.RELAY_MEDIATED, 0.0, divert_all=True)
        if requested is AuthScheme.RELAY_MEDIATED and not has_pool:
            return SessionTerms(requested, 0.0)
        return SessionTerms(requested, final_key_reserve)


def apply_bootstrap_policy(
        policy: BootstrapPolicy,
        pools: PoolRegistry,
        pair: Pair,
        preshared: Optional[np.ndarray] = None,
) -> BootstrapPlan:
    pair = pool_key(*pair)
    plan = BootstrapPlan(policy=policy, pair=pair)
    if policy is BootstrapPolicy.TRUST_CAROL_ALWAYS:
        if pools.has(*pair):
            raise MalformedInputError(f"TRUST_CAROL_ALWAYS forbids an {pair[0]}~{pair[1]} pool")
        plan.actions.append("no-endpoint-pool")
    elif policy is BootstrapPolicy.FIRST_RUN_BOOTSTRAP:
        plan.actions.extend(["first-session-relay-mediated", "divert-first-key"])
    else:
        if preshared is None or preshared.size == 0:
            raise NoKeyError(f"OUT_OF_BAND_PRESHARED needs seeded bits for {pair[0]}~{pair[1]}")
        if not pools.has(*pair):
            pools.add(pair[0], pair[1], preshared)
        plan.actions.append(f"seeded {preshared.size} bits")
    logger.debug(f"Bootstrap {policy.value} for {pair[0]}~{pair[1]}: {plan.actions}")
    return plan
