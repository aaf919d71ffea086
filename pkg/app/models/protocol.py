from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import MalformedInputError
from app.models.qubit import Basis

Pair = Tuple[str, str]
Span = Tuple[int, int]


@dataclass(frozen=True)
class Chain:
    nodes: Tuple[str, ...]

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise MalformedInputError(f"a chain needs at least 2 nodes, got {len(self.nodes)}")
        if len(set(self.nodes)) != len(self.nodes):
            raise MalformedInputError(f"chain node ids must be distinct: {list(self.nodes)}")

    @property
    def interior(self) -> Tuple[str, ...]:
        return self.nodes[1:-1]

    @property
    def hops(self) -> List[Pair]:
        return list(zip(self.nodes, self.nodes[1:]))

    def pair(self, span: Span) -> Pair:
        return self.nodes[span[0]], self.nodes[span[1]]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class LinkAttack:
    """量子链路上的截获重发攻击；hop 为链上的跳序号（0 表示第一个节点到第二个节点）"""
    hop: int
    fraction: float = 1.0


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    bases: Tuple[Basis, ...]
    bits: Tuple[int, ...]
    intercepted: bool = False
    destination: Optional[str] = None

    @property
    def pattern(self) -> str:
        return "".join(b.value for b in self.bases)


@dataclass(frozen=True)
class Beneficiary:
    first: int
    last: int

    @property
    def span(self) -> Span:
        return self.first, self.last

    @property
    def knowers(self) -> Tuple[int, ...]:
        return tuple(range(self.first + 1, self.last))


@dataclass
class GroupAssignment:
    chain_length: int
    rounds: List[Tuple[Beneficiary, ...]]

    def pair_rounds(self) -> Dict[Span, List[int]]:
        result: Dict[Span, List[int]] = {}
        for index, beneficiaries in enumerate(self.rounds):
            for b in beneficiaries:
                result.setdefault(b.span, []).append(index)
        return result

    @property
    def unused_rounds(self) -> List[int]:
        return [i for i, bs in enumerate(self.rounds) if not bs]

    @property
    def usable_fraction(self) -> float:
        if not self.rounds:
            return 0.0
        return 1.0 - len(self.unused_rounds) / len(self.rounds)

    def pattern_counts(self, chain: Optional[Chain] = None) -> Counter:
        """按每轮受益对组合计数，各类别划分全部轮次"""
        counts: Counter = Counter()
        for bs in self.rounds:
            counts[group_label(bs, chain)] += 1
        return counts


def group_label(beneficiaries: Sequence[Beneficiary], chain: Optional[Chain] = None) -> str:
    if not beneficiaries:
        return "unused"
    parts = []
    for b in beneficiaries:
        if chain is None:
            parts.append(f"{b.first}~{b.last}")
        else:
            first, last = chain.pair(b.span)
            parts.append(f"{first}~{last}")
    return "|".join(parts)


@dataclass(eq=False)
class PairKey:
    pair: Pair
    bits: np.ndarray
    qber_estimate: float
    leakage_bits: int

    def __post_init__(self):
        if self.leakage_bits < 0:
            raise ValueError("leakage_bits must be non-negative")

    def __len__(self) -> int:
        return int(self.bits.size)


@dataclass(frozen=True)
class ReconciliationParams:
    block_size_initial: int = 32
    passes: int = 6
    verification_tag_bits: int = 64

    def __post_init__(self):
        if self.block_size_initial < 1:
            raise ValueError("block_size_initial must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


CompressionRule = Callable[[int, float, int], int]


@dataclass(frozen=True)
class AmplificationParams:
    compression_function: Optional[CompressionRule] = None
    hash_seed: Optional[int] = None


@dataclass(frozen=True)
class ProtocolParams:
    sample_fraction: float = 0.25
    reconciliation: ReconciliationParams = field(default_factory=ReconciliationParams)
    amplification: AmplificationParams = field(default_factory=AmplificationParams)
    qber_threshold: Optional[float] = None


@dataclass(eq=False)
class EstimationResult:
    qber: float
    remaining_a: np.ndarray
    remaining_b: np.ndarray
    disclosed: int
    positions: np.ndarray


@dataclass(eq=False)
class PassDisclosure:
    """一轮奇偶校验公开的信息：置换、块大小、参考方顶层奇偶和二分定位出的位置"""
    permutation: Optional[np.ndarray]
    block_size: int
    reference_parities: np.ndarray
    located: List[Tuple[int, int]] = field(default_factory=list)
    parities_disclosed: int = 0


@dataclass(eq=False)
class ReconciliationResult:
    key_a: Optional[np.ndarray]
    key_b: Optional[np.ndarray]
    leakage_bits: int
    aborted: bool
    passes: List[PassDisclosure]
    messages: int = 0

    @property
    def reconciled(self) -> Optional[np.ndarray]:
        return None if self.aborted else self.key_a


@dataclass(eq=False)
class PublicDiscussion:
    """一对节点在经典信道上公开的全部内容，供第三方重放"""
    pair: Pair
    rounds: List[int]
    estimation_positions: np.ndarray
    passes: List[PassDisclosure]
    amplification_seed: int
    output_length: int


@dataclass(eq=False)
class PairOutcome:
    pair: Pair
    span: Span
    rounds: int
    raw_bits: int
    disclosed: int = 0
    reconciliation_input: int = 0
    leakage_bits: int = 0
    amplification_input: int = 0
    compression: int = 0
    final_bits: int = 0
    qber: Optional[float] = None
    key: Optional[PairKey] = None
    failure: Optional[str] = None
    discussion: Optional[PublicDiscussion] = None

    @property
    def ok(self) -> bool:
        return self.failure is None and self.key is not None
