"""
基比对（sifting）

每轮取相邻基相同的极大连续段，长度 >= 2 的段以两端节点为受益对，段内部节点也知道该比特。
对三节点链，这恰好给出四组：(a) 全同 → Alice~Bob；(b) Alice=Carol≠Bob → Alice~Carol；
(c) Carol=Bob≠Alice → Carol~Bob；(d) Alice=Bob≠Carol → 不可用。
"""
from typing import Dict, List, Sequence, Tuple

from app.core.errors import MalformedInputError
from app.models.protocol import Beneficiary, GroupAssignment, RoundRecord, Span
from app.models.qubit import Basis

# 三节点链的分组表
THREE_CHAIN_GROUPS: Dict[Tuple[Span, ...], str] = {
    ((0, 2),): "a",
    ((0, 1),): "b",
    ((1, 2),): "c",
    (): "d",
}


def maximal_runs(bases: Sequence[Basis]) -> Tuple[Beneficiary, ...]:
    runs: List[Beneficiary] = []
    start = 0
    for position in range(1, len(bases) + 1):
        if position == len(bases) or bases[position] != bases[start]:
            if position - start >= 2:
                runs.append(Beneficiary(start, position - 1))
            start = position
    return tuple(runs)


def sift(records: Sequence[RoundRecord]) -> GroupAssignment:
    if not records:
        raise MalformedInputError("cannot sift an empty record list")
    length = len(records[0].bases)
    rounds = []
    for record in records:
        if len(record.bases) != length or len(record.bits) != length:
            raise MalformedInputError(
                f"round {record.round_index} has {len(record.bases)} bases and {len(record.bits)} bits, expected {length}"
            )
        rounds.append(maximal_runs(record.bases))
    return GroupAssignment(chain_length=length, rounds=rounds)


def three_chain_group(beneficiaries: Sequence[Beneficiary]) -> str:
    return THREE_CHAIN_GROUPS[tuple(b.span for b in beneficiaries)]
