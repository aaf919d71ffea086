from itertools import product

import pytest

from app.core.errors import MalformedInputError
from app.core.rng import Rng
from app.core.sifting import maximal_runs, sift, three_chain_group
from app.models.protocol import Chain, RoundRecord
from app.models.qubit import Basis


def record(index, pattern, bits=None):
    bases = tuple(Basis(c) for c in pattern)
    return RoundRecord(index, bases, tuple(bits or (0,) * len(bases)))


def expected_three_chain_group(alice, carol, bob):
    if alice == carol == bob:
        return "a"
    if alice == carol:
        return "b"
    if carol == bob:
        return "c"
    return "d"


def test_three_chain_case_table_is_exhaustive():
    for pattern in product("XY", repeat=3):
        runs = maximal_runs([Basis(c) for c in pattern])
        assert three_chain_group(runs) == expected_three_chain_group(*pattern), pattern


def test_all_equal_round_lets_carol_know_the_bit():
    (run,) = maximal_runs([Basis.X, Basis.X, Basis.X])
    assert run.span == (0, 2)
    assert run.knowers == (1,)


def test_alice_equals_bob_round_is_unused():
    assert maximal_runs([Basis.X, Basis.Y, Basis.X]) == ()


def test_four_chain_uses_fourteen_of_sixteen_patterns():
    usable = [p for p in product("XY", repeat=4) if maximal_runs([Basis(c) for c in p])]
    assert len(usable) == 14
    unused = {"".join(p) for p in product("XY", repeat=4)} - {"".join(p) for p in usable}
    assert unused == {"XYXY", "YXYX"}


def test_four_chain_pairs_by_pattern():
    chain = Chain(("alice", "carol1", "carol2", "bob"))
    assignment = sift([record(0, "XXYY"), record(1, "XXXY"), record(2, "YXXX"), record(3, "XYYX")])
    spans = [[b.span for b in r] for r in assignment.rounds]
    assert spans == [[(0, 1), (2, 3)], [(0, 2)], [(1, 3)], [(1, 2)]]
    counts = assignment.pattern_counts(chain)
    assert counts["alice~carol1|carol2~bob"] == 1
    assert counts["carol1~carol2"] == 1


def test_four_chain_usable_fraction_is_seven_eighths():
    n = 100000
    rng = Rng(12)
    bits = rng.bits(4 * n).reshape(n, 4)
    records = [RoundRecord(i, tuple(Basis.X if b else Basis.Y for b in row), (0, 0, 0, 0)) for i, row in enumerate(bits.tolist())]
    assignment = sift(records)
    assert abs(assignment.usable_fraction - 0.875) <= 0.01
    pairs = assignment.pair_rounds()
    assert abs(len(pairs[(0, 3)]) / n - 0.125) <= 0.01
    assert set(pairs) == {(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)}


def test_group_counts_partition_all_rounds():
    records = [record(i, "".join(p)) for i, p in enumerate(product("XY", repeat=3))]
    assignment = sift(records)
    counts = assignment.pattern_counts(Chain(("alice", "carol", "bob")))
    assert sum(counts.values()) == 8
    assert counts["unused"] == 2
    assert counts["alice~bob"] == 2
    assert assignment.usable_fraction == 0.75


def test_sift_rejects_bad_input():
    with pytest.raises(MalformedInputError):
        sift([])
    with pytest.raises(MalformedInputError):
        sift([record(0, "XXX"), record(1, "XX")])
