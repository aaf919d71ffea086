import math

import numpy as np
import pytest

from app.core.errors import MalformedInputError, ReconciliationAbort
from app.core.protocol import carol_shadow_key, derive_pair_keys, run_quantum_phase, surviving_keys
from app.core.rng import Rng
from app.core.sifting import sift
from app.models.protocol import Chain, ProtocolParams, ReconciliationParams, RoundRecord
from app.models.qubit import NOISELESS, Basis, NoiseModel

THREE = Chain(("alice", "carol", "bob"))
FOUR = Chain(("alice", "carol1", "carol2", "bob"))


def derive(chain, rounds, seed, noise=NOISELESS, params=None):
    records = run_quantum_phase(chain, rounds, noise, None, Rng(seed))
    assignment = sift(records)
    outcomes = derive_pair_keys(records, assignment, params or ProtocolParams(), Rng(seed).derive("derive"), chain)
    return records, assignment, outcomes


def assert_accounting(outcome):
    assert outcome.raw_bits == outcome.rounds
    assert outcome.raw_bits == outcome.disclosed + outcome.reconciliation_input
    assert outcome.amplification_input - outcome.compression == outcome.final_bits
    assert outcome.final_bits == len(outcome.key)


def test_three_chain_yields_three_keys():
    n = 80000
    _, assignment, outcomes = derive(THREE, n, 21)
    keys = surviving_keys(outcomes)
    assert set(keys) == {("alice", "carol"), ("carol", "bob"), ("alice", "bob")}
    sigma = math.sqrt(n * 0.25 * 0.75)
    for pair, outcome in outcomes.items():
        assert abs(outcome.rounds - n / 4) <= 4 * sigma, pair
        assert outcome.qber == 0.0
        assert len(keys[pair]) > 0
        assert_accounting(outcome)
    assert abs(assignment.usable_fraction - 0.75) <= 0.01


def test_four_chain_yields_six_keys():
    n = 160000
    _, assignment, outcomes = derive(FOUR, n, 22)
    keys = surviving_keys(outcomes)
    assert set(keys) == {
        ("alice", "carol1"), ("alice", "carol2"), ("alice", "bob"),
        ("carol1", "carol2"), ("carol1", "bob"), ("carol2", "bob"),
    }
    assert abs(outcomes[("alice", "bob")].rounds / n - 0.125) <= 0.01
    assert abs(assignment.usable_fraction - 0.875) <= 0.01
    for outcome in outcomes.values():
        assert_accounting(outcome)


def test_fixed_bases_leave_no_endpoint_key():
    pattern = (Basis.X, Basis.Y, Basis.X)
    rng = Rng(23)
    records = [RoundRecord(i, pattern, (rng.bit(), rng.bit(), rng.bit())) for i in range(500)]
    outcomes = derive_pair_keys(records, sift(records), ProtocolParams(), Rng(24), THREE)
    assert ("alice", "bob") not in outcomes
    assert outcomes == {}


def test_qber_threshold_aborts_a_pair():
    params = ProtocolParams(qber_threshold=0.11)
    _, _, outcomes = derive(THREE, 4000, 25, noise=NoiseModel(0.2), params=params)
    endpoint = outcomes[("alice", "bob")]
    assert endpoint.failure == "qber-abort"
    assert endpoint.key is None
    assert endpoint.qber > 0.11


def test_record_count_must_match_assignment():
    records = run_quantum_phase(THREE, 20, NOISELESS, None, Rng(26))
    with pytest.raises(MalformedInputError):
        derive_pair_keys(records[:10], sift(records), ProtocolParams(), Rng(26), THREE)


def test_shadow_key_equals_endpoint_key_when_noiseless():
    records, assignment, outcomes = derive(THREE, 8000, 27)
    endpoint = outcomes[("alice", "bob")]
    shadow, distance = carol_shadow_key(records, assignment, endpoint.discussion, 1, endpoint.key.bits)
    assert distance == 0
    assert np.array_equal(shadow, endpoint.key.bits)


def test_four_chain_both_relays_reconstruct_the_key():
    records, assignment, outcomes = derive(FOUR, 16000, 28)
    endpoint = outcomes[("alice", "bob")]
    for position in (1, 2):
        _, distance = carol_shadow_key(records, assignment, endpoint.discussion, position, endpoint.key.bits)
        assert distance == 0


def test_shadow_key_needs_an_interior_position():
    records, assignment, outcomes = derive(THREE, 2000, 29)
    endpoint = outcomes[("alice", "bob")]
    with pytest.raises(MalformedInputError):
        carol_shadow_key(records, assignment, endpoint.discussion, 2)


def shadow_distances(noise, rounds, seeds):
    distances = []
    for seed in seeds:
        records, assignment, outcomes = derive(THREE, rounds, seed, noise=noise)
        endpoint = outcomes[("alice", "bob")]
        if endpoint.ok:
            _, distance = carol_shadow_key(records, assignment, endpoint.discussion, 1, endpoint.key.bits)
            distances.append(distance)
    return distances


def test_noisy_hops_usually_leave_carol_off_by_a_few_bits():
    # Carol 只在两跳都翻转的位置上与 Alice 不同而 Bob 相同，纠错不会替她改正
    distances = shadow_distances(NoiseModel(0.02), 20000, range(100, 200))
    assert len(distances) >= 95
    assert sum(d > 0 for d in distances) > len(distances) / 2
    assert min(distances) == 0


@pytest.mark.parametrize("noise", [
    [NOISELESS, NoiseModel(0.02)],
    [NoiseModel(0.02), NOISELESS],
], ids=["carol-bob", "alice-carol"])
def test_noise_on_one_hop_leaves_the_shadow_exact(noise):
    # 只有一跳有噪声时，Carol 的比特总与 Alice 或 Bob 之一相同，二分定位恰好补齐差异
    distances = shadow_distances(noise, 12000, range(300, 400))
    assert len(distances) >= 95
    assert set(distances) == {0}


def test_reconciliation_abort_drops_the_pair():
    params = ProtocolParams(reconciliation=ReconciliationParams(block_size_initial=1 << 16, passes=1))
    _, _, outcomes = derive(THREE, 4000, 30, noise=NoiseModel(0.1), params=params)
    for pair, outcome in outcomes.items():
        assert outcome.failure == ReconciliationAbort.failure_class, pair
        assert outcome.key is None
        assert outcome.leakage_bits > 0
        assert outcome.final_bits == 0
