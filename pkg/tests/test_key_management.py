import numpy as np
import pytest

from app.core.auth import PoolRegistry
from app.core.errors import MalformedInputError, NoKeyError
from app.core.key_management import (
    NetFlag,
    RateFlag,
    apply_bootstrap_policy,
    check_rate_compatibility,
    refresh_pools,
)
from app.models.auth import AuthScheme, BootstrapPolicy
from app.models.protocol import PairKey

FOUR_CHAIN_PAIRS = [
    ("alice", "carol1"), ("alice", "carol2"), ("alice", "bob"),
    ("carol1", "carol2"), ("carol1", "bob"), ("carol2", "bob"),
]


def session_keys(random_bits, lengths):
    return {
        pair: PairKey(pair=pair, bits=random_bits(n, seed=i), qber_estimate=0.0, leakage_bits=0)
        for i, (pair, n) in enumerate(zip(FOUR_CHAIN_PAIRS, lengths))
    }


def test_relay_pools_grow_by_full_key_length(random_bits):
    pools = PoolRegistry()
    keys = session_keys(random_bits, [100, 200, 1000, 300, 400, 500])
    record = refresh_pools(keys, pools, 0.1, ("alice", "bob"), "s1")
    relay_growth = {p: g for p, g in record.pool_growth.items() if p != ("alice", "bob")}
    assert len(relay_growth) == 5
    assert relay_growth[("alice", "carol1")] == 100
    assert relay_growth[("bob", "carol2")] == 500
    assert record.reserve_bits == 100
    assert record.secret_bits == 900
    assert record.reserve_bits + record.secret_bits == len(keys[("alice", "bob")])
    assert np.array_equal(record.secret_key, keys[("alice", "bob")].bits[100:])
    assert pools.get("alice", "bob").bits.size == 100
    assert pools.get("carol1", "carol2").refresh_log == [("s1", 300)]


def test_refresh_appends_to_existing_pools(random_bits):
    pools = PoolRegistry()
    pools.add("alice", "carol1", random_bits(64))
    keys = session_keys(random_bits, [100, 0, 0, 0, 0, 0])
    refresh_pools({("alice", "carol1"): keys[("alice", "carol1")]}, pools, 0.1, ("alice", "bob"))
    assert pools.get("alice", "carol1").bits.size == 164


def test_bootstrap_session_diverts_everything(random_bits):
    pools = PoolRegistry()
    keys = session_keys(random_bits, [10, 10, 800, 10, 10, 10])
    record = refresh_pools(keys, pools, 0.1, ("alice", "bob"), divert_all=True)
    assert record.reserve_bits == 800
    assert record.secret_bits == 0
    assert pools.get("alice", "bob").bits.size == 800


def test_reserve_range_is_checked():
    with pytest.raises(MalformedInputError):
        refresh_pools({}, PoolRegistry(), 1.5, ("alice", "bob"))


def test_rate_flags():
    report = check_rate_compatibility(
        consumption={("alice", "carol"): 5000, ("carol", "bob"): 100, ("alice", "bob"): 300},
        generation={("alice", "carol"): 4000, ("carol", "bob"): 4000, ("alice", "bob"): 3000},
        scheme=AuthScheme.RELAY_MEDIATED,
        endpoints=("alice", "bob"),
    )
    assert report.for_pair("alice", "carol").flag is RateFlag.UNSUSTAINABLE
    assert report.for_pair("bob", "carol").flag is RateFlag.SUSTAINABLE
    endpoint = report.for_pair("bob", "alice")
    assert endpoint.net_rate == 2700
    assert endpoint.net_flag is NetFlag.POSITIVE
    assert not report.sustainable


def test_net_rate_negative_when_reserve_meets_generation():
    report = check_rate_compatibility(
        consumption={("alice", "bob"): 3000, ("alice", "carol"): 10},
        generation={("alice", "bob"): 3000, ("alice", "carol"): 4000},
        scheme=AuthScheme.END_TO_END,
        endpoints=("alice", "bob"),
    )
    assert report.for_pair("alice", "bob").net_rate == 0
    assert report.for_pair("alice", "bob").net_flag is NetFlag.NEGATIVE
    assert report.sustainable


def test_endpoint_pair_is_always_reported():
    report = check_rate_compatibility({}, {}, AuthScheme.RELAY_MEDIATED, ("bob", "alice"))
    assert report.for_pair("alice", "bob").net_flag is NetFlag.NEGATIVE


def test_trust_carol_always(random_bits):
    pools = PoolRegistry()
    plan = apply_bootstrap_policy(BootstrapPolicy.TRUST_CAROL_ALWAYS, pools, ("bob", "alice"))
    assert plan.pair == ("alice", "bob")
    assert not pools.has("alice", "bob")
    terms = plan.session_terms(AuthScheme.RELAY_MEDIATED, pools, 0.1)
    assert terms.scheme is AuthScheme.RELAY_MEDIATED
    assert terms.final_key_reserve == 0.0
    with pytest.raises(NoKeyError):
        plan.session_terms(AuthScheme.END_TO_END, pools, 0.1)
    pools.add("alice", "bob", random_bits(256))
    with pytest.raises(MalformedInputError):
        apply_bootstrap_policy(BootstrapPolicy.TRUST_CAROL_ALWAYS, pools, ("alice", "bob"))


def test_first_run_bootstrap(random_bits):
    pools = PoolRegistry()
    plan = apply_bootstrap_policy(BootstrapPolicy.FIRST_RUN_BOOTSTRAP, pools, ("alice", "bob"))
    first = plan.session_terms(AuthScheme.END_TO_END, pools, 0.1)
    assert first.scheme is AuthScheme.RELAY_MEDIATED
    assert first.divert_all
    pools.add("alice", "bob", random_bits(4096))
    second = plan.session_terms(AuthScheme.END_TO_END, pools, 0.1)
    assert second.scheme is AuthScheme.END_TO_END
    assert not second.divert_all
    assert second.final_key_reserve == 0.1


def test_out_of_band_preshared(random_bits):
    pools = PoolRegistry()
    with pytest.raises(NoKeyError):
        apply_bootstrap_policy(BootstrapPolicy.OUT_OF_BAND_PRESHARED, pools, ("alice", "bob"))
    plan = apply_bootstrap_policy(BootstrapPolicy.OUT_OF_BAND_PRESHARED, pools, ("alice", "bob"), random_bits(2048))
    assert pools.get("alice", "bob").bits.size == 2048
    assert plan.session_terms(AuthScheme.FULL_CHAIN, pools, 0.2).scheme is AuthScheme.FULL_CHAIN
