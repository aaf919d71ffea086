import pytest

from app.core.config import settings
from app.core.errors import ConfigSyntaxError, ConfigValidationError
from app.models.auth import AuthScheme, BootstrapPolicy
from app.models.network import MultiplexPolicy
from app.schemas.scenario import parse_config, render_config, validate_config

MINIMAL = """
seed: 1
network:
  nodes:
    - {id: alice, role: ENDPOINT, attachment: carol}
    - {id: carol, role: RELAY}
    - {id: bob, role: ENDPOINT, attachment: carol}
sessions:
  - {alice: alice, bob: bob}
"""


def violations_of(text):
    with pytest.raises(ConfigValidationError) as info:
        parse_config(text)
    return info.value.violations


def test_defaults_come_from_settings():
    config = parse_config(MINIMAL)
    (session,) = config.sessions
    assert session.rounds == settings.DEFAULT_ROUNDS
    assert session.scheme is AuthScheme.RELAY_MEDIATED
    assert session.bootstrap is BootstrapPolicy.TRUST_CAROL_ALWAYS
    assert session.final_key_reserve == settings.FINAL_KEY_RESERVE
    assert config.multiplex is MultiplexPolicy.RUN_BY_RUN
    assert config.protocol.tag_bits == settings.TAG_BITS
    assert config.protocol.tag_key_cost == settings.TAG_KEY_COST
    assert config.carols == ["carol"]


def test_undefined_carol_is_located():
    text = MINIMAL.replace("{id: bob, role: ENDPOINT, attachment: carol}", "{id: bob, role: ENDPOINT, attachment: carol9}")
    assert violations_of(text) == ["network.nodes[2].attachment: undefined carol carol9"]


def test_field_errors_carry_their_path():
    violations = violations_of(MINIMAL.replace("{alice: alice, bob: bob}", "{alice: alice, bob: bob, rounds: -5}"))
    assert len(violations) == 1
    assert violations[0].startswith("sessions.0.rounds:")


def test_all_violations_are_reported_together():
    text = MINIMAL.replace("attachment: carol}", "attachment: nowhere}").replace("bob: bob}", "bob: zed}")
    violations = violations_of(text)
    assert len(violations) == 3
    assert "sessions[0].bob: undefined node zed" in violations


def test_broken_yaml_is_a_syntax_error():
    with pytest.raises(ConfigSyntaxError) as info:
        parse_config("seed: [1, 2\nnetwork: {")
    assert info.value.exit_code == 2
    with pytest.raises(ConfigSyntaxError):
        parse_config("- just a list")


def test_unknown_fields_are_rejected():
    violations = violations_of(MINIMAL + "colour: blue\n")
    assert any(v.startswith("colour") for v in violations)


def test_rendered_config_parses_back(make_scenario):
    config = make_scenario(relays=3, links=[{"endpoints": ["alice", "carol1"], "flip_probability": 0.01}])
    assert parse_config(render_config(config)) == config


def test_out_of_band_needs_a_pool(make_scenario):
    config = make_scenario(sessions=[{"alice": "alice", "bob": "bob", "bootstrap": "OUT_OF_BAND_PRESHARED"}])
    assert validate_config(config) == [
        "sessions[0].bootstrap: OUT_OF_BAND_PRESHARED needs a pools entry for alice~bob"
    ]
    config = make_scenario(
        sessions=[{"alice": "alice", "bob": "bob", "bootstrap": "OUT_OF_BAND_PRESHARED"}],
        pools=[{"endpoints": ["bob", "alice"], "bits": 4096}],
    )
    assert validate_config(config) == []


def test_preshared_pool_conflicts_with_other_policies(make_scenario):
    config = make_scenario(pools=[{"endpoints": ["alice", "bob"], "bits": 4096}])
    assert validate_config(config) == [
        "sessions[0].bootstrap: TRUST_CAROL_ALWAYS forbids a preshared alice~bob pool"
    ]


def test_one_policy_per_pair(make_scenario):
    config = make_scenario(sessions=[
        {"alice": "alice", "bob": "bob"},
        {"alice": "bob", "bob": "alice", "bootstrap": "FIRST_RUN_BOOTSTRAP"},
    ])
    assert validate_config(config) == ["sessions[1].bootstrap: pair alice~bob already uses TRUST_CAROL_ALWAYS"]


def test_endpoint_with_two_attachments(make_scenario):
    config = make_scenario(relays=2, extra_nodes=[{"id": "dave", "role": "ENDPOINT", "attachment": ["carol1", "carol2"]}])
    assert validate_config(config) == ["network.nodes[4].attachment: endpoint dave is attached to 2 carols"]


def test_links_must_follow_the_topology(make_scenario):
    config = make_scenario(relays=2, links=[{"endpoints": ["alice", "bob"], "flip_probability": 0.1}])
    assert validate_config(config) == ["network.links[0].endpoints: alice-bob is not a star or mesh edge"]


def test_relays_are_full_nodes(make_scenario):
    config = make_scenario(extra_nodes=[{"id": "carol2", "role": "RELAY", "can_receive": False}])
    assert validate_config(config) == ["network.nodes[3]: relay carol2 must both transmit and receive"]


def test_session_fields(make_scenario):
    config = make_scenario(sessions=[
        {"alice": "alice", "bob": "alice"},
        {"alice": "alice", "bob": "carol"},
        {"alice": "alice", "bob": "bob", "reroute_via": "mallory", "deregister_after": "lunch"},
    ])
    assert validate_config(config) == [
        "sessions[0]: alice and bob must differ",
        "sessions[1].bob: carol is not an endpoint",
        "sessions[2].reroute_via: undefined carol mallory",
        "sessions[2].deregister_after: unknown phase lunch",
    ]


def test_adversaries(make_scenario):
    config = make_scenario(adversaries=[
        {"model": "INJECT", "link": ["carol", "bob"]},
        {"model": "PASSIVE_TAP", "link": ["alice", "bob"]},
    ])
    assert validate_config(config) == [
        "adversaries[0].attempts: INJECT needs at least one attempt",
        "adversaries[1].link: alice-bob is not a network edge",
    ]


def test_one_adversary_per_link_and_plane(make_scenario):
    config = make_scenario(adversaries=[
        {"model": "TAMPER", "link": ["carol", "bob"], "fraction": 1.0},
        {"model": "PASSIVE_TAP", "link": ["bob", "carol"]},
        {"model": "EVE_INTERCEPT_RESEND", "link": ["carol", "bob"], "fraction": 1.0},
    ])
    assert validate_config(config) == [
        "adversaries[1].link: bob-carol already has an adversary (adversaries[0])",
    ]
