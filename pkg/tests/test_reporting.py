from app.core.reporting import COLUMNS, report_summary
from app.schemas.report import PairReport, PoolReport, RouteCheckReport, ScenarioReport, SessionReport


def session(**fields):
    data = dict(
        session_id="s1-alice-bob",
        alice="alice",
        bob="bob",
        route=["alice", "carol", "bob"],
        scheme="RELAY_MEDIATED",
        rounds=1000,
        group_counts={"alice~bob": 500, "unused": 500},
        group_fractions={"alice~bob": 0.5, "unused": 0.5},
        usable_fraction=0.875,
        pairs=[PairReport(
            pair="alice~bob", rounds=500, raw_bits=500, disclosed=50, reconciliation_input=450,
            leakage_bits=40, amplification_input=450, compression=60, final_bits=390, qber=0.02,
        )],
        pools=[PoolReport(
            pair="alice~carol", size_before=100, size_after=200, consumed=10, growth=100,
            generation=100, rate_consumption=10, flag="SUSTAINABLE",
        )],
        endpoint_key_bits=390,
        secret_bits=390,
        route_check=RouteCheckReport(ok=True, expected=["carol"], announcers=["carol"]),
        shadow_distance={"carol": 0},
    )
    data.update(fields)
    return SessionReport(**data)


def scenario(*sessions):
    return ScenarioReport(name="test", seed=1, multiplex="RUN_BY_RUN", sessions=list(sessions))


def test_empty_report_is_only_the_header():
    text = report_summary(scenario())
    assert text.splitlines() == [" ".join(name.ljust(width) for name, width in COLUMNS).rstrip()]
    assert text.endswith("\n")


def test_column_order():
    header = report_summary(scenario()).split()
    assert header == [name for name, _ in COLUMNS]
    assert header[:4] == ["SESSION", "ROUTE", "SCHEME", "STATUS"]
    assert header[-1] == "FAILURE"


def test_successful_row():
    row = report_summary(scenario(session())).splitlines()[1]
    assert row.split() == [
        "s1-alice-bob", "alice>carol>bob", "RELAY_MEDIATED", "ok", "1000",
        "0.8750", "0.0200", "390", "390", "0", "1", "SUST", "ok",
    ]


def test_failed_row_and_details():
    failed = session(
        status="FAILED",
        failure_class="route-mismatch",
        route_check=RouteCheckReport(ok=False, expected=["carol"], announcers=["carol", "carol3"], extra=["carol3"]),
        pools=[],
    )
    lines = report_summary(scenario(failed)).splitlines()
    assert lines[1].split()[3] == "FAILED"
    assert lines[1].split()[-2:] == ["mismatch", "route-mismatch"]
    assert "  s1-alice-bob route: extra ['carol3'] missing []" in lines


def test_details_list_groups_pools_and_shadows():
    text = report_summary(scenario(session()))
    assert "  s1-alice-bob groups:" in text
    assert "  s1-alice-bob shadow distance: carol=0" in text
    assert "SUSTAINABLE" in text


def test_sessions_without_data_render_dashes():
    empty = session(route=[], scheme=None, pairs=[], pools=[], route_check=None, group_counts={},
                    group_fractions={}, shadow_distance={}, status="FAILED", failure_class="no-key")
    fields = report_summary(scenario(empty)).splitlines()[1].split()
    assert fields[1:3] == ["-", "-"]
    assert fields[6] == "-"
    assert fields[-1] == "no-key"
    assert len(report_summary(scenario(empty)).splitlines()) == 2
