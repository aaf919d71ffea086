"""
会话报告的文本摘要，列顺序固定
"""
from typing import List, Sequence, Union

from app.schemas.report import ScenarioReport, SessionReport

COLUMNS = (
    ("SESSION", 18),
    ("ROUTE", 22),
    ("SCHEME", 15),
    ("STATUS", 7),
    ("ROUNDS", 8),
    ("USABLE", 7),
    ("AB_QBER", 8),
    ("AB_KEY", 7),
    ("SECRET", 7),
    ("RESERVE", 8),
    ("POOLS", 14),
    ("ROUTE_CHECK", 12),
    ("FAILURE", 20),
)


def _row(values: Sequence[str]) -> str:
    return " ".join(str(v).ljust(width) for v, (_, width) in zip(values, COLUMNS)).rstrip()


def _endpoint_pair(session: SessionReport):
    names = {f"{session.alice}~{session.bob}", f"{session.bob}~{session.alice}"}
    return next((p for p in session.pairs if p.pair in names), None)


def _session_row(session: SessionReport) -> str:
    endpoint = _endpoint_pair(session)
    relay_pools = [p for p in session.pools if p.net_flag is None]
    unsustainable = sum(1 for p in relay_pools if p.flag != "SUSTAINABLE")
    if not session.pools:
        pools = "-"
    elif unsustainable:
        pools = f"{unsustainable}/{len(relay_pools)} UNSUST"
    else:
        pools = f"{len(relay_pools)} SUST"
    if session.route_check is None:
        route_check = "-"
    elif session.route_check.ok:
        route_check = "ok"
    else:
        route_check = "mismatch"
    return _row((
        session.session_id,
        ">".join(session.route) or "-",
        session.scheme or "-",
        "ok" if session.ok else "FAILED",
        session.rounds,
        f"{session.usable_fraction:.4f}",
        f"{endpoint.qber:.4f}" if endpoint and endpoint.qber is not None else "-",
        endpoint.final_bits if endpoint else 0,
        session.secret_bits,
        session.reserve_bits,
        pools,
        route_check,
        session.failure_class or "",
    ))


def _details(session: SessionReport) -> List[str]:
    lines = []
    if session.group_fractions:
        lines.append(f"  {session.session_id} groups:")
        for label, fraction in session.group_fractions.items():
            lines.append(f"    {label:<28} {session.group_counts[label]:>8} {fraction:.4f}")
    if session.pools:
        lines.append(f"  {session.session_id} pools:")
        for pool in session.pools:
            net = f" net {pool.net_rate} {pool.net_flag}" if pool.net_flag else ""
            lines.append(
                f"    {pool.pair:<20} gen {pool.generation:>7} use {pool.rate_consumption:>7} {pool.flag}{net}"
            )
    if session.route_check is not None and not session.route_check.ok:
        lines.append(
            f"  {session.session_id} route: extra {session.route_check.extra} missing {session.route_check.missing}"
        )
    if session.shadow_distance:
        distances = ", ".join(f"{relay}={d}" for relay, d in session.shadow_distance.items())
        lines.append(f"  {session.session_id} shadow distance: {distances}")
    return lines


def report_summary(report: Union[ScenarioReport, Sequence[SessionReport]]) -> str:
    sessions = report.sessions if isinstance(report, ScenarioReport) else list(report)
    lines = [_row([name for name, _ in COLUMNS])]
    lines.extend(_session_row(s) for s in sessions)
    for session in sessions:
        lines.extend(_details(session))
    return "\n".join(lines) + "\n"
