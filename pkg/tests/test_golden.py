"""
内置场景的报告和摘要与 tests/golden/<场景名>/ 下记录的结果逐字节比较

某个场景还没有记录时，本次运行写入记录并跳过该场景；设置 RELAYNET_UPDATE_GOLDEN=1 重新记录全部场景。
"""
import os
from pathlib import Path

import pytest

from app.cli import REPORT_FILE, SUMMARY_FILE, TRANSCRIPT_FILE, main
from app.core.transcript import Transcript, replay_transcript

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden"
BUNDLED = sorted((ROOT / "scenarios").glob("*.yaml"))
RECORDED = (REPORT_FILE, SUMMARY_FILE)


@pytest.fixture(scope="module")
def batch_out(tmp_path_factory):
    """所有内置场景在各自的进程里跑一遍"""
    out = tmp_path_factory.mktemp("batch")
    main(["run", *(str(p) for p in BUNDLED), "--out", str(out), "--batch"])
    return out


def test_every_bundled_scenario_is_covered():
    assert len(BUNDLED) == 8


@pytest.mark.parametrize("scenario", BUNDLED, ids=lambda p: p.stem)
def test_bundled_scenario_matches_its_golden(scenario, batch_out, tmp_path):
    main(["run", str(scenario), "--out", str(tmp_path)])
    for name in RECORDED + (TRANSCRIPT_FILE,):
        assert (tmp_path / name).read_bytes() == (batch_out / scenario.stem / name).read_bytes(), name
    assert replay_transcript(Transcript.read(tmp_path / TRANSCRIPT_FILE)).sessions >= 1

    golden = GOLDEN / scenario.stem
    missing = [name for name in RECORDED if not (golden / name).exists()]
    if missing or os.environ.get("RELAYNET_UPDATE_GOLDEN"):
        golden.mkdir(parents=True, exist_ok=True)
        for name in RECORDED:
            (golden / name).write_bytes((tmp_path / name).read_bytes())
        pytest.skip(f"recorded {golden.relative_to(ROOT)}")
    for name in RECORDED:
        assert (tmp_path / name).read_bytes() == (golden / name).read_bytes(), name
