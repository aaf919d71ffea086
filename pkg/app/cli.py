"""
命令行入口

    python -m app.cli run <config.yaml>... [--seed N] [--out DIR] [--batch]
    python -m app.cli report <report.json>

退出码：0 全部成功，2 配置错误，3 误码率中止，4 篡改告警，5 密钥耗尽，6 读写错误，7 其他协议失败
"""
import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from app.core.config import settings
from app.core.errors import IO_EXIT_CODE, ConfigValidationError, RelayNetError, exit_code_for
from app.core.netsim import run_scenario
from app.core.reporting import report_summary
from app.schemas.report import ScenarioReport
from app.schemas.scenario import parse_config

logger = logging.getLogger(__name__)

TRANSCRIPT_FILE = "transcript.jsonl"
REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.txt"


def seed_value(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{text!a} is not an integer") from exc
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{value} is not a 64-bit unsigned seed")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaynet", description="Trusted-relay QKD network simulator.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one or more scenario files.")
    run.add_argument("configs", nargs="+", metavar="config", help="Scenario YAML file(s).")
    run.add_argument("--seed", type=seed_value, default=None, help="Override the scenario seed.")
    run.add_argument("--out", metavar="DIR", default="out", help="Output directory. (default: %(default)s)")
    run.add_argument("--batch", action="store_true", help="Run the scenarios in parallel processes.")

    report = commands.add_parser("report", help="Print the summary table of a report file.")
    report.add_argument("report_file", metavar="report-file")
    return parser


def run_command(config_path: str, out_dir: str, seed: Optional[int] = None) -> int:
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read {config_path}: {e}")
        return IO_EXIT_CODE
    try:
        config = parse_config(text)
        report, transcript = run_scenario(config, seed)
    except ConfigValidationError as e:
        for violation in e.violations:
            logger.error(f"{config_path}: {violation}")
        return e.exit_code
    except RelayNetError as e:
        logger.error(f"{config_path}: {e.failure_class}: {e.detail}")
        return e.exit_code

    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        transcript.write(out / TRANSCRIPT_FILE)
        (out / REPORT_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        (out / SUMMARY_FILE).write_text(report_summary(report), encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot write results to {out_dir}: {e}")
        return IO_EXIT_CODE

    failed = [s for s in report.sessions if not s.ok]
    if failed:
        logger.warning(f"{config_path}: {len(failed)} of {len(report.sessions)} sessions failed")
        return exit_code_for(failed[0].failure_class)
    logger.info(f"{config_path}: {len(report.sessions)} sessions ok, results in {out_dir}")
    return 0


def _run_job(job) -> int:
    config_path, out_dir, seed = job
    logging.basicConfig(level=settings.LOG_LEVEL)
    return run_command(config_path, out_dir, seed)


def run_many(configs: Sequence[str], out_dir: str, seed: Optional[int], batch: bool) -> int:
    if len(configs) == 1:
        jobs = [(configs[0], out_dir, seed)]
    else:
        jobs = [(c, str(Path(out_dir) / Path(c).stem), seed) for c in configs]
    if batch and len(jobs) > 1:
        with ProcessPoolExecutor() as executor:
            codes = list(executor.map(_run_job, jobs))
    else:
        codes = [run_command(*job) for job in jobs]
    return next((code for code in codes if code), 0)


def report_command(report_file: str) -> int:
    try:
        text = Path(report_file).read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read {report_file}: {e}")
        return IO_EXIT_CODE
    try:
        report = ScenarioReport.model_validate_json(text)
    except ValueError as e:
        logger.error(f"{report_file} is not a report: {e}")
        return ConfigValidationError.exit_code
    sys.stdout.write(report_summary(report))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run_many(args.configs, args.out, args.seed, args.batch)
    return report_command(args.report_file)


if __name__ == "__main__":
    sys.exit(main())
