"""
异常层次
每个异常类都带有稳定的 failure_class 和对应的命令行退出码
"""
from typing import List, Optional


class RelayNetError(Exception):
    failure_class = "protocol-failure"
    exit_code = 7

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class CapabilityError(RelayNetError):
    failure_class = "capability"


class MalformedInputError(RelayNetError):
    failure_class = "malformed-input"


class DegenerateSampleError(RelayNetError):
    failure_class = "degenerate-sample"


class DegenerateInputError(RelayNetError):
    failure_class = "degenerate-input"


class ReconciliationAbort(RelayNetError):
    failure_class = "reconciliation-abort"


class QberAbort(RelayNetError):
    failure_class = "qber-abort"
    exit_code = 3

    def __init__(self, detail: str, qber: float):
        super().__init__(detail)
        self.qber = qber


class TamperAlarm(RelayNetError):
    failure_class = "tamper-alarm"
    exit_code = 4

    def __init__(self, detail: str, node: Optional[str] = None):
        super().__init__(detail)
        self.node = node


class KeyExhaustionError(RelayNetError):
    failure_class = "key-exhaustion"
    exit_code = 5


class NoKeyError(RelayNetError):
    failure_class = "no-key"


class ConflictError(RelayNetError):
    failure_class = "conflict"


class NotFoundError(RelayNetError):
    failure_class = "not-found"


class RefusedError(RelayNetError):
    failure_class = "refused"


class RouteLostError(RelayNetError):
    failure_class = "route-lost"


class RouteMismatchError(RelayNetError):
    failure_class = "route-mismatch"


class PropagationStalled(RelayNetError):
    failure_class = "propagation-stalled"


class TranscriptCorruption(RelayNetError):
    failure_class = "transcript-corruption"

    def __init__(self, detail: str, record_index: int):
        super().__init__(detail)
        self.record_index = record_index


class TranscriptMalformed(RelayNetError):
    failure_class = "transcript-malformed"


class ConfigValidationError(RelayNetError):
    failure_class = "validation"
    exit_code = 2

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class ConfigSyntaxError(ConfigValidationError):
    failure_class = "syntax"


IO_EXIT_CODE = 6


def exit_code_for(failure_class: str) -> int:
    pending = [RelayNetError]
    while pending:
        cls = pending.pop()
        if cls.failure_class == failure_class:
            return cls.exit_code
        pending.extend(cls.__subclasses__())
    return RelayNetError.exit_code
