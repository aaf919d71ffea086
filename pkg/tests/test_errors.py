import pytest

from app.core.errors import (
    ConfigSyntaxError,
    ConfigValidationError,
    KeyExhaustionError,
    QberAbort,
    RelayNetError,
    TamperAlarm,
    exit_code_for,
)


@pytest.mark.parametrize("failure_class, code", [
    ("qber-abort", 3),
    ("tamper-alarm", 4),
    ("key-exhaustion", 5),
    ("validation", 2),
    ("syntax", 2),
    ("route-mismatch", 7),
    ("no-key", 7),
    ("something-new", 7),
])
def test_exit_code_for(failure_class, code):
    assert exit_code_for(failure_class) == code


def test_errors_carry_their_class():
    assert QberAbort("too noisy", 0.3).qber == 0.3
    assert TamperAlarm("bad tag", node="bob").node == "bob"
    assert KeyExhaustionError("dry").failure_class == "key-exhaustion"
    error = ConfigSyntaxError(["yaml: broken", "second"])
    assert isinstance(error, ConfigValidationError)
    assert isinstance(error, RelayNetError)
    assert error.detail == "yaml: broken; second"
    assert error.exit_code == 2
