import contextlib

import pytest

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion.

    Usage::

        with criterion("A1", "yield <= 0.05") as note:
            note["yield"] = value
            assert value <= 0.05
    """

    @contextlib.contextmanager
    def record(name: str, target: str):
        note: dict = {}
        try:
            yield note
        except BaseException:
            _CRITERIA[name] = (False, _line(target, note))
            raise
        _CRITERIA[name] = (True, _line(target, note))

    return record


def _line(target, note):
    detail = ", ".join(f"{k}={_fmt(v)}" for k, v in note.items())
    return f"{target}" + (f" | {detail}" if detail else "")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s[1:])):
        ok, line = _CRITERIA[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {line}")
