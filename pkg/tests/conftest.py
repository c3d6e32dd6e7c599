import pytest

_LINES: list[str] = []


class AcceptanceLog:
    """Records one result line per acceptance criterion."""

    def __call__(self, number: int, name: str, passed: bool, **numbers) -> bool:
        detail = " ".join(f"{k}={_fmt(v)}" for k, v in numbers.items())
        line = f"criterion={number} name={name} status={'PASS' if passed else 'FAIL'} {detail}".rstrip()
        _LINES.append(line)
        print(line, flush=True)
        return passed


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split()[0].split("=")[1])):
        terminalreporter.write_line(line)
