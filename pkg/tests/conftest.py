from contextlib import contextmanager

import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion's pass/fail line."""
    results = request.config.stash[_RESULTS]

    @contextmanager
    def check(number: int, title: str):
        info = {"detail": ""}
        ok = False
        try:
            yield info
            ok = True
        except BaseException as exc:
            if not info["detail"]:
                info["detail"] = (str(exc).strip().splitlines() or [type(exc).__name__])[0]
            raise
        finally:
            line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
            if info["detail"]:
                line += f"  [{info['detail']}]"
            results[number] = line
            print(line)

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
