import pytest

# criterion number -> list of (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict[int, list] = {}


class Recorder:
    def __call__(self, criterion: int, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
