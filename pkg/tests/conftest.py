import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fpeval.matcher import BuiltinMatcher, ScoreCache  # noqa: E402
from fpeval.synth import SynthParams, synth_database  # noqa: E402
from fpeval.templates import TemplateStore  # noqa: E402


@pytest.fixture(scope="session")
def builtin():
    return BuiltinMatcher()


@pytest.fixture(scope="session")
def params():
    return SynthParams(seed=2024)


@pytest.fixture(scope="session")
def small_db(tmp_path_factory, params):
    """10 fingers x 4 impressions on disk."""
    manifest, templates = synth_database(params, 10, 4, tmp_path_factory.mktemp("small"), name="small")
    return manifest, TemplateStore([manifest], templates)


@pytest.fixture(scope="session")
def big_db(tmp_path_factory):
    """The 50 x 8 database of the acceptance criteria, with a shared score cache."""
    manifest, templates = synth_database(SynthParams(seed=50_08), 50, 8, tmp_path_factory.mktemp("big"), name="synth50")
    return manifest, TemplateStore([manifest], templates), ScoreCache()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line for an acceptance criterion.

    The body may set ``info["detail"]`` to a short measured summary.
    """
    import contextlib
    import time

    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    @contextlib.contextmanager
    def run(number, title):
        info = {}
        start = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            line = f"criterion {number} FAIL  {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        else:
            line = f"criterion {number} PASS  {title}" + (f" ({info['detail']})" if "detail" in info else "")
        finally:
            line += f" [{time.perf_counter() - start:.1f}s]"
            lines.append(line)
            print(line)

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
