import logging

import numpy as np
import pytest

from antnav import explorer, pipeline, world


@pytest.fixture(scope="session")
def scene42():
    """Seed-42 two-room, single-floor scene."""
    return world.generate_scene(42, world.SceneSpec(rooms=2, floors=1))


@pytest.fixture(scope="session")
def scene7():
    """Seed-7 four-room, two-floor scene with a ramp."""
    return world.generate_scene(7, world.SceneSpec(rooms=4, floors=2))


@pytest.fixture(scope="session")
def explored42(scene42):
    """(graph, trace) of exploring the seed-42 scene from the first room centre."""
    trace = explorer.ExplorationTrace()
    graph = explorer.explore(scene42, pipeline.start_pose(scene42), trace=trace)
    return graph, trace


@pytest.fixture(scope="session")
def prepared42(scene42):
    """Noise-free tours, capture logs and merged cloud for the seed-42 scene."""
    return pipeline.prepare(scene42)


def box_room(size=(6.0, 6.0), wall="red", floor="white", height=2.6, extra=()):
    """Closed rectangular room with its floor top at z=0 and inner corner at (0, 0)."""
    sx, sy = size
    t = 0.1
    boxes = [
        ((-t, -t, -t), (sx + t, sy + t, 0.0), floor),
        ((-t, -t, 0.0), (0.0, sy + t, height), wall),
        ((sx, -t, 0.0), (sx + t, sy + t, height), wall),
        ((0.0, -t, 0.0), (sx, 0.0, height), wall),
        ((0.0, sy, 0.0), (sx, sy + t, height), wall),
        *extra,
    ]
    return world.scene_from_boxes(boxes, ((-0.5, -0.5, -0.5), (sx + 0.5, sy + 0.5, height + 0.5)))


@pytest.fixture
def quiet_logs():
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting -----------------------------------------------------------------

ACCEPTANCE = {}


def record(criterion: int, part: str, ok: bool, detail: str) -> None:
    """Store one checked part of a numbered acceptance criterion."""
    ACCEPTANCE.setdefault(criterion, {})[part] = (bool(ok), detail)
    print(f"C{criterion} {part}: {'PASS' if ok else 'FAIL'} {detail}")


def acceptance_lines() -> list:
    out = []
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(v[0] for v in parts.values())
        body = "; ".join(f"{p} {'ok' if v[0] else 'FAILED'} ({v[1]})" for p, v in parts.items())
        out.append(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {body}")
    return out


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
