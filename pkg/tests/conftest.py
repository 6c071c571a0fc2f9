import numpy as np
import pytest

from depthcons.synth import SceneSpec, render_gt, resolve_spec_path


def small_scene_dict(frames=24, width=32, height=24):
    return {
        "width": width, "height": height, "frame_count": frames, "fps": 30, "seed": 3,
        "intrinsics": {"fx": 29.0, "fy": 29.0, "cx": (width - 1) / 2, "cy": (height - 1) / 2},
        "camera": {"position": [-0.3, 0.0, 0.0], "velocity": [0.02, 0.0, 0.0],
                   "look_at": [0.0, 0.2, 4.5]},
        "static": [
            {"type": "plane", "point": [0, 0, 7], "normal": [0, 0, -1]},
            {"type": "plane", "point": [0, 1.2, 0], "normal": [0, -1, 0]},
            {"type": "box", "center": [-1.0, 0.6, 4.8], "half_extents": [0.4, 0.4, 0.4]},
        ],
        "dynamic": [
            {"type": "sphere", "radius": 0.5,
             "motion": {"start": [0.5, 0.3, 4.0], "amplitude": [0.8, 0, 0.3], "period": 40}},
        ],
        "corr_delta": 4,
    }


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec.from_dict(small_scene_dict())


@pytest.fixture(scope="session")
def small_gt(small_spec):
    return render_gt(small_spec, 4)


@pytest.fixture(scope="session")
def default_spec():
    return SceneSpec.load(resolve_spec_path("scenes/plane_orbit.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
