"""Shared fixtures: cameras, tasks, and small synthetic demos."""
import numpy as np
import pytest

from pointmimic import retarget, simenv


@pytest.fixture(scope="session")
def cameras():
    return simenv.default_cameras()


@pytest.fixture(scope="session")
def offsets():
    return retarget.default_offset_table()


@pytest.fixture(scope="session")
def reach_spec():
    return simenv.make_task("reach")


@pytest.fixture(scope="session")
def raw_reach_demo(reach_spec, cameras):
    return simenv.simulate_hand_demo(reach_spec, 42, cameras)


@pytest.fixture(scope="session")
def reach_demo3d(raw_reach_demo, cameras):
    return retarget.retarget_demo(raw_reach_demo, cameras)


def make_demos3d(task, n, cameras, seed=0, noise=None):
    """Generate and retarget n scripted demos for a task."""
    spec = simenv.make_task(task)
    noise = noise or simenv.NoiseModel.zero()
    out = []
    for i in range(n):
        scene_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        demo = simenv.simulate_hand_demo(spec, scene_seed, cameras, noise)
        out.append(retarget.retarget_demo(demo, cameras))
    return out
