import sys
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def straight_log_sigma0():
    """Full straight-with-stop closed loop, no perception noise."""
    from cvil.runner import run_scripted_trial
    from cvil.scenario import build_maneuver
    from cvil.vehicle import PerceptionConfig

    script = build_maneuver("straight_with_stop")
    traj, vtrace, rtrace = run_scripted_trial(
        script, seed=1,
        perception=PerceptionConfig(position_noise_sigma=0.0, seed=1),
        timeout_s=200.0, collect_traces=True)
    return script, traj, vtrace, rtrace


@pytest.fixture(scope="session")
def dlc_log_sigma0():
    """Double lane change closed loop, no perception noise."""
    from cvil.runner import run_scripted_trial
    from cvil.scenario import build_maneuver
    from cvil.vehicle import PerceptionConfig

    script = build_maneuver("double_lane_change")
    traj = run_scripted_trial(
        script, seed=2,
        perception=PerceptionConfig(position_noise_sigma=0.0, seed=2),
        timeout_s=300.0)
    return script, traj


@pytest.fixture(scope="session")
def circle_log_sigma0():
    """Circle maneuver at the stock 4.5 km/h target, no perception noise."""
    from cvil.runner import run_scripted_trial
    from cvil.scenario import build_maneuver
    from cvil.vehicle import PerceptionConfig

    script = build_maneuver("circle")
    traj = run_scripted_trial(
        script, seed=3,
        perception=PerceptionConfig(position_noise_sigma=0.0, seed=3),
        timeout_s=600.0)
    return script, traj
