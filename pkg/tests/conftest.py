import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mcvd.geometry import Topology
from mcvd.walker import SimProtocol

# Acceptance tests run in one of two profiles:
#   quick (default): small particle counts, coarse dt, widened tolerances;
#                    suitable for CI, finishes in minutes.
#   desk:            the full-scale protocol; tens of minutes.
# Select with MCVD_ACCEPTANCE_PROFILE=desk.
PROFILE = os.environ.get("MCVD_ACCEPTANCE_PROFILE", "quick")

QUICK = SimProtocol(n_particles=10_000, dt=1e-3, t_total=10.0, master_seed=11)
DESK = SimProtocol(n_particles=100_000, dt=1e-4, t_total=10.0, master_seed=11)


@pytest.fixture(scope="session")
def profile() -> str:
    if PROFILE not in ("quick", "desk"):
        raise RuntimeError(f"unknown acceptance profile {PROFILE!r}")
    return PROFILE


@pytest.fixture(scope="session")
def protocol(profile) -> SimProtocol:
    return QUICK if profile == "quick" else DESK


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory) -> Path:
    """One shared channel cache for the whole session; criteria that sweep
    the same topologies at different (M, t_s) reuse each other's records.
    MCVD_ACCEPTANCE_CACHE points it at a persistent directory so repeated
    desk-scale runs skip the expensive channel simulations (records are
    bit-exact reproducible, so a warm cache cannot change any result)."""
    persistent = os.environ.get("MCVD_ACCEPTANCE_CACHE")
    if persistent:
        path = Path(persistent)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("channel-cache")


@pytest.fixture()
def default_topology() -> Topology:
    return Topology()


# one "PASS/FAIL criterion N" line per acceptance test, with the measured
# numbers the test chose to report
ACCEPTANCE_DETAILS: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance_details() -> dict:
    return ACCEPTANCE_DETAILS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    picked = {}
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            # prefer the call-phase report; setup/teardown only as fallback
            if nodeid not in picked or getattr(rep, "when", "") == "call":
                picked[nodeid] = rep
    if not picked:
        return
    terminalreporter.write_sep("=", f"acceptance criteria [{PROFILE}]")
    for nodeid in sorted(picked):
        rep = picked[nodeid]
        if rep.passed:
            status = "PASS"
        elif getattr(rep, "skipped", False):
            status = "SKIP"
        else:
            status = "FAIL"
        name = nodeid.split("::")[-1]
        detail = ACCEPTANCE_DETAILS.get(name, "")
        terminalreporter.write_line(
            f"{status}  {name}" + (f"  ({detail})" if detail else ""))
