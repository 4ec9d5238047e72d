"""Built-in demo scenarios.

Each fixture is a plain scenario dict in the same shape ``sim.load_scenario``
accepts from a JSON file, so ``cavcross run --fixture NAME`` and a saved copy
of the dict behave identically. Reference values quoted in the comments come
from the solver itself and are pinned by the test suite.
"""
from __future__ import annotations

import copy

# Loose caps: the baseline free solve tops out near 13.73 m/s, which must not
# trip the speed limit in the scenarios that study the other constraints.
_BASE_CONFIG = {
    "L": 370.0,
    "S": 30.0,
    "v_min": 0.0,
    "v_max": 20.0,
    "u_min": -3.0,
    "u_max": 3.0,
    "gamma": 0.1,
    "phi": 1.0,
    "delta0": 0.0,
    "rng_seed": 0,
}

_BASE_RUN = {"sample_step": 0.05, "oracle": False, "seed": 0}


def _scenario(arrivals, *, config=None, run=None):
    cfg = copy.deepcopy(_BASE_CONFIG)
    if config:
        cfg.update(config)
    blk = copy.deepcopy(_BASE_RUN)
    if run:
        blk.update(run)
    return {"schema_version": 1, "config": cfg, "arrivals": arrivals, "run": blk}


# Leader profile for the trailing-exit scenario: single cubic through
# p(0)=0, v(0)=10, p(41)=400, v(41)=10 (decelerate then recover).
_SLOW_LEADER = (0.0017411238954745383, -0.03569303985722797, 10.0, 0.0)


FIXTURES = {
    # Free and pinned terminal-time solves side by side, no interaction:
    # lane 0 finishes free at tf=32.027, lane 1 is pinned to tf=33.
    "fig2_unconstrained": _scenario([
        {"id": 1, "t0": 0.0, "v0": 10.0, "road": "N", "lane": 0},
        {"id": 2, "t0": 0.5, "v0": 10.0, "road": "N", "lane": 1, "force_tf": 33.0},
    ]),
    # Fast follower catches a slow pinned leader and rides the rear-end gap
    # bound all the way to the exit (no trailing free arc).
    "fig3_safety_ride": _scenario([
        {"id": 1, "t0": 0.0, "v0": 10.0, "road": "N", "lane": 0, "force_tf": 39.0},
        {"id": 2, "t0": 2.0, "v0": 12.0, "road": "N", "lane": 0},
    ]),
    # Same geometry with a slower leader: the follower is pinned to the
    # rear-end terminal bound rather than its free exit time.
    "fig4_safety_bound": _scenario([
        {"id": 1, "t0": 0.0, "v0": 10.0, "road": "N", "lane": 0, "force_tf": 42.0},
        {"id": 2, "t0": 2.0, "v0": 12.0, "road": "N", "lane": 0},
    ]),
    # Leader dips and recovers; the follower joins the gap bound, leaves it
    # again, and finishes on a trailing unconstrained arc (tau1 < tau2 < tf).
    "fig5_safety_exit": _scenario([
        {"id": 1, "t0": 0.0, "v0": 10.0, "road": "N", "lane": 0,
         "force_tf": 41.0, "force_profile": list(_SLOW_LEADER)},
        {"id": 2, "t0": 1.5, "v0": 12.0, "road": "N", "lane": 0, "force_tf": 42.5},
    ]),
    # Crossing traffic: the eastbound CAV clears the merging zone at
    # t=32.027; the northbound follower must not enter before then.
    "fig6_lateral": _scenario([
        {"id": 1, "t0": 0.0, "v0": 10.0, "road": "E", "lane": 0, "force_tf": 32.027},
        {"id": 2, "t0": 2.0, "v0": 12.0, "road": "N", "lane": 0, "force_tf": 34.4},
    ]),
    # Tight actuation and speed caps: accelerate at u_max, cruise at v_max,
    # then an interior unconstrained arc into the exit.
    "fig7_uvmax": _scenario(
        [{"id": 1, "t0": 0.0, "v0": 10.0, "road": "N", "lane": 0}],
        config={"v_max": 13.5, "u_max": 0.2, "u_min": -0.2},
    ),
}


def fixture(name: str) -> dict:
    """Deep copy of a built-in scenario dict; KeyError lists valid names."""
    if name not in FIXTURES:
        raise KeyError(
            f"unknown fixture {name!r}; choose from {', '.join(sorted(FIXTURES))}")
    return copy.deepcopy(FIXTURES[name])
