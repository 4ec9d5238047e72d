import numpy as np
import pytest

from cavcross.model import (CruiseArc, CubicArc, ExpTrackArc,
                            PiecewiseTrajectory, SatArc, ScenarioConfig,
                            VehicleArrival)
from cavcross.solver import (InfeasibleProblem, plan, scan_violations,
                             solve_p1_fixed)

CFG = ScenarioConfig(v_max=20.0)


def _arr(**kw):
    base = dict(id=1, t0=0.0, v0=10.0, road="N")
    base.update(kw)
    return VehicleArrival(**base)


def _lead(tf):
    _, traj = solve_p1_fixed(0.0, 10.0, tf, CFG)
    return traj


def test_plan_unconstrained_free():
    traj, rep = plan(_arr(), CFG)
    assert rep.terminal_mode == "free"
    assert rep.active == []
    assert len(traj.arcs) == 1
    assert traj.tf == pytest.approx(32.02697700156859, abs=1e-8)
    assert rep.feasible


def test_plan_pinned_terminal():
    traj, rep = plan(_arr(force_tf=33.0), CFG)
    assert rep.terminal_mode == "fixed"
    assert traj.tf == 33.0
    assert traj.eval(33.0)[0] == pytest.approx(400.0, abs=1e-8)


def test_plan_fifo_pin():
    traj, rep = plan(_arr(), CFG, other_tf=35.0)
    assert rep.binding == "fifo"
    assert traj.tf == pytest.approx(35.0, abs=1e-9)
    assert len(traj.arcs) == 1


def test_plan_fifo_slack_keeps_free_exit():
    traj, rep = plan(_arr(), CFG, other_tf=30.0)
    assert rep.terminal_mode == "free"
    assert traj.tf == pytest.approx(32.02697700156859, abs=1e-8)


def test_plan_follower_ride():
    lead = _lead(39.0)
    traj, rep = plan(_arr(id=2, t0=2.0, v0=12.0), CFG, leader=lead)
    assert rep.binding == "follower"
    assert rep.terminal_mode == "follower"
    assert rep.active == ["rear_end"]
    assert rep.multipliers.eta is not None
    assert traj.tf == pytest.approx(39.99998208361794, abs=1e-6)
    assert any(isinstance(a, ExpTrackArc) for a in traj.arcs)
    # exit-order guarantee against the leader comes out of the headway bound
    assert traj.tf > lead.tf


def test_plan_window_fixed_point_converges_on_bound():
    lead = _lead(42.0)
    traj, rep = plan(_arr(id=2, t0=2.0, v0=12.0), CFG, leader=lead)
    bound = lead.tf + (CFG.phi * traj.vf + CFG.delta0) / lead.vf
    assert traj.tf == pytest.approx(bound, abs=1e-6)
    assert rep.window is not None and rep.window.binding == "follower"


def test_plan_lateral_hold():
    traj, rep = plan(_arr(id=2, t0=2.0, v0=12.0, force_tf=34.4), CFG,
                     lateral_tm=32.027)
    assert rep.active == ["lateral"]
    assert traj.eval(32.027)[0] == pytest.approx(370.0, abs=1e-6)
    assert rep.multipliers.zeta is not None


def test_plan_lateral_hold_with_free_exit():
    # would otherwise clear the zone before the hold releases
    traj, rep = plan(_arr(id=3, t0=0.0, v0=12.0), CFG, lateral_tm=32.027)
    assert rep.active == ["lateral"]
    assert traj.tf > 32.027
    assert traj.eval(32.027)[0] == pytest.approx(370.0, abs=1e-6)
    ts = np.linspace(0.0, 32.027, 2000)
    assert np.max(traj.sample(ts)[0]) <= 370.0 + 1e-6


def test_plan_lateral_ignored_when_slack():
    traj, rep = plan(_arr(), CFG, lateral_tm=20.0)
    # already past the merging zone only after t=20 anyway? no: p(20) < 370,
    # so the hold is slack and must not activate
    assert rep.active == []
    assert traj.eval(20.0)[0] < 370.0


def test_plan_limits_escalation():
    cfg = ScenarioConfig(v_max=13.5, u_max=0.2, u_min=-0.2)
    traj, rep = plan(_arr(), cfg)
    assert set(rep.active) == {"control+", "speed+"}
    assert rep.terminal_mode == "free"
    assert [type(a) for a in traj.arcs] == [SatArc, CubicArc, CruiseArc]
    assert traj.tf == pytest.approx(32.34814814814429, abs=1e-6)


def test_plan_per_vehicle_control_override():
    # the arrival's own caps, not the global ones, decide activation
    cfg = ScenarioConfig(v_max=20.0)
    traj, rep = plan(_arr(u_max=0.2, u_min=-0.2), cfg)
    assert "control+" in rep.active
    ts = np.linspace(0.0, traj.tf, 4000)
    assert np.max(traj.sample(ts)[2]) <= 0.2 + 1e-9


def test_plan_infeasible_attaches_report():
    with pytest.raises(InfeasibleProblem) as exc:
        plan(_arr(force_tf=10.0), CFG)
    rep = exc.value.report
    assert rep is not None
    assert not rep.feasible
    assert any(s.get("problem") == "violation" for s in rep.steps)


def test_scan_finds_first_violation_of_each_kind():
    cfg = ScenarioConfig(v_max=13.5)
    over_v = PiecewiseTrajectory((CubicArc(t_start=0.0, t_end=10.0, a=0.0,
                                           b=0.0, c=14.0, d=0.0),))
    out = scan_violations(over_v, cfg, u_limits=(-3.0, 3.0))
    assert len(out) == 1
    t, kind, direction, mag = out[0]
    assert (kind, direction) == ("speed", 1)
    assert t == 0.0
    assert mag == pytest.approx(0.5)


def test_scan_prioritizes_control_on_simultaneous_hits():
    cfg = ScenarioConfig(v_max=13.5, u_max=3.0)
    both = PiecewiseTrajectory((CubicArc(t_start=0.0, t_end=5.0, a=0.0,
                                         b=4.0, c=14.0, d=0.0),))
    out = scan_violations(both, cfg, u_limits=(-3.0, 3.0))
    assert out[0][1] == "control"


def test_scan_rear_end_and_hold_kinds():
    cfg = ScenarioConfig(v_max=20.0)
    lead = _lead(39.0)
    tail = PiecewiseTrajectory((CubicArc(t_start=2.0, t_end=34.0, a=0.0,
                                         b=0.0, c=12.5, d=-25.0),))
    kinds = {k for _, k, _, _ in scan_violations(tail, cfg, u_limits=(-3.0, 3.0),
                                                 leader=lead)}
    assert "rear_end" in kinds
    kinds2 = {k for _, k, _, _ in scan_violations(tail, cfg, u_limits=(-3.0, 3.0),
                                                  lateral_tm=33.0)}
    assert "lateral" in kinds2
