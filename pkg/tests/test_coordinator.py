import numpy as np
import pytest

from cavcross.coordinator import Coordinator, check_guarantees
from cavcross.model import (ConfigError, CubicArc, PiecewiseTrajectory,
                            ScenarioConfig, VehicleArrival)
from cavcross.solver import plan, solve_p1_fixed

CFG = ScenarioConfig(v_max=20.0)


def _arr(i, t0, road="N", lane=0, v0=10.0):
    return VehicleArrival(id=i, t0=t0, v0=v0, road=road, lane=lane)


def _cruise(t0, tf):
    v = 400.0 / (tf - t0)
    return PiecewiseTrajectory((CubicArc(t_start=t0, t_end=tf, a=0.0, b=0.0,
                                         c=v, d=-v * t0),))


def test_queue_orders_by_entry_time():
    co = Coordinator(CFG)
    co.enqueue(_arr(1, 3.0))
    co.enqueue(_arr(2, 1.0))
    co.enqueue(_arr(3, 2.0))
    assert [e.arrival.id for e in co.entries] == [2, 3, 1]
    assert [e.index for e in co.entries] == [1, 2, 3]


def test_duplicate_id_rejected():
    co = Coordinator(CFG)
    co.enqueue(_arr(1, 0.0))
    with pytest.raises(ConfigError):
        co.enqueue(_arr(1, 5.0))


def test_partition_covers_every_predecessor_once():
    co = Coordinator(CFG)
    roads = ["N", "N", "E", "S", "W", "N", "E"]
    lanes = [0, 1, 0, 0, 0, 0, 1]
    for i, (rd, ln) in enumerate(zip(roads, lanes), start=1):
        co.enqueue(_arr(i, float(i), road=rd, lane=ln))
    for e in co.entries:
        qv = co.view(e)
        assert len(qv.groups) == e.index - 1
        assert set(qv.groups.values()) <= {"lane", "adjacent", "conflict", "clear"}


def test_group_classification():
    co = Coordinator(CFG)
    co.enqueue(_arr(1, 0.0, road="N", lane=0))
    co.enqueue(_arr(2, 1.0, road="N", lane=1))
    co.enqueue(_arr(3, 2.0, road="E"))
    co.enqueue(_arr(4, 3.0, road="S"))
    last = co.enqueue(_arr(5, 4.0, road="N", lane=0))
    qv = co.view(last)
    assert qv.groups == {1: "lane", 2: "adjacent", 3: "conflict", 4: "clear"}
    assert qv.k.arrival.id == 1
    assert qv.c.arrival.id == 3
    assert qv.o.arrival.id == 4   # newest of clear+adjacent


def test_newest_member_wins_each_group():
    co = Coordinator(CFG)
    co.enqueue(_arr(1, 0.0, road="N", lane=0))
    co.enqueue(_arr(2, 1.0, road="N", lane=0))
    last = co.enqueue(_arr(3, 2.0, road="N", lane=0))
    qv = co.view(last)
    assert qv.k.arrival.id == 2


def test_simultaneous_arrivals_draw_deterministically():
    def order(seed):
        co = Coordinator(ScenarioConfig(v_max=20.0, rng_seed=seed))
        for i, rd in enumerate(["N", "E", "S"], start=1):
            co.enqueue(_arr(i, 0.0, road=rd))
        return [e.arrival.id for e in co.entries]

    assert order(0) == order(0)
    assert order(123) == order(123)
    seen = {tuple(order(s)) for s in range(25)}
    assert len(seen) > 1   # the draw actually varies across seeds


def test_guarantees_pass_for_solved_queue():
    co = Coordinator(CFG)
    lead = co.enqueue(_arr(1, 0.0))
    tail = co.enqueue(_arr(2, 2.0, v0=12.0))
    t1, _ = plan(lead.arrival, CFG)
    co.attach(lead, t1)
    qv = co.view(tail)
    t2, _ = plan(tail.arrival, CFG, leader=qv.k.trajectory)
    co.attach(tail, t2)
    rep = check_guarantees(co)
    assert rep.ok
    assert rep.violations == []


def test_guarantees_flag_fifo_inversion():
    co = Coordinator(CFG)
    a = co.enqueue(_arr(1, 0.0))
    b = co.enqueue(_arr(2, 2.0, road="E"))
    co.attach(a, _cruise(0.0, 40.0))
    co.attach(b, _cruise(2.0, 36.0))   # later arrival exits first
    rep = check_guarantees(co)
    assert not rep.ok
    kinds = {v[0] for v in rep.violations}
    assert "order" in kinds


def test_guarantees_flag_rear_end_gap():
    co = Coordinator(CFG)
    a = co.enqueue(_arr(1, 0.0))
    b = co.enqueue(_arr(2, 1.0))
    co.attach(a, _cruise(0.0, 40.0))          # 10 m/s
    co.attach(b, _cruise(1.0, 34.0))          # faster, same lane: tailgates
    rep = check_guarantees(co)
    assert any(v[0] == "rear_end" for v in rep.violations)


def test_guarantees_flag_merging_zone_overlap():
    co = Coordinator(CFG)
    a = co.enqueue(_arr(1, 0.0))
    b = co.enqueue(_arr(2, 1.0, road="E"))
    co.attach(a, _cruise(0.0, 40.0))
    # enters the zone around t=34.3 < 40: conflicting overlap, but exits
    # later so the order check alone stays silent
    co.attach(b, _cruise(1.0, 41.0))
    rep = check_guarantees(co)
    kinds = {v[0] for v in rep.violations}
    assert kinds == {"lateral"}


def test_opposite_road_does_not_require_zone_exclusivity():
    co = Coordinator(CFG)
    a = co.enqueue(_arr(1, 0.0, road="N"))
    b = co.enqueue(_arr(2, 1.0, road="S"))
    co.attach(a, _cruise(0.0, 40.0))
    co.attach(b, _cruise(1.0, 41.0))   # same timing as the failing case above
    rep = check_guarantees(co)
    assert rep.ok
