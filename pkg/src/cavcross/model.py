"""Core kinematic model: arc algebra, piecewise trajectories, scenario types.

A vehicle crossing the control zone follows double-integrator dynamics
(position p, speed v, control u = acceleration). Optimal profiles are pieced
together from a small set of closed-form arc families:

* ``CubicArc``       -- u(t) = a*t + b, so v is quadratic and p cubic.
* ``ExpTrackArc``    -- gap-riding behind a leader: u(t) = a*t + b + A(t)*exp(-t/phi)
                        with A a (usually constant) polynomial amplitude.
* ``SatArc``         -- control pinned at a bound, u constant.
* ``CruiseArc``      -- speed pinned (at a bound or post-exit), u = 0.

All coefficients are in absolute time. Every arc evaluates p, v, u exactly and
integrates its own energy 0.5*u^2 in closed form.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np


class DomainError(ValueError):
    """Evaluation outside a trajectory's time domain."""


class ConfigError(ValueError):
    """Inconsistent scenario or vehicle configuration."""


_EDGE_TOL = 1e-9


# ---------------------------------------------------------------------------
# small polynomial helpers (coefficients lowest-order first, as tuples)
# ---------------------------------------------------------------------------

def _pval(coeffs, t):
    out = 0.0 * t if isinstance(t, np.ndarray) else 0.0
    for c in reversed(coeffs):
        out = out * t + c
    return out


def _pder(coeffs):
    return tuple(k * coeffs[k] for k in range(1, len(coeffs)))


def _pint(coeffs):
    return (0.0,) + tuple(coeffs[k] / (k + 1) for k in range(len(coeffs)))


def _pmul(p, q):
    out = [0.0] * (len(p) + len(q) - 1) if p and q else []
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return tuple(out)


def _exp_antideriv(coeffs, alpha):
    """Return R with d/dt[-R(t) e^{-alpha t}] = C(t) e^{-alpha t}.

    Solves alpha*R - R' = C degree by degree from the top. Degenerate for
    alpha == 0 (plain polynomial integration applies there instead).
    """
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    n = len(coeffs)
    R = [0.0] * n
    for k in range(n - 1, -1, -1):
        up = (k + 1) * R[k + 1] if k + 1 < n else 0.0
        R[k] = (coeffs[k] + up) / alpha
    return tuple(R)


# ---------------------------------------------------------------------------
# arcs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Arc:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not (self.t_end > self.t_start - _EDGE_TOL):
            raise ConfigError(f"arc has non-positive duration: [{self.t_start}, {self.t_end}]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def contains(self, t: float) -> bool:
        return self.t_start - _EDGE_TOL <= t <= self.t_end + _EDGE_TOL

    # subclasses implement p/v/u and energy_to(t1, t2)
    def cubic_amp(self):
        """Absolute-time (a, b, c, d, amp, phi) view of this arc.

        Every arc kind reads as u = a*t + b + A(t)*exp(-t/phi) with A the
        polynomial ``amp`` (empty for purely polynomial arcs). Used by the
        solver when an arc serves as a leader piece for gap tracking.
        """
        raise NotImplementedError

    def v_extrema(self):
        """Interior stationary points of v as (t, v) pairs."""
        return []

    def u_extrema(self):
        """Interior stationary points of u as (t, u) pairs."""
        return []


@dataclass(frozen=True)
class CubicArc(Arc):
    a: float
    b: float
    c: float
    d: float

    def u(self, t):
        return self.a * t + self.b

    def v(self, t):
        return (0.5 * self.a * t + self.b) * t + self.c

    def p(self, t):
        return ((self.a / 6.0 * t + 0.5 * self.b) * t + self.c) * t + self.d

    def energy(self, t1, t2):
        # integral of 0.5*(a t + b)^2
        q = _pint((0.5 * self.b**2, self.a * self.b, 0.5 * self.a**2))
        return _pval(q, t2) - _pval(q, t1)

    def cubic_amp(self):
        return self.a, self.b, self.c, self.d, (), None

    def v_extrema(self):
        if self.a == 0.0:
            return []
        ts = -self.b / self.a
        if self.t_start + _EDGE_TOL < ts < self.t_end - _EDGE_TOL:
            return [(ts, self.v(ts))]
        return []


@dataclass(frozen=True)
class ExpTrackArc(Arc):
    """Gap-riding arc: u = a*t + b + A(t) * exp(-t/phi).

    ``amp`` holds the polynomial amplitude A lowest-order first; the classic
    constant-amplitude case is ``amp=(c_e,)``. Speed and position follow by
    exact integration:
        v = 0.5*a*t^2 + b*t + c - Rv(t) exp(-t/phi)
        p = a/6*t^3 + 0.5*b*t^2 + c*t + d + Rp(t) exp(-t/phi)
    with Rv, Rp repeated exponential antiderivatives of A.
    """

    a: float
    b: float
    c: float
    d: float
    amp: tuple
    phi: float
    _rv: tuple = field(init=False, repr=False, compare=False)
    _rp: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        super().__post_init__()
        if self.phi <= 0.0:
            raise ConfigError("phi must be positive for a tracking arc")
        al = 1.0 / self.phi
        rv = _exp_antideriv(self.amp, al) if self.amp else ()
        rp = _exp_antideriv(rv, al) if rv else ()
        object.__setattr__(self, "_rv", rv)
        object.__setattr__(self, "_rp", rp)

    @property
    def c_e(self) -> float:
        """Constant exponential amplitude (the common case)."""
        return self.amp[0] if self.amp else 0.0

    def _exp(self, t):
        return np.exp(-t / self.phi) if isinstance(t, np.ndarray) else math.exp(-t / self.phi)

    def u(self, t):
        out = self.a * t + self.b
        if self.amp:
            out = out + _pval(self.amp, t) * self._exp(t)
        return out

    def v(self, t):
        out = (0.5 * self.a * t + self.b) * t + self.c
        if self._rv:
            out = out - _pval(self._rv, t) * self._exp(t)
        return out

    def p(self, t):
        out = ((self.a / 6.0 * t + 0.5 * self.b) * t + self.c) * t + self.d
        if self._rp:
            out = out + _pval(self._rp, t) * self._exp(t)
        return out

    def energy(self, t1, t2):
        al = 1.0 / self.phi
        poly = (0.5 * self.b**2, self.a * self.b, 0.5 * self.a**2)
        q = _pint(poly)
        total = _pval(q, t2) - _pval(q, t1)
        if self.amp:
            cross = _pmul((self.b, self.a), self.amp)  # (a t + b) * A(t)
            r2 = _exp_antideriv(cross, al)
            total += (-_pval(r2, t2) * self._exp(t2)) - (-_pval(r2, t1) * self._exp(t1))
            sq = _pmul(self.amp, self.amp)
            r3 = _exp_antideriv(tuple(0.5 * x for x in sq), 2.0 * al)
            e2 = lambda t: math.exp(-2.0 * t / self.phi)
            total += (-_pval(r3, t2) * e2(t2)) - (-_pval(r3, t1) * e2(t1))
        return total

    def cubic_amp(self):
        return self.a, self.b, self.c, self.d, self.amp, self.phi

    def _bisect_roots(self, fn, n=256):
        ts = np.linspace(self.t_start, self.t_end, n)
        vals = np.array([fn(t) for t in ts])
        roots = []
        for i in range(n - 1):
            f0, f1 = vals[i], vals[i + 1]
            if f0 == 0.0:
                roots.append(ts[i])
            elif f0 * f1 < 0.0:
                lo, hi = ts[i], ts[i + 1]
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    if fn(lo) * fn(mid) <= 0.0:
                        hi = mid
                    else:
                        lo = mid
                roots.append(0.5 * (lo + hi))
        return [r for r in roots if self.t_start + _EDGE_TOL < r < self.t_end - _EDGE_TOL]

    def v_extrema(self):
        return [(t, self.v(t)) for t in self._bisect_roots(self.u)]

    def u_extrema(self):
        dpoly = (self.a,)
        damp = tuple(x - y for x, y in
                     zip(_pder(self.amp) + (0.0,) * len(self.amp),
                         tuple(x / self.phi for x in self.amp)))
        du = lambda t: _pval(dpoly, t) + (_pval(damp, t) * self._exp(t) if self.amp else 0.0)
        return [(t, self.u(t)) for t in self._bisect_roots(du)]


@dataclass(frozen=True)
class SatArc(Arc):
    """Control saturated at a constant value."""

    u0: float
    v_start: float
    p_start: float

    def u(self, t):
        return self.u0 + 0.0 * t if isinstance(t, np.ndarray) else self.u0

    def v(self, t):
        return self.v_start + self.u0 * (t - self.t_start)

    def p(self, t):
        dt = t - self.t_start
        return self.p_start + (self.v_start + 0.5 * self.u0 * dt) * dt

    def energy(self, t1, t2):
        return 0.5 * self.u0**2 * (t2 - t1)

    def cubic_amp(self):
        a = 0.0
        b = self.u0
        c = self.v_start - self.u0 * self.t_start
        d = self.p_start - self.v_start * self.t_start + 0.5 * self.u0 * self.t_start**2
        return a, b, c, d, (), None


@dataclass(frozen=True)
class CruiseArc(Arc):
    """Constant speed, zero control."""

    v0: float
    p_start: float

    def u(self, t):
        return 0.0 * t if isinstance(t, np.ndarray) else 0.0

    def v(self, t):
        return self.v0 + 0.0 * t if isinstance(t, np.ndarray) else self.v0

    def p(self, t):
        return self.p_start + self.v0 * (t - self.t_start)

    def energy(self, t1, t2):
        return 0.0

    def cubic_amp(self):
        return 0.0, 0.0, self.v0, self.p_start - self.v0 * self.t_start, (), None


# ---------------------------------------------------------------------------
# piecewise trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostBreakdown:
    travel_time: float
    energy: float
    objective: float


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Immutable contiguous sequence of arcs covering [t0, tf].

    Arcs must be contiguous in time and continuous in p and v at breakpoints
    to within 1e-9 relative tolerance (u may kink at junctions but is
    continuous for every solver-produced profile; that is checked by the
    audit, not here).
    """

    arcs: tuple

    def __post_init__(self):
        if not self.arcs:
            raise ConfigError("trajectory needs at least one arc")
        prev = None
        for arc in self.arcs:
            if prev is not None:
                if abs(arc.t_start - prev.t_end) > _EDGE_TOL * max(1.0, abs(prev.t_end)):
                    raise ConfigError(
                        f"arcs not contiguous at t={prev.t_end} vs {arc.t_start}")
                tb = prev.t_end
                for name, f0, f1 in (("p", prev.p(tb), arc.p(tb)),
                                     ("v", prev.v(tb), arc.v(tb))):
                    if abs(f1 - f0) > 1e-9 * max(1.0, abs(f0)):
                        raise ConfigError(
                            f"{name} discontinuous at breakpoint t={tb}: {f0} vs {f1}")
            prev = arc

    @property
    def t0(self) -> float:
        return self.arcs[0].t_start

    @property
    def tf(self) -> float:
        return self.arcs[-1].t_end

    @property
    def vf(self) -> float:
        return float(self.arcs[-1].v(self.tf))

    @property
    def breakpoints(self):
        return tuple([a.t_start for a in self.arcs] + [self.tf])

    def arc_at(self, t: float) -> Arc:
        if not (self.t0 - _EDGE_TOL <= t <= self.tf + _EDGE_TOL):
            raise DomainError(f"t={t} outside [{self.t0}, {self.tf}]")
        starts = [a.t_start for a in self.arcs]
        i = bisect.bisect_right(starts, t) - 1
        i = max(0, min(i, len(self.arcs) - 1))
        return self.arcs[i]

    def eval(self, t: float):
        """(p, v, u) at time t. Raises DomainError outside [t0, tf]."""
        arc = self.arc_at(t)
        return float(arc.p(t)), float(arc.v(t)), float(arc.u(t))

    def sample(self, ts: np.ndarray):
        """Vectorized (p, v, u) arrays over sorted sample times inside the domain."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < self.t0 - _EDGE_TOL or ts.max() > self.tf + _EDGE_TOL):
            raise DomainError("sample times outside trajectory domain")
        p = np.empty_like(ts)
        v = np.empty_like(ts)
        u = np.empty_like(ts)
        starts = np.array([a.t_start for a in self.arcs])
        idx = np.clip(np.searchsorted(starts, ts, side="right") - 1, 0, len(self.arcs) - 1)
        for i, arc in enumerate(self.arcs):
            m = idx == i
            if np.any(m):
                p[m] = arc.p(ts[m])
                v[m] = arc.v(ts[m])
                u[m] = arc.u(ts[m])
        return p, v, u

    def cost(self, gamma: float) -> CostBreakdown:
        """Objective J = gamma*(tf - t0) + integral of 0.5 u^2, arc by arc in closed form."""
        T = self.tf - self.t0
        E = sum(a.energy(a.t_start, a.t_end) for a in self.arcs)
        return CostBreakdown(travel_time=T, energy=E, objective=gamma * T + E)

    def position_root(self, target: float, lo: float | None = None, hi: float | None = None) -> float:
        """First time p(t) = target via bisection (p nondecreasing in practice)."""
        lo = self.t0 if lo is None else lo
        hi = self.tf if hi is None else hi
        plo = self.eval(lo)[0]
        phi_ = self.eval(hi)[0]
        if not (min(plo, phi_) - 1e-6 <= target <= max(plo, phi_) + 1e-6):
            raise DomainError(f"position {target} not bracketed on [{lo}, {hi}]")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (self.eval(lo)[0] - target) * (self.eval(mid)[0] - target) <= 0.0:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    def extended(self, until: float) -> "PiecewiseTrajectory":
        """Append a constant-speed arc from the terminal state out to ``until``.

        Models the vehicle holding its exit speed after leaving the merging
        zone, which followers' constraint checks rely on.
        """
        if until <= self.tf + _EDGE_TOL:
            return self
        tail = CruiseArc(t_start=self.tf, t_end=until, v0=self.vf,
                         p_start=self.eval(self.tf)[0])
        return PiecewiseTrajectory(self.arcs + (tail,))


def arc_extrema(arc: Arc):
    """(v stationary points, u stationary points) of one arc, endpoints excluded."""
    return arc.v_extrema(), arc.u_extrema()


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConflictMap:
    """Symmetric (road, movement) conflict lookup.

    ``pairs`` empty means the default four-approach geometry with through
    movements only: perpendicular roads conflict in the merging zone, the
    same road and the opposite road do not. Explicit pairs switch to strict
    mode where unknown keys raise.
    """

    OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}

    pairs: frozenset = frozenset()
    known: frozenset = frozenset()

    @classmethod
    def from_pairs(cls, pair_list):
        pairs = set()
        known = set()
        for (ra, ma), (rb, mb) in pair_list:
            a, b = (ra, ma), (rb, mb)
            pairs.add(frozenset((a, b)))
            known.update((a, b))
        return cls(pairs=frozenset(pairs), known=frozenset(known))

    def conflicts(self, a, b) -> bool:
        if not self.pairs and not self.known:
            ra, rb = a[0], b[0]
            if ra == rb or self.OPPOSITE.get(ra) == rb:
                return False
            return True
        if a not in self.known or b not in self.known:
            raise ConfigError(f"unknown (road, movement) pair: {a if a not in self.known else b}")
        return frozenset((a, b)) in self.pairs


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, limits, and weights shared by every CAV in a scenario."""

    L: float = 370.0          # control-zone length up to the merging zone [m]
    S: float = 30.0           # merging-zone side [m]
    v_min: float = 0.0
    v_max: float = 13.5
    u_min: float = -3.0
    u_max: float = 3.0
    gamma: float = 0.1        # time weight in J = gamma*T + integral 0.5 u^2
    phi: float = 1.0          # reaction-time headway [s]
    delta0: float = 0.0       # standstill gap [m]
    rng_seed: int = 0
    conflict: ConflictMap = field(default_factory=ConflictMap)

    def __post_init__(self):
        if self.L <= 0 or self.S <= 0:
            raise ConfigError("L and S must be positive")
        if not (self.v_min < self.v_max):
            raise ConfigError("need v_min < v_max")
        if self.v_min < 0:
            raise ConfigError("v_min must be nonnegative")
        if not (self.u_min < 0.0 < self.u_max):
            raise ConfigError("need u_min < 0 < u_max")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if self.phi < 0 or self.delta0 < 0:
            raise ConfigError("phi and delta0 must be nonnegative")

    @property
    def exit_distance(self) -> float:
        """Distance from control-zone entry to merging-zone exit."""
        return self.L + self.S


@dataclass(frozen=True)
class VehicleArrival:
    """A CAV entering the control zone."""

    id: int
    t0: float
    v0: float
    road: str
    lane: int = 0
    movement: str = "through"
    u_min: float | None = None   # optional per-vehicle control bounds
    u_max: float | None = None
    force_tf: float | None = None
    force_profile: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.force_profile is not None:
            object.__setattr__(self, "force_profile", tuple(float(x) for x in self.force_profile))
            if len(self.force_profile) != 4:
                raise ConfigError(f"CAV {self.id}: force_profile needs 4 cubic coefficients")
            if self.force_tf is None:
                raise ConfigError(f"CAV {self.id}: force_profile requires force_tf")

    def limits(self, cfg: ScenarioConfig):
        lo = self.u_min if self.u_min is not None else cfg.u_min
        hi = self.u_max if self.u_max is not None else cfg.u_max
        if not (lo < 0.0 < hi):
            raise ConfigError(f"CAV {self.id}: need u_min < 0 < u_max")
        return lo, hi

    def validate(self, cfg: ScenarioConfig):
        if not (cfg.v_min < self.v0 < cfg.v_max):
            raise ConfigError(
                f"CAV {self.id}: entry speed {self.v0} outside ({cfg.v_min}, {cfg.v_max})")
        self.limits(cfg)
