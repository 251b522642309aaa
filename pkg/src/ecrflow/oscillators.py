"""Phase oscillators synchronized by signum feedback.

Two families live on the torus ``R^d / Z^d`` and are integrated on lifts:

* first order, ``q' = nu 1 - delta sign(q)`` inside the control box and
  ``q' = nu 1`` outside;
* second order, ``q'' = alpha 1 - beta q' - delta sign(q)`` inside the box
  and ``q'' = alpha 1 - beta q'`` outside.

The control box is ``{|q_j - k_j| <= Delta for all j}`` around every lattice
point.  Its faces, and the coordinate planes through lattice points, are the
event surfaces: for each coordinate ``j`` the levels ``k + theta`` with
``theta in {-Delta, 0, Delta}`` and ``k`` in a finite window of lifts.
The ``*_local_model`` constructors drop the box and keep only the planes
through the origin, which is the setting of the corner computations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import NoContraction, OutOfDomain, ZeroVelocityRegion
from .flow import IntegratorConfig, flow
from .model import EventModel, all_corners
from .poincare import PeriodicOrbit, Section, orbit_from_anchor, poincare_map


@dataclass(frozen=True)
class Sync1Params:
    d: int = 2
    nu: float = 1.0
    delta: float = 0.5
    Delta: float = 0.1
    lifts: int = 2

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.delta < self.nu:
            raise ValueError("need 0 < delta < nu")
        if not 0 < self.Delta < 0.25:
            raise ValueError("need 0 < Delta < 1/4 so the boxes do not overlap")
        if self.lifts < 1:
            raise ValueError("lifts must be >= 1")

    @property
    def contraction(self) -> float:
        return (self.nu - self.delta) / (self.nu + self.delta)

    @property
    def period(self) -> float:
        """Lap time of the synchronized orbit."""
        nu, de, D = self.nu, self.delta, self.Delta
        return D / (nu + de) + D / (nu - de) + (1 - 2 * D) / nu


@dataclass(frozen=True)
class Sync2Params:
    d: int = 2
    alpha: float = 1.0
    beta: float = 10.0
    delta: float = 0.5
    Delta: float = 0.05
    lifts: int = 2

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.delta < self.alpha:
            raise ValueError("need 0 < delta < alpha")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.Delta < 0.25:
            raise ValueError("need 0 < Delta < 1/4")
        if self.lifts < 1:
            raise ValueError("lifts must be >= 1")

    @property
    def velocity_bracket(self):
        return self.alpha / self.beta, (self.alpha + self.delta) / self.beta


# -- lift bookkeeping ------------------------------------------------------------


def canonical_lift(x, d: int) -> np.ndarray:
    """Shift the first ``d`` (position) coordinates into ``[-1/2, 1/2)``."""
    x = np.array(x, dtype=float)
    x[:d] -= np.floor(x[:d] + 0.5)
    return x


def deck(x, k, d: int) -> np.ndarray:
    """Translate the position part of ``x`` by the integer vector ``k``."""
    x = np.array(x, dtype=float)
    x[:d] += np.asarray(k, dtype=float)
    return x


class _Levels:
    """Surface layout ``x_j = k + theta`` shared by both families."""

    def __init__(self, d: int, Delta: float, lifts: int):
        ks = np.arange(-lifts, lifts + 1)
        self.levels = np.array([k + th for k in ks for th in (-Delta, 0.0, Delta)])
        self.m = self.levels.size
        self.d = d
        self.limit = lifts + 0.5

    def h(self, q):
        return (q[:, None] - self.levels[None, :]).ravel()

    def decode(self, b):
        """Per coordinate: (inside box, sign about the nearest lattice point)."""
        b = np.asarray(b).reshape(self.d, self.m)
        count = np.sum(b > 0, axis=1)
        phase = (count - 1) % 3
        inside = (count > 0) & (phase < 2)
        sign = np.where(phase == 0, -1.0, 1.0)
        return bool(np.all(inside)), sign

    def index(self, j: int, k: int, theta: int) -> int:
        """Event index of the surface ``x_j = k + theta * Delta``."""
        lifts = (self.m // 3 - 1) // 2
        return j * self.m + 3 * (k + lifts) + (theta + 1)


def sync1_model(p: Sync1Params, f_min: Optional[float] = None) -> EventModel:
    """Closed-loop first-order oscillators on the covering space."""
    lv = _Levels(p.d, p.Delta, p.lifts)
    ones = np.ones(p.d)
    Dh = np.kron(np.eye(p.d), np.ones((lv.m, 1)))
    zero = np.zeros((p.d, p.d))

    def field(b, x):
        inside, sign = lv.decode(b)
        return p.nu * ones - p.delta * sign if inside else p.nu * ones

    def domain(x):
        if np.any(np.abs(x) > lv.limit):
            raise OutOfDomain(f"position outside the lift window |x| <= {lv.limit}")

    return EventModel(
        dim=p.d, n_events=p.d * lv.m, h=lv.h, field=field, rho=np.zeros(p.d),
        f_min=f_min if f_min is not None else 0.5 * (p.nu - p.delta),
        Dh=lambda x: Dh, jacobian=lambda b, x: zero, domain=domain,
        name=f"sync1(d={p.d})", levels=np.zeros(p.d * lv.m),
    )


def sync1_local_model(p: Sync1Params, f_min: Optional[float] = None) -> EventModel:
    """``nu 1 - delta sign(x)`` with the coordinate planes as the only surfaces."""
    d = p.d
    fields = {b: (lambda x, v=p.nu - p.delta * np.array(b, float): v.copy()) for b in all_corners(d)}
    zero = np.zeros((d, d))
    return EventModel.from_fields(
        lambda x: np.asarray(x, dtype=float), fields, np.zeros(d),
        f_min if f_min is not None else p.nu - p.delta,
        Dh=lambda x: np.eye(d), jacobians={b: (lambda x: zero) for b in fields}, name=f"sync1-local(d={d})",
    )


def sync1_expected_DP(p: Sync1Params) -> np.ndarray:
    return p.contraction * np.eye(p.d - 1)


def sync1_chart(p: Sync1Params):
    """Piecewise-linear coordinates in which the local sync1 flow is translation.

    Returns ``(chi, chi_inv)``; the pushed-forward field is ``(nu + delta) 1``.
    """
    r = (p.nu + p.delta) / (p.nu - p.delta)

    def chi(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, x, r * x)

    def chi_inv(y):
        y = np.asarray(y, dtype=float)
        return np.where(y < 0, y, y / r)

    return chi, chi_inv


def transverse_basis(d: int) -> np.ndarray:
    """Orthonormal basis of ``{sum(q) = 0}`` (Helmert contrasts)."""
    B = np.zeros((d, d - 1))
    for k in range(1, d):
        B[:k, k - 1] = 1.0
        B[k, k - 1] = -k
        B[:, k - 1] /= np.sqrt(k * (k + 1))
    return B


def sync1_section(p: Sync1Params, level: float = -0.5) -> Section:
    """Section ``mean(q) = level`` carried to ``level + 1`` by one lap."""
    d = p.d
    return Section.linear(np.ones(d) / d, level * np.ones(d), deck=np.ones(d), basis=transverse_basis(d))


def sync1_orbit(p: Sync1Params, config: Optional[IntegratorConfig] = None, level: float = -0.5):
    """The synchronized orbit and its section; returns ``(model, orbit, section)``."""
    m = sync1_model(p)
    sec = sync1_section(p, level)
    orbit = orbit_from_anchor(m, sec, p.period, config)
    return m, orbit, sec


def spread(q) -> float:
    q = np.asarray(q, dtype=float)
    return float(q.max() - q.min())


def synchronization_rate(p: Sync1Params, starts, laps: int = 4, config=None):
    """Fitted per-lap contraction of the spread along Poincare iterates.

    Returns ``(rates, spreads)`` with one fitted rate per start.
    """
    m, orbit, sec = sync1_orbit(p, config)
    rates, hist = [], []
    for x in starts:
        x = np.asarray(x, dtype=float)
        s = [spread(x)]
        for _ in range(laps):
            x = poincare_map(m, orbit, sec, x, config)
            s.append(spread(x))
        s = np.array(s)
        slope = np.polyfit(np.arange(laps + 1), np.log(s), 1)[0]
        rates.append(float(np.exp(slope)))
        hist.append(s)
    return np.array(rates), np.array(hist)


def desynchronized_starts(p: Sync1Params, n: int, size: float, seed: int = 0, level: float = -0.5):
    """Random points on the section with spread at most about ``size``."""
    rng = np.random.default_rng(seed)
    B = transverse_basis(p.d)
    out = []
    for _ in range(n):
        u = rng.normal(size=p.d - 1)
        u *= size * rng.uniform(0.3, 1.0) / np.linalg.norm(u)
        out.append(level * np.ones(p.d) + B @ u)
    return out


# -- second order ---------------------------------------------------------------


def _sync2_parts(p: Sync2Params):
    d = p.d
    A = np.block([[np.zeros((d, d)), np.eye(d)], [np.zeros((d, d)), -p.beta * np.eye(d)]])
    return d, A


def sync2_model(p: Sync2Params, f_min: Optional[float] = None) -> EventModel:
    """Closed-loop second-order oscillators; state ``(q, q')`` of size ``2d``."""
    d, A = _sync2_parts(p)
    lv = _Levels(d, p.Delta, p.lifts)
    Dh = np.hstack([np.kron(np.eye(d), np.ones((lv.m, 1))), np.zeros((d * lv.m, d))])
    ones = np.ones(d)

    def field(b, x):
        inside, sign = lv.decode(b)
        acc = p.alpha * ones - p.beta * x[d:]
        if inside:
            acc = acc - p.delta * sign
        return np.concatenate([x[d:], acc])

    def domain(x):
        if np.any(np.abs(x[:d]) > lv.limit):
            raise OutOfDomain(f"position outside the lift window |q| <= {lv.limit}")
        if np.any(x[d:] <= 0):
            raise ZeroVelocityRegion("a velocity component reached zero")

    return EventModel(
        dim=2 * d, n_events=d * lv.m, h=lambda x: lv.h(x[:d]), field=field, rho=np.zeros(2 * d),
        f_min=f_min if f_min is not None else 0.1 * (p.alpha - p.delta) / p.beta,
        Dh=lambda x: Dh, jacobian=lambda b, x: A, domain=domain,
        name=f"sync2(d={d})", levels=np.zeros(d * lv.m),
    )


def sync2_local_model(p: Sync2Params, nu: float, f_min: Optional[float] = None) -> EventModel:
    """Signum-feedback field with only the planes ``q_j = 0``, based at ``(0, nu 1)``."""
    d, A = _sync2_parts(p)
    fields = {}
    for b in all_corners(d):
        bb = np.array(b, float)
        fields[b] = lambda x, bb=bb: np.concatenate([x[d:], p.alpha - p.beta * x[d:] - p.delta * bb])
    Dh = np.hstack([np.eye(d), np.zeros((d, d))])
    return EventModel.from_fields(
        lambda x: np.asarray(x, dtype=float)[:d], fields, np.concatenate([np.zeros(d), nu * np.ones(d)]),
        f_min if f_min is not None else 0.5 * nu, Dh=lambda x: Dh,
        jacobians={b: (lambda x: A) for b in fields}, name=f"sync2-local(d={d})",
    )


def sync2_variational_X(p: Sync2Params, s: float) -> np.ndarray:
    """Closed-form state-transition matrix of the smooth segments."""
    d = p.d
    e = np.exp(-p.beta * s)
    I = np.eye(d)
    return np.block([[I, (1 - e) / p.beta * I], [np.zeros((d, d)), e * I]])


def sync2_expected_saltation(p: Sync2Params, nu: float) -> np.ndarray:
    d = p.d
    I = np.eye(d)
    return np.block([[I, np.zeros((d, d))], [-(2 * p.delta / nu) * I, I]])


def _scalar(p: Sync2Params) -> Sync2Params:
    return Sync2Params(1, p.alpha, p.beta, p.delta, p.Delta, p.lifts)


def scalar_transit(p: Sync2Params, start: float, v: float, stop: float, config=None):
    """Velocity and elapsed time of the ``d = 1`` system from ``(start, v)`` to position ``stop``."""
    cfg = config or IntegratorConfig()
    m = sync2_model(_scalar(p))
    y, tr = flow(m, cfg.horizon, [start, v], cfg, section=lambda z: z[0] - stop,
                 section_rate=lambda z, f: float(f[0]))
    if not tr.stopped_at_section:
        raise OutOfDomain(f"position {stop} not reached from {start}")
    return float(y[1]), tr.final_time


def sync2_return_map(p: Sync2Params, v: float, config=None) -> float:
    """Velocity at the next lattice point, starting at position 0 with velocity ``v``.

    One lap: decelerate across ``[0, Delta)``, relax freely across the gap,
    accelerate across ``[1 - Delta, 1)``.
    """
    return scalar_transit(p, 0.0, v, 1.0, config)[0]


def sync2_find_velocity(p: Sync2Params, config=None, xtol: float = 1e-14) -> float:
    """Fixed point of :func:`sync2_return_map` inside ``(alpha/beta, (alpha+delta)/beta)``."""
    lo, hi = p.velocity_bracket
    P_lo = sync2_return_map(p, lo, config)
    P_hi = sync2_return_map(p, hi, config)
    if not (lo <= P_lo <= hi and lo <= P_hi <= hi):
        raise NoContraction(f"return map sends [{lo:g}, {hi:g}] to [{P_lo:g}, {P_hi:g}]")
    return brentq(lambda v: sync2_return_map(p, v, config) - v, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def sync2_section(p: Sync2Params, anchor) -> Section:
    """Section ``mean(q) = mean(anchor q)`` with tangent coordinates (transverse q, all q')."""
    d = p.d
    normal = np.concatenate([np.ones(d) / d, np.zeros(d)])
    B = np.zeros((2 * d, 2 * d - 1))
    B[:d, : d - 1] = transverse_basis(d)
    B[d:, d - 1:] = np.eye(d)
    return Section.linear(normal, anchor, deck=np.concatenate([np.ones(d), np.zeros(d)]), basis=B)


@dataclass
class Sync2Orbit:
    params: Sync2Params
    nu_beta: float
    model: EventModel
    orbit: PeriodicOrbit
    section: Section


def sync2_find_orbit(p: Sync2Params, config=None, gap: Optional[float] = None) -> Sync2Orbit:
    """Locate the synchronized orbit and a smooth section just ahead of the box.

    The section sits at mean position ``-Delta - gap`` (default gap
    ``Delta / 50``), outside the box but close to its entry corner.
    """
    cfg = config or IntegratorConfig()
    nu = sync2_find_velocity(p, cfg)
    gap = p.Delta / 50 if gap is None else gap
    a = -p.Delta - gap
    v_a, t1 = scalar_transit(p, 0.0, nu, 1.0 + a, cfg)
    _, t2 = scalar_transit(p, a, v_a, 0.0, cfg)
    anchor = np.concatenate([a * np.ones(p.d), v_a * np.ones(p.d)])
    m = sync2_model(p)
    sec = sync2_section(p, anchor)
    orbit = orbit_from_anchor(m, sec, t1 + t2, cfg, tol_orbit=1e-7)
    return Sync2Orbit(p, nu, m, orbit, sec)


def sync2_expected_DP(p: Sync2Params, nu_beta: float) -> np.ndarray:
    """Leading term ``[[(1 - 2 delta / (beta nu)) I_{d-1}, 0], [0, 0]]`` in section coordinates."""
    d = p.d
    L = np.zeros((2 * d - 1, 2 * d - 1))
    L[: d - 1, : d - 1] = (1 - 2 * p.delta / (p.beta * nu_beta)) * np.eye(d - 1)
    return L


def sync2_contraction_interval(p: Sync2Params):
    """Range of ``1 - 2 delta / (beta nu)`` as ``nu`` sweeps the velocity bracket."""
    return 1 - 2 * p.delta / p.alpha, 1 - 2 * p.delta / (p.alpha + p.delta)
