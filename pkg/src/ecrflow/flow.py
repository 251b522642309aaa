"""Event-driven integration of event-selected vector fields.

The integrator is scipy's explicit Runge-Kutta 4(5) pair driven one step at
a time.  After every accepted step the event functions are evaluated; a sign
change is bracketed on the dense output, located with Brent's method, and
the state at the crossing is recomputed by integrating from the start of the
step so that no interpolation error leaks into the trajectory.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

from .errors import (
    IntegrationError,
    MaxEventsExceeded,
    MissingRegionField,
    NoImpact,
    NonTransverseCrossing,
)
from .model import Corner, EventModel, classify, corner_to_str


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances for :func:`flow` and everything built on it.

    ``event_tol`` is measured in units of ``h``; ``horizon`` bounds every
    search for a surface or section crossing.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    event_tol: float = 1e-10
    max_step: float = np.inf
    max_events: int = 10_000
    horizon: float = 100.0

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "event_tol", "max_step", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")

    def replace(self, **changes) -> "IntegratorConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EventRecord:
    time: float
    state: np.ndarray
    surfaces: tuple  # 0-based indices of the surfaces crossed together
    corner_before: Corner
    corner_after: Corner


@dataclass
class Trajectory:
    """Samples and crossings of one call to :func:`flow`.

    ``jacobians`` holds one state-transition matrix per smooth segment when
    the variational equation was integrated alongside; segment ``k`` runs
    from event ``k-1`` (or the start) to event ``k`` (or the end).
    """

    times: np.ndarray
    states: np.ndarray
    corners: List[Corner]
    events: List[EventRecord]
    jacobians: Optional[List[np.ndarray]] = None
    stopped_at_section: bool = False

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_corner(self) -> Corner:
        return self.corners[-1]

    def write_csv(self, target) -> None:
        """Write ``t, x_1..x_d, corner`` rows to a path or open text file."""
        d = self.states.shape[1]
        with _text_sink(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)] + ["corner"])
            for t, x, b in zip(self.times, self.states, self.corners):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [corner_to_str(b)])

    def write_events_csv(self, target) -> None:
        with _text_sink(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "surfaces", "corner_before", "corner_after"])
            for ev in self.events:
                surf = "{" + ",".join(str(j + 1) for j in ev.surfaces) + "}"
                w.writerow([repr(float(ev.time)), surf, corner_to_str(ev.corner_before), corner_to_str(ev.corner_after)])


@contextlib.contextmanager
def _text_sink(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


# -- low level stepping -----------------------------------------------------


class _Watch:
    """Upward zero crossings of ``g(x)`` restricted to ``mask``.

    ``rate(k, x)`` is the time derivative of ``g_k`` along the active field,
    used to polish located roots.  ``not_before`` suppresses roots earlier
    than a given time, per component.
    """

    def __init__(self, g, mask, rate, not_before=None, forbid=None):
        self.g = g
        self.mask = np.asarray(mask, dtype=bool)
        self.rate = rate
        self.not_before = np.full(self.mask.size, -np.inf) if not_before is None else np.asarray(not_before, float)
        self.forbid = None if forbid is None else np.asarray(forbid, dtype=bool)


def _rk45(rhs, t0, y0, t1, cfg: IntegratorConfig):
    return RK45(rhs, t0, y0, t1, rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)


def _advance(rhs, t0, y0, t1, cfg):
    """Integrate ``rhs`` from ``t0`` to ``t1`` without event handling."""
    if t1 == t0:
        return np.array(y0, dtype=float)
    solver = _rk45(rhs, t0, np.array(y0, dtype=float), t1, cfg)
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(msg)
    return solver.y.copy()


def _segment(rhs, d, t0, y0, t1, cfg, watch: _Watch, domain=None):
    """Run until ``t1`` or the first watched crossing.

    Returns ``(t_end, y_end, hits, samples)`` where ``hits`` is the list of
    watched components found crossing at ``t_end`` (empty when the budget
    ran out) and ``samples`` the accepted step ends strictly before it.
    """
    samples = []
    if t1 <= t0:
        return t0, np.array(y0, dtype=float), [], samples
    solver = _rk45(rhs, t0, np.array(y0, dtype=float), t1, cfg)
    g_prev = watch.g(y0[:d])
    while True:
        t_a, y_a = solver.t, solver.y.copy()
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(msg)
        t_b, y_b = solver.t, solver.y
        g_b = watch.g(y_b[:d])
        if watch.forbid is not None:
            bad = watch.forbid & (g_b < -cfg.event_tol)
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise NonTransverseCrossing(j, y_b[:d].copy(), None)
        cand = watch.mask & (g_prev < 0) & (g_b >= 0) & (t_b > watch.not_before)
        roots = {}
        if cand.any():
            dense = solver.dense_output()
            for k in np.flatnonzero(cand):
                fk = lambda s, k=k: watch.g(dense(s)[:d])[k]
                lo = max(t_a, watch.not_before[k])
                if lo > t_a and fk(lo) >= 0:
                    continue
                try:
                    r = brentq(fk, lo, t_b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                except ValueError:
                    r = t_b
                roots[int(k)] = r
        if roots:
            k0 = min(roots, key=roots.get)
            t_star = roots[k0]
            y_star = _advance(rhs, t_a, y_a, t_star, cfg)
            for _ in range(6):
                gk = watch.g(y_star[:d])[k0]
                if abs(gk) <= 1e-3 * cfg.event_tol:
                    break
                rate = watch.rate(k0, y_star[:d])
                if rate == 0:
                    break
                dt = -gk / rate
                y_star = _advance(rhs, t_star, y_star, t_star + dt, cfg)
                t_star += dt
            g_star = watch.g(y_star[:d])
            hits = [int(k) for k in np.flatnonzero(watch.mask & (g_star >= -cfg.event_tol))
                    if t_star >= watch.not_before[k]]
            if k0 not in hits:
                hits.append(k0)
            return t_star, y_star, sorted(hits), samples
        if domain is not None:
            domain(y_b[:d])
        if solver.status == "finished":
            return t_b, y_b.copy(), [], samples
        samples.append((t_b, y_b[:d].copy()))
        g_prev = g_b


def _field_rhs(model: EventModel, b: Corner, sign: float = 1.0, jacobian: bool = False):
    d = model.dim
    if not jacobian:
        return lambda t, y: sign * model.F(b, y)

    def rhs(t, y):
        x = y[:d]
        X = y[d:].reshape(d, d)
        return np.concatenate([sign * model.F(b, x), (sign * model.DF(b, x) @ X).ravel()])

    return rhs


def _as_state(model, x):
    x = np.array(x, dtype=float).reshape(-1)
    if x.size != model.dim:
        raise ValueError(f"state has size {x.size}, model dimension is {model.dim}")
    return x


# -- the switched flow ------------------------------------------------------


def flow(
    model: EventModel,
    t: float,
    x,
    config: Optional[IntegratorConfig] = None,
    *,
    jacobian: bool = False,
    section: Optional[Callable[[np.ndarray], float]] = None,
    section_rate: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    section_after: float = 0.0,
):
    """Evaluate ``phi(t, x)`` by event-driven integration.

    Parameters
    ----------
    model : EventModel
    t : float
        Final time.  Negative values integrate the reversed model; the
        returned trajectory is still listed in increasing time, so it runs
        from ``t`` to 0 and ends at ``x``.
    x : array_like
        Initial state.
    config : IntegratorConfig, optional
    jacobian : bool
        Also integrate the classical variational equation on every smooth
        segment.  Each segment restarts from the identity; the matrices are
        returned in :attr:`Trajectory.jacobians`.
    section : callable, optional
        Scalar function.  Integration stops early at the first upward zero
        crossing occurring after ``section_after``.
    section_rate : callable, optional
        ``section_rate(x, F)`` giving the time derivative of ``section``;
        used to polish the stopping time.

    Returns
    -------
    state : ndarray
    trajectory : Trajectory
    """
    cfg = config or IntegratorConfig()
    x = _as_state(model, x)
    if t < 0:
        if jacobian:
            raise ValueError("jacobians of backward flows: use model.reversed() explicitly")
        y, tr = flow(model.reversed(), -t, x, cfg, section=section, section_rate=section_rate,
                     section_after=section_after)
        return y, _unreverse(tr)
    model.check_domain(x)
    d, n = model.dim, model.n_events
    b = classify(model, x)
    times, states, corners = [0.0], [x.copy()], [b]
    events: List[EventRecord] = []
    jacs = [] if jacobian else None
    y = np.concatenate([x, np.eye(d).ravel()]) if jacobian else x.copy()
    t_now = 0.0
    stopped = False

    def rate_fn(k, xx, b_):
        f = model.F(b_, xx)
        if k < n:
            return float(model.event_jacobian(xx)[k] @ f)
        if section_rate is not None:
            return float(section_rate(xx, f))
        return 0.0

    while t_now < t:
        mask = np.array([s < 0 for s in b] + ([True] if section is not None else []))
        forbid = np.array([s > 0 for s in b] + ([False] if section is not None else []))
        if section is None:
            g = model.offset
        else:
            g = lambda xx: np.append(model.offset(xx), section(xx))
        not_before = np.full(mask.size, -np.inf)
        if section is not None:
            not_before[-1] = section_after
        watch = _Watch(g, mask, lambda k, xx, b_=b: rate_fn(k, xx, b_), not_before, forbid)
        try:
            t1, y1, hits, samples = _segment(_field_rhs(model, b, jacobian=jacobian), d, t_now, y, t, cfg,
                                             watch, model.check_domain)
        except MissingRegionField:
            raise
        for ts, xs in samples:
            times.append(ts)
            states.append(xs)
            corners.append(b)
        x1 = y1[:d]
        if section is not None and n in hits:
            times.append(t1)
            states.append(x1.copy())
            corners.append(b)
            y, t_now, stopped = y1, t1, True
            break
        if not hits:
            times.append(t1)
            states.append(x1.copy())
            corners.append(b)
            y, t_now = y1, t1
            break
        if len(events) >= cfg.max_events:
            raise MaxEventsExceeded(cfg.max_events)
        b_new = list(b)
        for j in hits:
            b_new[j] = 1
        b_new = tuple(b_new)
        G = model.event_jacobian(x1)
        f_before = model.F(b, x1)
        f_after = model.F(b_new, x1)
        for j in hits:
            for val in (G[j] @ f_before, G[j] @ f_after):
                if val < model.f_min:
                    raise NonTransverseCrossing(j, x1.copy(), float(val))
        events.append(EventRecord(float(t1), x1.copy(), tuple(hits), b, b_new))
        times.append(t1)
        states.append(x1.copy())
        corners.append(b_new)
        if jacobian:
            jacs.append(y1[d:].reshape(d, d).copy())
            y = np.concatenate([x1, np.eye(d).ravel()])
        else:
            y = y1
        b, t_now = b_new, t1
        if section is not None and t1 >= section_after and abs(section(x1)) <= cfg.event_tol:
            # section coincides with the surfaces just crossed
            stopped = True
            break
    if jacobian:
        jacs.append(y[d:].reshape(d, d).copy())
    tr = Trajectory(np.array(times), np.array(states), corners, events, jacs, stopped)
    return tr.final_state.copy(), tr


def _unreverse(tr: Trajectory) -> Trajectory:
    """Express a trajectory of the reversed model in forward-time terms."""
    neg = lambda b: tuple(-s for s in b)
    events = [EventRecord(-e.time, e.state, e.surfaces, neg(e.corner_after), neg(e.corner_before))
              for e in reversed(tr.events)]
    return Trajectory(-tr.times[::-1], tr.states[::-1].copy(), [neg(b) for b in tr.corners[::-1]],
                      events, None, tr.stopped_at_section)


# -- smooth flows of a single extension ----------------------------------------


def _smooth_until(model, b, x, duration, surfaces, sign, cfg):
    """Flow ``sign * F_b`` for ``duration`` watching ``sign * (h_j - h_j(rho))``.

    Returns ``(elapsed, state, hit)`` with ``hit`` the first surface reached
    or ``None`` when the budget ran out first.
    """
    x = _as_state(model, x)
    surfaces = list(surfaces)
    if not surfaces:
        y = _advance(_field_rhs(model, b, sign), 0.0, x, duration, cfg)
        return duration, y, None
    idx = np.array(surfaces)
    g = lambda xx: sign * model.offset(xx)[idx]
    rate = lambda k, xx: float(model.event_jacobian(xx)[idx[k]] @ model.F(b, xx))
    watch = _Watch(g, np.ones(idx.size, bool), rate)
    t1, y1, hits, _ = _segment(_field_rhs(model, b, sign), model.dim, 0.0, x, duration, cfg, watch)
    if not hits:
        return t1, y1, None
    return t1, y1, int(idx[hits[0]])


def time_to_impact_region(model: EventModel, b: Sequence[int], x, j: int,
                          config: Optional[IntegratorConfig] = None) -> float:
    """Signed time for the smooth flow of ``F_b`` from ``x`` to reach ``H_j``.

    Positive when ``x`` is below the surface (it is reached forward in time),
    negative when above.
    """
    cfg = config or IntegratorConfig()
    b = tuple(b)
    off = model.offset(x)[j]
    if off == 0:
        return 0.0
    sign = 1.0 if off < 0 else -1.0
    elapsed, _, hit = _smooth_until(model, b, x, cfg.horizon, [j], sign, cfg)
    if hit is None:
        raise NoImpact(cfg.horizon, f"surface {j}")
    return sign * elapsed


def _budget(model, b, t, x, direction, cfg):
    """Shared kernel of the budgeted maps: returns ``(tau, zeta)``."""
    x = _as_state(model, x)
    b = tuple(b)
    if direction not in ("+", "-"):
        raise ValueError("direction must be '+' or '-'")
    if direction == "+":
        if t <= 0:
            return 0.0, x
        exits = [j for j, s in enumerate(b) if s < 0]
        off = model.offset(x)
        if any(off[j] >= 0 for j in exits):
            return 0.0, x
        sign = 1.0
    else:
        if t >= 0:
            return 0.0, x
        exits = [j for j, s in enumerate(b) if s > 0]
        off = model.offset(x)
        if any(off[j] <= 0 for j in exits):
            return 0.0, x
        sign = -1.0
    span = abs(t)
    if exits and span > cfg.horizon:
        elapsed, y, hit = _smooth_until(model, b, x, cfg.horizon, exits, sign, cfg)
        if hit is None:
            raise NoImpact(cfg.horizon, "exit boundary")
    else:
        elapsed, y, hit = _smooth_until(model, b, x, span, exits, sign, cfg)
    return sign * elapsed, y


def budgeted_time_to_boundary(model: EventModel, b, t: float, x, direction: str = "+",
                              config: Optional[IntegratorConfig] = None) -> float:
    """Time the flow of ``F_b`` needs to reach its exit boundary, capped by ``t``.

    Forward: ``max(0, min({t} U {tau_j : b_j < 0}))``.
    Backward: ``min(0, max({t} U {tau_j : b_j > 0}))``.
    """
    return _budget(model, b, t, x, direction, config or IntegratorConfig())[0]


def flow_to_boundary(model: EventModel, b, t: float, x, direction: str = "+",
                     config: Optional[IntegratorConfig] = None) -> np.ndarray:
    return _budget(model, b, t, x, direction, config or IntegratorConfig())[1]


def composite_map(model: EventModel, b, t: float, x, direction: str = "+",
                  config: Optional[IntegratorConfig] = None):
    """``(t, x) -> (t - tau, zeta)``: spend part of the time budget in region ``b``."""
    tau, zeta = _budget(model, b, t, x, direction, config or IntegratorConfig())
    return t - tau, zeta


def compose_local_flow(model: EventModel, t: float, x, config: Optional[IntegratorConfig] = None) -> np.ndarray:
    """Local flow as a composition of budgeted region maps.

    Backward maps are applied in reverse lexicographic corner order, then
    forward maps in lexicographic order.  Only valid close to ``rho`` where
    every exit time exists; far away it silently returns the wrong region's
    flow, which is why it serves as a cross-check and not as an integrator.
    """
    cfg = config or IntegratorConfig()
    corners = model.known_corners()
    s, y = float(t), _as_state(model, x)
    for b in reversed(corners):
        s, y = composite_map(model, b, s, y, "-", cfg)
    for b in corners:
        s, y = composite_map(model, b, s, y, "+", cfg)
    return y
