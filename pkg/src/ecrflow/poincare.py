"""Sections, impact and return maps, stability tests and flowbox charts."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from .errors import (
    ECRError,
    NoImpact,
    NonTransverseSection,
    NoReturn,
    SectionOnDiscontinuity,
    TransversalityViolation,
)
from .flow import EventRecord, IntegratorConfig, Trajectory, flow
from .model import EventModel, ball_samples, classify, fd_jacobian, validate_transversality
from .variational import Cluster, all_word_derivatives, clusters_of, combo_label


@dataclass(frozen=True, eq=False)
class Section:
    """Level set ``sigma(x) = level`` through ``anchor``.

    ``deck`` is the lift translation accumulated over one lap of a periodic
    orbit on a torus; returns are detected on ``x - deck``.  ``basis``
    optionally fixes the orthonormal tangent coordinates used for return
    map derivatives.
    """

    sigma: Callable[[np.ndarray], float]
    level: float
    anchor: np.ndarray
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    deck: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None

    @classmethod
    def linear(cls, normal, anchor, deck=None, basis=None) -> "Section":
        normal = np.asarray(normal, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        if basis is not None:
            basis = np.asarray(basis, dtype=float)
            if basis.shape != (anchor.size, anchor.size - 1) or np.abs(normal @ basis).max() > 1e-12:
                raise ValueError("basis must span the hyperplane orthogonal to the normal")
        return cls(lambda x: float(normal @ x), float(normal @ anchor), anchor, lambda x: normal,
                   None if deck is None else np.asarray(deck, dtype=float), basis)

    def value(self, x) -> float:
        return float(self.sigma(np.asarray(x, dtype=float))) - self.level

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return fd_jacobian(lambda y: np.atleast_1d(self.sigma(y)), x).ravel()

    @property
    def shift(self) -> np.ndarray:
        return np.zeros_like(self.anchor) if self.deck is None else self.deck


def _impact(model: EventModel, x, section: Section, cfg: IntegratorConfig, shift=None):
    """``(mu, psi(x))`` for the section translated by ``shift``."""
    x = np.asarray(x, dtype=float)
    s = np.zeros(model.dim) if shift is None else shift
    val = section.value(x - s)
    if abs(val) <= cfg.event_tol:
        return 0.0, x.copy()
    if val < 0:
        y, tr = flow(model, cfg.horizon, x, cfg, section=lambda z: section.value(z - s),
                     section_rate=lambda z, f: float(section.gradient(z - s) @ f))
    else:
        y, tr = flow(model, -cfg.horizon, x, cfg, section=lambda z: -section.value(z - s),
                     section_rate=lambda z, f: -float(section.gradient(z - s) @ f))
    if not tr.stopped_at_section:
        raise NoImpact(cfg.horizon, "section")
    mu = tr.times[-1] if val < 0 else tr.times[0]
    f = model.F(classify(model, y), y)
    rate = float(section.gradient(y - s) @ f)
    if rate < model.f_min:
        raise NonTransverseSection(rate)
    return float(mu), y


def time_to_impact(model: EventModel, x, section: Section, config: Optional[IntegratorConfig] = None) -> float:
    """Signed time for the switched flow from ``x`` to reach the section."""
    return _impact(model, x, section, config or IntegratorConfig())[0]


def impact_map(model: EventModel, x, section: Section, config: Optional[IntegratorConfig] = None) -> np.ndarray:
    return _impact(model, x, section, config or IntegratorConfig())[1]


@dataclass
class PeriodicOrbit:
    anchor: np.ndarray
    period: float
    deck: np.ndarray
    times: np.ndarray
    samples: np.ndarray
    crossings: List[EventRecord]

    @property
    def crossing_clusters(self) -> List[Cluster]:
        return [Cluster(e.state, e.surfaces, e.corner_before) for e in self.crossings]


def orbit_from_anchor(model: EventModel, section: Section, period_guess: float,
                      config: Optional[IntegratorConfig] = None, tol_orbit: float = 1e-8) -> PeriodicOrbit:
    """Measure the period of the orbit through ``section.anchor`` and check closure.

    The return is searched in ``(period_guess / 2, 3 period_guess / 2)``.
    """
    cfg = config or IntegratorConfig()
    anchor = np.asarray(section.anchor, dtype=float)
    y, tr = _first_return(model, section, anchor, period_guess, cfg)
    err = float(np.linalg.norm(y - section.shift - anchor))
    if err > tol_orbit:
        raise ECRError(f"orbit does not close: |phi(T, anchor) - anchor| = {err:.3g}")
    T = tr.final_time
    return PeriodicOrbit(anchor, T, section.shift.copy(), tr.times, tr.states, tr.events)


def _first_return(model, section, x, period, cfg):
    s = section.shift
    window = (0.5 * period, 1.5 * period)
    y, tr = flow(model, window[1], x, cfg, section=lambda z: section.value(z - s),
                 section_rate=lambda z, f: float(section.gradient(z - s) @ f), section_after=window[0])
    if not tr.stopped_at_section:
        raise NoReturn(window)
    return y, tr


def poincare_map(model: EventModel, orbit: PeriodicOrbit, section: Section, x,
                 config: Optional[IntegratorConfig] = None) -> np.ndarray:
    """First return of ``x`` to the section, brought back by the deck translation."""
    cfg = config or IntegratorConfig()
    y, _ = _first_return(model, section, np.asarray(x, dtype=float), orbit.period, cfg)
    return y - section.shift


def return_time(model, orbit, section, x, config=None) -> float:
    cfg = config or IntegratorConfig()
    return _first_return(model, section, np.asarray(x, dtype=float), orbit.period, cfg)[1].final_time


def section_basis(section: Section) -> np.ndarray:
    """Orthonormal basis of the tangent space of the section at its anchor."""
    if section.basis is not None:
        return section.basis
    return null_space(section.gradient(section.anchor)[None, :])


@dataclass
class PoincareDerivative:
    """Per-word derivatives of the return map in section coordinates."""

    basis: np.ndarray
    matrices: Dict[str, np.ndarray]
    impact_jacobian: np.ndarray
    clusters: List[Cluster]
    period: float


def check_smooth_anchor(model: EventModel, anchor, event_tol: float) -> None:
    off = np.abs(model.offset(anchor))
    j = int(np.argmin(off))
    if off[j] <= event_tol:
        raise SectionOnDiscontinuity(j, float(off[j]))


def poincare_derivative(model: EventModel, orbit: PeriodicOrbit, section: Section,
                        config: Optional[IntegratorConfig] = None) -> PoincareDerivative:
    """``DP_w = B^T Dpsi D_x phi_w(T, anchor) B`` for every word combination."""
    cfg = config or IntegratorConfig()
    anchor = np.asarray(section.anchor, dtype=float)
    check_smooth_anchor(model, anchor, cfg.event_tol)
    _, tr = flow(model, orbit.period, anchor, cfg, jacobian=True)
    y = tr.final_state
    f = model.F(tr.final_corner, y)
    g = section.gradient(y - section.shift)
    gf = float(g @ f)
    if gf < model.f_min:
        raise NonTransverseSection(gf)
    Dpsi = np.eye(model.dim) - np.outer(f, g) / gf
    B = section_basis(section)
    cls = clusters_of(tr)
    mats = {}
    for combo, D in all_word_derivatives(model, orbit.period, anchor, cfg, trajectory=tr).items():
        mats[combo_label(combo, cls) or "smooth"] = B.T @ Dpsi @ D[:, 1:] @ B
    return PoincareDerivative(B, mats, Dpsi, cls, orbit.period)


def poincare_fd(model, orbit, section, eps: float = 1e-6, config=None, directions=None, one_sided=False):
    """Finite-difference derivative of the return map in section coordinates.

    With ``directions`` (coordinates in the section basis) a matrix of
    one-sided differences, one column per direction, is returned instead.
    """
    cfg = config or IntegratorConfig()
    B = section_basis(section)
    a = np.asarray(section.anchor, dtype=float)
    P0 = poincare_map(model, orbit, section, a, cfg)
    if directions is not None:
        cols = [B.T @ (poincare_map(model, orbit, section, a + eps * (B @ u), cfg) - P0) / eps for u in directions]
        return np.column_stack(cols)
    cols = []
    for k in range(B.shape[1]):
        e = B[:, k]
        if one_sided:
            cols.append(B.T @ (poincare_map(model, orbit, section, a + eps * e, cfg) - P0) / eps)
        else:
            up = poincare_map(model, orbit, section, a + eps * e, cfg)
            dn = poincare_map(model, orbit, section, a - eps * e, cfg)
            cols.append(B.T @ (up - dn) / (2 * eps))
    return np.column_stack(cols)


@dataclass
class StabilityReport:
    matrices: Dict[str, np.ndarray]
    singular_values: Dict[str, np.ndarray]
    norm: str
    contraction: float
    margin: float
    verdict: str
    tolerances: Dict[str, float] = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.verdict == "ExponentiallyStable"

    def to_text(self) -> str:
        doc = {
            "verdict": self.verdict,
            "norm": self.norm,
            "contraction": self.contraction,
            "margin": self.margin,
            "tolerances": self.tolerances,
            "words": [
                {"word": k, "matrix": self.matrices[k].tolist(), "singular_values": self.singular_values[k].tolist()}
                for k in sorted(self.matrices)
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def stability_test(pd: PoincareDerivative, norm: str = "euclidean", margin: float = 0.0,
                   tolerances: Optional[Dict[str, float]] = None) -> StabilityReport:
    """Induced 2-norm test: stable iff every ``|DP_w|`` is below ``1 - margin``.

    Eigenvalues inside the unit disk are not enough here, since the words
    switch with the direction; a norm common to all of them is needed.
    """
    if norm != "euclidean":
        raise ValueError("only the euclidean induced norm is implemented")
    svs = {k: np.linalg.svd(M, compute_uv=False) if M.size else np.zeros(0) for k, M in pd.matrices.items()}
    c = max((float(s[0]) if s.size else 0.0) for s in svs.values())
    verdict = "ExponentiallyStable" if c < 1.0 - margin else "Inconclusive"
    return StabilityReport(dict(pd.matrices), svs, norm, c, margin, verdict, dict(tolerances or {}))


@dataclass
class FlowboxChart:
    """Coordinates ``(-mu(x), B^T (psi(x) - anchor))`` that straighten the flow."""

    model: EventModel
    section: Section
    basis: np.ndarray
    config: IntegratorConfig

    def chi(self, x) -> np.ndarray:
        mu, p = _impact(self.model, x, self.section, self.config)
        return np.concatenate([[-mu], self.basis.T @ (p - self.section.anchor)])

    def chi_inv(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        start = self.section.anchor + self.basis @ z[1:]
        return flow(self.model, float(z[0]), start, self.config)[0]

    __call__ = chi


def default_section(model: EventModel, rho=None) -> Section:
    """Hyperplane through ``rho`` normal to the mean unit event gradient.

    Every field crosses it at rate at least ``f_min / max |Dh_j|`` at ``rho``.
    """
    rho = model.rho if rho is None else np.asarray(rho, dtype=float)
    G = model.event_jacobian(rho)
    normal = np.mean(G / np.linalg.norm(G, axis=1, keepdims=True), axis=0)
    return Section.linear(normal, rho)


def flowbox_chart(model: EventModel, rho=None, section: Optional[Section] = None,
                  config: Optional[IntegratorConfig] = None) -> FlowboxChart:
    cfg = config or IntegratorConfig()
    sec = section or default_section(model, rho)
    return FlowboxChart(model, sec, section_basis(sec), cfg)


# -- perturbations --------------------------------------------------------------


class PerturbationTooLarge(TransversalityViolation):
    def __init__(self, size, f_min):
        ECRError.__init__(self, f"perturbation size {size:g} >= transversality margin {f_min:g}")
        self.size = size
        self.f_min = f_min


@dataclass
class DeviationCurve:
    sizes: np.ndarray
    deviations: np.ndarray
    horizon: float
    trials: int

    @property
    def monotone(self) -> bool:
        order = np.argsort(self.sizes)[::-1]
        dev = self.deviations[order]
        return bool(np.all(np.diff(dev) < 0))

    @property
    def worst_ratio(self) -> float:
        mask = self.sizes > 0
        return float(np.max(self.deviations[mask] / self.sizes[mask])) if mask.any() else 0.0


def perturbation_experiment(model: EventModel, sizes: Sequence[float], trials: int = 10, *,
                            horizon: float = 1.0, radius: float = 0.1, direction=None, seed: int = 0,
                            n_times: int = 5, config: Optional[IntegratorConfig] = None) -> DeviationCurve:
    """Sup-distance between the flows of ``F_b`` and ``F_b + size * direction(b, x)``.

    ``direction`` defaults to the constant all-ones vector.  The same
    starting points and times are used for every size.
    """
    cfg = config or IntegratorConfig()
    if direction is None:
        ones = np.ones(model.dim)
        direction = lambda b, x: ones
    rng = np.random.default_rng(seed)
    starts = model.rho + radius * rng.uniform(-1, 1, size=(trials, model.dim))
    times = np.linspace(horizon / n_times, horizon, n_times)
    base = [[flow(model, t, x, cfg)[0] for t in times] for x in starts]
    devs = []
    for size in sizes:
        if size >= model.f_min:
            raise PerturbationTooLarge(size, model.f_min)
        if size == 0:
            devs.append(0.0)
            continue
        pm = model.perturbed(lambda b, x, s=size: s * np.asarray(direction(b, x), dtype=float))
        # the perturbed field is only guaranteed the reduced margin f_min - size
        pm = dataclasses.replace(pm, f_min=model.f_min - size)
        if pm.corners is not None or pm.n_events <= 12:
            validate_transversality(pm, radius, 64, seed=seed)
        worst = 0.0
        for x, row in zip(starts, base):
            for t, y0 in zip(times, row):
                worst = max(worst, float(np.linalg.norm(flow(pm, t, x, cfg)[0] - y0)))
        devs.append(worst)
    return DeviationCurve(np.asarray(sizes, dtype=float), np.asarray(devs), horizon, trials)
