"""Event-selected vector field models.

A model is a finite family of event functions ``h_j`` together with one
smooth vector field ``F_b`` for each corner ``b`` of the sign cube.  The
corner of a state ``x`` is the componentwise sign of ``h(x) - h(rho)`` with
zero mapped to ``+1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import MissingRegionField, TransversalityViolation

Corner = Tuple[int, ...]

_FD_BASE = np.cbrt(np.finfo(float).eps)


def corner_to_str(b: Sequence[int]) -> str:
    """Signed-bit string for a corner, e.g. ``(-1, 1) -> "-+"``."""
    return "".join("+" if s > 0 else "-" for s in b)


def corner_from_str(s: str) -> Corner:
    if not s or set(s) - {"+", "-"}:
        raise ValueError(f"not a signed-bit string: {s!r}")
    return tuple(1 if c == "+" else -1 for c in s)


def all_corners(n: int) -> list[Corner]:
    """All corners of ``{-1, +1}^n`` in lexicographic order."""
    return [tuple(c) for c in itertools.product((-1, 1), repeat=n)]


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian with step ``cbrt(eps) * max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    step = _FD_BASE * max(1.0, float(np.linalg.norm(x)))
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * step))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class EventModel:
    """An event-selected vector field near a reference point.

    Parameters
    ----------
    dim : int
        State dimension ``d``.
    n_events : int
        Number of event functions ``n``.
    h : callable
        ``h(x) -> (n,)`` array of event function values.
    field : callable
        ``field(b, x) -> (d,)`` evaluates the smooth extension ``F_b`` at
        ``x``.  Should raise :class:`MissingRegionField` for corners that
        have no field.
    rho : array_like
        Reference point; regions are cut out by ``h(x) - h(rho)``.
    f_min : float
        Transversality margin.
    Dh : callable, optional
        ``Dh(x) -> (n, d)``.  Central differences are used when omitted.
    jacobian : callable, optional
        ``jacobian(b, x) -> (d, d)`` state Jacobian of ``F_b``.
    corners : sequence of Corner, optional
        Corners carrying a field.  ``None`` means "decided by ``field``",
        which is what the closed-loop oscillator models use since they have
        far too many corners to list.
    domain : callable, optional
        ``domain(x)`` raises :class:`~ecrflow.errors.OutOfDomain` (or a
        subclass) when ``x`` is outside the validity region.
    levels : array_like, optional
        Reference values replacing ``h(rho)``.  Needed by global models
        whose surfaces do not all pass through one point.
    """

    dim: int
    n_events: int
    h: Callable[[np.ndarray], np.ndarray]
    field: Callable[[Corner, np.ndarray], np.ndarray]
    rho: np.ndarray
    f_min: float
    Dh: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[Corner, np.ndarray], np.ndarray]] = None
    corners: Optional[Tuple[Corner, ...]] = None
    domain: Optional[Callable[[np.ndarray], None]] = None
    name: str = "model"
    levels: Optional[np.ndarray] = None
    h_rho: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.n_events < 1:
            raise ValueError("dim and n_events must be positive")
        if not self.f_min > 0:
            raise ValueError("f_min must be positive")
        rho = np.array(self.rho, dtype=float).reshape(self.dim)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        ref = self.h(rho) if self.levels is None else self.levels
        h_rho = np.atleast_1d(np.asarray(ref, dtype=float)).copy()
        if h_rho.shape != (self.n_events,):
            raise ValueError(f"h returned shape {h_rho.shape}, expected ({self.n_events},)")
        h_rho.setflags(write=False)
        object.__setattr__(self, "h_rho", h_rho)
        if self.corners is not None:
            cs = tuple(tuple(int(s) for s in b) for b in self.corners)
            if any(len(b) != self.n_events or set(b) - {-1, 1} for b in cs):
                raise ValueError("corners must be sign vectors of length n_events")
            object.__setattr__(self, "corners", tuple(sorted(set(cs))))

    @classmethod
    def from_fields(
        cls,
        h,
        fields: Mapping[Sequence[int], Callable[[np.ndarray], np.ndarray]],
        rho,
        f_min: float,
        *,
        Dh=None,
        jacobians: Optional[Mapping[Sequence[int], Callable]] = None,
        domain=None,
        name: str = "model",
    ) -> "EventModel":
        """Build a model from an explicit ``corner -> F_b`` mapping."""
        fields = {tuple(int(s) for s in b): f for b, f in fields.items()}
        if not fields:
            raise ValueError("at least one field is required")
        n = len(next(iter(fields)))
        rho = np.asarray(rho, dtype=float).ravel()
        jac = None
        if jacobians is not None:
            jacobians = {tuple(int(s) for s in b): J for b, J in jacobians.items()}

            def jac(b, x):
                if b not in jacobians:
                    return fd_jacobian(lambda y: _lookup(fields, b)(y), x)
                return np.asarray(jacobians[b](x), dtype=float)

        def fld(b, x):
            return np.asarray(_lookup(fields, tuple(b))(x), dtype=float)

        return cls(
            dim=rho.size,
            n_events=n,
            h=h,
            field=fld,
            rho=rho,
            f_min=f_min,
            Dh=Dh,
            jacobian=jac,
            corners=tuple(fields),
            domain=domain,
            name=name,
        )

    # -- evaluation -------------------------------------------------------

    def offset(self, x) -> np.ndarray:
        """``h(x) - h(rho)``."""
        return np.atleast_1d(np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float)) - self.h_rho

    def event_jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.Dh is not None:
            return np.asarray(self.Dh(x), dtype=float).reshape(self.n_events, self.dim)
        return fd_jacobian(self.h, x).reshape(self.n_events, self.dim)

    def F(self, b: Sequence[int], x) -> np.ndarray:
        return np.asarray(self.field(tuple(b), np.asarray(x, dtype=float)), dtype=float)

    def DF(self, b: Sequence[int], x) -> np.ndarray:
        b = tuple(b)
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(b, x), dtype=float)
        return fd_jacobian(lambda y: self.field(b, y), x)

    def classify(self, x) -> Corner:
        return classify(self, x)

    def has_field(self, b: Sequence[int]) -> bool:
        b = tuple(b)
        if self.corners is not None:
            return b in self.corners
        try:
            self.field(b, self.rho)
        except MissingRegionField:
            return False
        return True

    def known_corners(self) -> list[Corner]:
        """Corners with a field, lexicographically ordered.

        Only available when the corners are listed or ``n_events`` is small
        enough to enumerate.
        """
        if self.corners is not None:
            return list(self.corners)
        if self.n_events > 16:
            raise ValueError(f"{self.name}: too many events to enumerate corners")
        return [b for b in all_corners(self.n_events) if self.has_field(b)]

    def check_domain(self, x) -> None:
        if self.domain is not None:
            self.domain(np.asarray(x, dtype=float))

    def reversed(self) -> "EventModel":
        """The same partition traversed by ``-F``.

        Event functions are negated so that ``Dh . F`` keeps its sign, which
        maps corner ``b`` of this model to ``-b`` of the reversed one.
        """
        field_, jac_, h_, Dh_ = self.field, self.jacobian, self.h, self.Dh
        return EventModel(
            dim=self.dim,
            n_events=self.n_events,
            h=lambda x: -np.asarray(h_(x), dtype=float),
            field=lambda b, x: -np.asarray(field_(tuple(-s for s in b), x), dtype=float),
            rho=self.rho,
            f_min=self.f_min,
            Dh=None if Dh_ is None else (lambda x: -np.asarray(Dh_(x), dtype=float)),
            jacobian=None if jac_ is None else (lambda b, x: -np.asarray(jac_(tuple(-s for s in b), x))),
            corners=None if self.corners is None else tuple(tuple(-s for s in b) for b in self.corners),
            domain=self.domain,
            name=self.name + "~reversed",
            levels=None if self.levels is None else -self.h_rho,
        )

    def perturbed(self, extra: Callable[[Corner, np.ndarray], np.ndarray], name=None) -> "EventModel":
        """Model whose fields are ``F_b + extra(b, x)`` with the same events."""
        field_ = self.field
        return EventModel(
            dim=self.dim,
            n_events=self.n_events,
            h=self.h,
            field=lambda b, x: field_(b, x) + np.asarray(extra(b, x), dtype=float),
            rho=self.rho,
            f_min=self.f_min,
            Dh=self.Dh,
            jacobian=None,
            corners=self.corners,
            domain=self.domain,
            name=name or self.name + "~perturbed",
            levels=self.levels,
        )


def _lookup(fields, b):
    try:
        return fields[b]
    except KeyError:
        raise MissingRegionField(b) from None


def classify(model: EventModel, x) -> Corner:
    """Corner of ``x``: ``+1`` where ``h_j(x) >= h_j(rho)``, else ``-1``."""
    return tuple(1 if v >= 0 else -1 for v in model.offset(x))


@dataclass
class TransversalityReport:
    """Minimum of ``Dh_j . F_b`` over the samples, per corner and surface."""

    radius: float
    samples: int
    f_min: float
    minima: dict = field(default_factory=dict)  # (b, j) -> (value, x)
    corners_seen: set = field(default_factory=set)

    @property
    def worst(self) -> float:
        return min(v for v, _ in self.minima.values())

    @property
    def passed(self) -> bool:
        return bool(self.minima) and self.worst >= self.f_min


def ball_samples(center, radius: float, samples: int, seed: int = 0) -> np.ndarray:
    """Quasi-random points in the closed ball of ``radius`` around ``center``.

    Sobol points in the unit cube are mapped to the ball by a radial
    rescaling of the cube onto it, which keeps the low-discrepancy structure.
    """
    center = np.asarray(center, dtype=float)
    d = center.size
    m = int(np.ceil(np.log2(max(samples, 2))))
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:samples]
    v = 2.0 * u - 1.0
    inf = np.max(np.abs(v), axis=1, keepdims=True)
    two = np.linalg.norm(v, axis=1, keepdims=True)
    scale = np.divide(inf, two, out=np.zeros_like(two), where=two > 0)
    return center + radius * v * scale


def validate_transversality(
    model: EventModel,
    radius: float,
    samples: int,
    *,
    seed: int = 0,
    corners: Optional[Iterable[Corner]] = None,
    raise_on_failure: bool = True,
) -> TransversalityReport:
    """Sample ``Dh_j(x) . F_b(x)`` in a ball around ``rho``.

    Every corner whose region is hit by a sample must carry a field.  All
    supplied fields are evaluated at all samples so that the extensions are
    checked too, not just their restriction to the region.
    """
    if radius <= 0 or samples < 1:
        raise ValueError("radius must be positive and samples >= 1")
    pts = ball_samples(model.rho, radius, samples, seed=seed)
    pts = np.vstack([model.rho, pts])
    report = TransversalityReport(radius=radius, samples=len(pts), f_min=model.f_min)
    seen = {classify(model, x) for x in pts}
    report.corners_seen = seen
    for b in seen:
        if not model.has_field(b):
            raise MissingRegionField(b)
    if corners is not None:
        todo = sorted({tuple(b) for b in corners})
    elif model.corners is not None or model.n_events <= 12:
        todo = model.known_corners()
    else:
        todo = sorted(seen)
    for x in pts:
        G = model.event_jacobian(x)
        for b in todo:
            rates = G @ model.F(b, x)
            for j, val in enumerate(rates):
                key = (b, j)
                if key not in report.minima or val < report.minima[key][0]:
                    report.minima[key] = (float(val), x.copy())
    if raise_on_failure:
        for (b, j), (val, x) in sorted(report.minima.items(), key=lambda kv: kv[1][0]):
            if val < model.f_min:
                raise TransversalityViolation(b, j, x, val, model.f_min)
            break
    return report
