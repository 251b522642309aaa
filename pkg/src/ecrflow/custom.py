"""Small hand-made models used by tests, demos and the CLI."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .model import EventModel, corner_from_str


def two_piece_1d(f_before: float = 2.0, f_after: float = 1.0) -> EventModel:
    """Scalar field equal to ``f_before`` for ``x < 0`` and ``f_after`` for ``x >= 0``."""
    fields = {(-1,): lambda x: np.array([f_before]), (1,): lambda x: np.array([f_after])}
    return EventModel.from_fields(lambda x: np.asarray(x, dtype=float)[:1], fields, [0.0],
                                  min(f_before, f_after), Dh=lambda x: np.ones((1, 1)), name="two-piece")


def two_piece_1d_flow(t: float, x: float, f_before: float = 2.0, f_after: float = 1.0) -> float:
    """Closed form of the two-piece flow for ``t >= 0``."""
    if x >= 0:
        return x + f_after * t
    reach = -x / f_before
    if t <= reach:
        return x + f_before * t
    return f_after * (t - reach)


_CUSTOM_BASE = {
    (-1, -1): (1.5, 1.4),
    (1, -1): (1.2, 0.6),
    (-1, 1): (0.7, 1.2),
    (1, 1): (0.5, 0.5),
}


def custom_nonlinear_model() -> EventModel:
    """Two curved surfaces through the origin and state-dependent fields.

    ``h_1 = x_2 + 0.3 x_1^2 - 0.1 x_1`` and ``h_2 = x_1 + 0.2 sin(x_2)``.
    Field Jacobians are left to finite differences on purpose.
    """

    def h(x):
        return np.array([x[1] + 0.3 * x[0] ** 2 - 0.1 * x[0], x[0] + 0.2 * np.sin(x[1])])

    def Dh(x):
        return np.array([[0.6 * x[0] - 0.1, 1.0], [1.0, 0.2 * np.cos(x[1])]])

    fields = {}
    for b, (a1, a2) in _CUSTOM_BASE.items():
        fields[b] = lambda x, a1=a1, a2=a2, s=b[0]: np.array([
            a1 + 0.2 * np.sin(x[1]) + 0.1 * x[0] * x[1],
            a2 + 0.15 * x[0] ** 2 - 0.1 * s * np.cos(x[0]) + 0.1 * s,
        ])
    return EventModel.from_fields(h, fields, [0.0, 0.0], 0.2, Dh=Dh, name="custom-nonlinear")


def tangent_pair_model() -> EventModel:
    """Surfaces ``x_2 = 0`` and ``x_2 = x_1^2`` touching at the origin.

    The sliver ``0 <= x_2 < x_1^2`` is the only region between them, so
    the corner ``(-1, +1)`` has empty interior and no field.
    """
    fields = {
        (-1, -1): lambda x: np.array([1.0, 1.0 + 0.1 * x[0]]),
        (1, -1): lambda x: np.array([0.5, 1.5]),
        (1, 1): lambda x: np.array([-0.3, 0.8 + 0.05 * x[1]]),
    }
    return EventModel.from_fields(
        lambda x: np.array([x[1], x[1] - x[0] ** 2]), fields, [0.0, 0.0], 0.3,
        Dh=lambda x: np.array([[0.0, 1.0], [-2 * x[0], 1.0]]), name="tangent-pair",
    )


def piecewise_constant_model(normals: Sequence[Sequence[float]], fields: Mapping[str, Sequence[float]],
                             rho=None, f_min: float = 0.1) -> EventModel:
    """Linear events ``h(x) = A x`` with one constant vector per corner.

    ``fields`` is keyed by signed-bit strings such as ``"-+"``.
    """
    A = np.asarray(normals, dtype=float)
    if A.ndim != 2:
        raise ValueError("normals must be a list of row vectors")
    n, d = A.shape
    rho = np.zeros(d) if rho is None else np.asarray(rho, dtype=float)
    table = {}
    for key, vec in fields.items():
        b = corner_from_str(key)
        v = np.asarray(vec, dtype=float)
        if len(b) != n or v.shape != (d,):
            raise ValueError(f"field {key!r}: expected {n} signs and {d} components")
        table[b] = lambda x, v=v: v.copy()
    zero = np.zeros((d, d))
    return EventModel.from_fields(lambda x: A @ np.asarray(x, dtype=float), table, rho, f_min,
                                  Dh=lambda x: A, jacobians={b: (lambda x: zero) for b in table},
                                  name="custom-piecewise-constant")


DEFAULT_PIECEWISE_CONSTANT = {
    "normals": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
    "fields": {
        "---": [1.0, 1.2], "+--": [0.8, 1.1], "-+-": [1.1, 0.7], "++-": [0.9, 0.9],
        "--+": [1.0, 1.0], "+-+": [0.7, 1.0], "-++": [1.0, 0.6], "+++": [0.6, 0.6],
    },
    "f_min": 0.5,
}
