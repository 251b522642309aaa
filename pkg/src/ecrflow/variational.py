"""Piecewise-linear derivatives of the flow.

Near a point where several event surfaces meet, the flow is a continuous
selection of finitely many smooth maps, one per *word*: a chain of corners
from all-minus to all-plus in which every step flips a nonempty set of
signs.  Each selection has a derivative built from a product of rank-one
updates of the identity, one per surface crossed.  The active word for a
tangent direction is read off from the crossing order of the sampled
(piecewise-constant, linear-event) field, which can be followed in closed
form.
"""
from __future__ import annotations

import contextlib
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import AmbiguousWord, DivisionNearZero, NotTangent
from .flow import IntegratorConfig, Trajectory, flow
from .model import Corner, EventModel

Word = Tuple[Corner, ...]

PARALLEL_TOL = 1e-9
ORDER_WARN_TOL = 1e-10

# sign of the rank-one saltation update; -1 only in the fault-injection mode
_SALTATION_SIGN = 1.0


@contextlib.contextmanager
def saltation_sign_mutation():
    """Flip the sign of every saltation update inside the block.

    Used to check that the acceptance suite notices a corrupted chain.
    """
    global _SALTATION_SIGN
    old = _SALTATION_SIGN
    _SALTATION_SIGN = -old
    try:
        yield
    finally:
        _SALTATION_SIGN = old


# -- words ------------------------------------------------------------------


def enumerate_words(n: int) -> List[Word]:
    """All monotone corner chains from ``-1`` to ``+1`` in ``{-1, +1}^n``.

    Equivalent to ordered set partitions of the ``n`` surfaces, so the
    count is the ordered Bell number (1, 3, 13, 75, ...).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    start = (-1,) * n
    out: List[Word] = []

    def grow(chain):
        cur = chain[-1]
        free = [i for i, s in enumerate(cur) if s < 0]
        if not free:
            out.append(tuple(chain))
            return
        for r in range(1, len(free) + 1):
            for group in itertools.combinations(free, r):
                nxt = list(cur)
                for i in group:
                    nxt[i] = 1
                grow(chain + [tuple(nxt)])

    grow([start])
    return sorted(out)


def is_word(word: Sequence[Sequence[int]]) -> bool:
    if len(word) < 2:
        return False
    n = len(word[0])
    if tuple(word[0]) != (-1,) * n or tuple(word[-1]) != (1,) * n:
        return False
    for a, b in zip(word, word[1:]):
        if len(b) != n:
            return False
        up = [i for i in range(n) if a[i] < 0 and b[i] > 0]
        if not up or any(a[i] != b[i] for i in range(n) if i not in up):
            return False
    return True


def word_steps(word: Word) -> List[Tuple[int, ...]]:
    """Index sets flipped at each step of ``word`` (0-based)."""
    return [tuple(i for i in range(len(a)) if a[i] != b[i]) for a, b in zip(word, word[1:])]


def word_from_steps(steps: Sequence[Sequence[int]], n: int) -> Word:
    cur = [-1] * n
    chain = [tuple(cur)]
    for group in steps:
        for i in group:
            cur[i] = 1
        chain.append(tuple(cur))
    word = tuple(chain)
    if not is_word(word):
        raise ValueError(f"steps {steps} do not form a word on {n} surfaces")
    return word


def word_label(word: Word, surfaces: Optional[Sequence[int]] = None) -> str:
    """Encode a word by its flipped sets, 1-based: ``"{1}|{2,3}"``."""
    names = surfaces if surfaces is not None else range(len(word[0]))
    names = list(names)
    return "|".join("{" + ",".join(str(names[i] + 1) for i in g) + "}" for g in word_steps(word))


# -- saltation factors --------------------------------------------------------


def saltation_factor(f, g, f_min: float = 0.0) -> np.ndarray:
    """``I + [1; -f][0, g] / (g . f)`` acting on ``(time, state)`` tangents."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    gf = float(g @ f)
    if abs(gf) < max(f_min, np.finfo(float).tiny):
        raise DivisionNearZero(gf, f_min)
    d = f.size
    u = np.concatenate([[1.0], -f])
    v = np.concatenate([[0.0], g])
    return np.eye(d + 1) + _SALTATION_SIGN * np.outer(u, v) / gf


def single_surface_saltation(model: EventModel, rho, j: int, b_before, b_after) -> np.ndarray:
    """Classical saltation matrix ``I + (F_a - F_b) Dh_j / (Dh_j F_b)``."""
    rho = np.asarray(rho, dtype=float)
    g = model.event_jacobian(rho)[j]
    fb = model.F(b_before, rho)
    fa = model.F(b_after, rho)
    den = float(g @ fb)
    if abs(den) < model.f_min:
        raise DivisionNearZero(den, model.f_min)
    return np.eye(model.dim) + np.outer(fa - fb, g) / den


@dataclass(frozen=True)
class Cluster:
    """A point where the surfaces ``surfaces`` are crossed together.

    Local corners and words live on ``len(surfaces)`` signs; ``base`` is
    the global corner just before the crossing.
    """

    rho: np.ndarray
    surfaces: Tuple[int, ...]
    base: Corner

    @property
    def size(self) -> int:
        return len(self.surfaces)

    def to_global(self, local: Sequence[int]) -> Corner:
        b = list(self.base)
        for i, s in zip(self.surfaces, local):
            b[i] = s
        return tuple(b)

    @property
    def after(self) -> Corner:
        return self.to_global((1,) * self.size)


def model_cluster(model: EventModel) -> Cluster:
    n = model.n_events
    return Cluster(model.rho, tuple(range(n)), (-1,) * n)


@dataclass
class SaltationChain:
    word: Word
    eta: Tuple[int, ...]  # global surface index of every factor, in order
    factors: List[np.ndarray]
    product: np.ndarray

    def state_block(self) -> np.ndarray:
        return self.product[1:, 1:]


def _parallel(g1, g2) -> float:
    return abs(float(g1 @ g2)) / (np.linalg.norm(g1) * np.linalg.norm(g2))


def _orders(word: Word, eta) -> List[List[int]]:
    steps = word_steps(word)
    if eta is None:
        return [list(s) for s in steps]
    eta = list(eta)
    if len(eta) != len(steps):
        raise ValueError(f"eta has {len(eta)} entries, word has {len(steps)} steps")
    out = []
    for group, e in zip(steps, eta):
        if isinstance(e, (int, np.integer)):
            if e not in group:
                raise ValueError(f"surface {e} is not flipped in step {group}")
            out.append([int(e)] + [i for i in group if i != e])
        else:
            e = [int(i) for i in e]
            if sorted(e) != sorted(group):
                raise ValueError(f"ordering {e} does not match step {group}")
            out.append(e)
    return out


def saltation_chain(
    model: EventModel,
    word: Word,
    eta=None,
    *,
    cluster: Optional[Cluster] = None,
) -> SaltationChain:
    """Ordered product of saltation factors along ``word``.

    ``eta`` gives, per step, either one representative surface (the rest
    of the group follows in index order) or a full ordering of the flipped
    group.  Indices are local to the
    cluster.  A group is expanded into one factor per surface through the
    intermediate corners; when an intermediate corner has no field the
    remaining surfaces of the group must be tangent to the one just crossed
    and are absorbed, which is exact for tangent surfaces.
    """
    cl = cluster or model_cluster(model)
    if len(word[0]) != cl.size or not is_word(word):
        raise ValueError("word does not match the cluster")
    rho = np.asarray(cl.rho, dtype=float)
    G = model.event_jacobian(rho)
    cur = list(cl.base)
    factors, seq = [], []
    cache: Dict[Corner, np.ndarray] = {}

    def F(b):
        if b not in cache:
            cache[b] = model.F(b, rho)
        return cache[b]

    for order in _orders(word, eta):
        k = 0
        while k < len(order):
            gi = cl.surfaces[order[k]]
            g = G[gi]
            factors.append(saltation_factor(F(tuple(cur)), g, model.f_min))
            seq.append(gi)
            cur[gi] = 1
            k += 1
            while k < len(order) and not model.has_field(tuple(cur)):
                gj = cl.surfaces[order[k]]
                if _parallel(G[gj], g) < 1 - PARALLEL_TOL:
                    raise ValueError(f"no field for intermediate corner {tuple(cur)} in a transverse group")
                cur[gj] = 1
                k += 1
    prod = np.eye(model.dim + 1)
    for S in factors:
        prod = S @ prod
    return SaltationChain(tuple(word), tuple(seq), factors, prod)


def local_derivative(model: EventModel, word: Word, eta=None, *, cluster: Optional[Cluster] = None) -> np.ndarray:
    """``d x (d+1)`` derivative of the selection for ``word`` at ``(0, rho)``."""
    cl = cluster or model_cluster(model)
    chain = saltation_chain(model, word, eta, cluster=cl)
    f_plus = model.F(cl.after, cl.rho)
    return np.column_stack([f_plus, np.eye(model.dim)]) @ chain.product


def order_sensitivity(model: EventModel, word: Word, *, cluster: Optional[Cluster] = None,
                      warn: bool = True) -> float:
    """Largest change of the chain product over orderings inside each group."""
    cl = cluster or model_cluster(model)
    groups = word_steps(word)
    ref = saltation_chain(model, word, None, cluster=cl).product
    worst = 0.0
    for orders in itertools.product(*[itertools.permutations(g) for g in groups]):
        try:
            P = saltation_chain(model, word, [list(o) for o in orders], cluster=cl).product
        except ValueError:
            continue
        worst = max(worst, float(np.max(np.abs(P - ref))))
    if warn and worst > ORDER_WARN_TOL:
        warnings.warn(f"saltation product depends on the order inside a group ({worst:.3g})", RuntimeWarning,
                      stacklevel=2)
    return worst


def tangency_residual(model: EventModel, rho, pair: Tuple[int, int], base: Optional[Corner] = None) -> float:
    """``max |D_mid D_prev - D_prev|`` for the tangent surfaces ``(j, i)``."""
    j, i = pair
    rho = np.asarray(rho, dtype=float)
    G = model.event_jacobian(rho)
    cos = _parallel(G[j], G[i])
    if cos < 1 - PARALLEL_TOL:
        raise NotTangent(j, i, cos)
    prev = list(base) if base is not None else [-1] * model.n_events
    prev[j] = prev[i] = -1
    mid = list(prev)
    mid[j] = 1
    D_prev = saltation_factor(model.F(tuple(prev), rho), G[j], model.f_min)
    D_mid = saltation_factor(model.F(tuple(mid), rho), G[i], model.f_min)
    return float(np.max(np.abs(D_mid @ D_prev - D_prev)))


def tangency_reduction_check(model: EventModel, rho, tangent_pair: Tuple[int, int], tol: float = 1e-12,
                             base: Optional[Corner] = None) -> bool:
    """Whether the intermediate region between tangent surfaces is invisible to the chain."""
    return tangency_residual(model, rho, tangent_pair, base) <= tol


# -- sampled field and word detection ------------------------------------------


def sampled_field(model: EventModel, rho=None) -> EventModel:
    """Freeze every field at ``rho`` and linearize the events there."""
    rho = model.rho if rho is None else np.asarray(rho, dtype=float)
    G = model.event_jacobian(rho)
    G.setflags(write=False)
    off0 = model.offset(rho)
    cache: Dict[Corner, np.ndarray] = {}
    zero = np.zeros((model.dim, model.dim))

    def fld(b, x):
        b = tuple(b)
        if b not in cache:
            cache[b] = model.F(b, rho)
        return cache[b].copy()

    return EventModel(
        dim=model.dim,
        n_events=model.n_events,
        h=lambda x: off0 + G @ (np.asarray(x, dtype=float) - rho),
        field=fld,
        rho=rho,
        f_min=model.f_min,
        Dh=lambda x: G,
        jacobian=lambda b, x: zero,
        corners=model.corners,
        name=model.name + "~sampled",
        levels=np.zeros(model.n_events),
    )


@dataclass
class WordDetection:
    word: Word
    groups: List[Tuple[int, ...]]
    transverse_ties: List[Tuple[int, ...]] = field(default_factory=list)


def detect_word(model: EventModel, xi, *, cluster: Optional[Cluster] = None, tie_tol: float = 1e-9) -> WordDetection:
    """Crossing order of the sampled field started just before ``rho`` along ``xi``.

    The sampled field is constant on each region and its events are affine,
    so the path from ``rho + xi - c F_base`` is followed exactly, one region
    at a time.  Crossings closer than ``tie_tol`` in (normalized) time are
    merged into one group.  Only the state part of a tangent matters: a
    pure time shift slides along the same trajectory.
    """
    cl = cluster or model_cluster(model)
    rho = np.asarray(cl.rho, dtype=float)
    GJ = model.event_jacobian(rho)[list(cl.surfaces)]
    k = cl.size
    xi = np.asarray(xi, dtype=float)
    nrm = np.linalg.norm(xi)
    if k == 1 or nrm == 0:
        return WordDetection(word_from_steps([tuple(range(k))], k), [tuple(range(k))])
    xi = xi / nrm
    f0 = model.F(cl.base, rho)
    r0 = GJ @ f0
    c = max(0.0, float(np.max((GJ @ xi) / r0))) + 1.0
    hy = GJ @ (xi - c * f0)
    left = set(range(k))
    local = [-1] * k
    groups, ties = [], []
    while left:
        f = model.F(cl.to_global(local), rho)
        rates = GJ @ f
        idx = sorted(left)
        if np.any(rates[idx] <= 0):
            raise DivisionNearZero(float(np.min(rates[idx])), model.f_min)
        u = {i: max(0.0, -hy[i] / rates[i]) for i in idx}
        u_min = min(u.values())
        group = tuple(i for i in idx if u[i] - u_min <= tie_tol * max(1.0, u_min))
        hy = hy + u_min * rates
        for i in group:
            hy[i] = 0.0
            local[i] = 1
            left.discard(i)
        if len(group) > 1:
            g0 = GJ[group[0]]
            if any(_parallel(GJ[i], g0) < 1 - PARALLEL_TOL for i in group[1:]):
                ties.append(group)
        groups.append(group)
    return WordDetection(word_from_steps(groups, k), groups, ties)


# -- derivatives along trajectories ---------------------------------------------


def clusters_of(traj: Trajectory) -> List[Cluster]:
    return [Cluster(ev.state, tuple(ev.surfaces), ev.corner_before) for ev in traj.events]


def _chain_for_direction(model, cl: Cluster, xi, tie_tol, lam_xi):
    """Chain product active for the state tangent ``xi`` at cluster ``cl``."""
    det = detect_word(model, xi, cluster=cl, tie_tol=tie_tol)
    base = saltation_chain(model, det.word, cluster=cl).product
    if not det.transverse_ties:
        return det.word, base
    # A transverse tie puts the direction on a cone boundary; every
    # ordering of the tied group is an adjacent selection and must agree.
    pos = {g: n for n, g in enumerate(det.groups)}
    options = [list(itertools.permutations(g)) if g in det.transverse_ties else [g] for g in det.groups]
    ref = base @ lam_xi
    scale = max(1.0, float(np.linalg.norm(ref)))
    for combo in itertools.islice(itertools.product(*options), 720):
        P = saltation_chain(model, det.word, [list(o) for o in combo], cluster=cl).product
        if np.linalg.norm(P @ lam_xi - ref) > 1e-8 * scale:
            raise AmbiguousWord(f"orderings of tied group(s) {sorted(pos)} disagree")
    return det.word, base


@dataclass
class BDerivativeResult:
    value: np.ndarray
    words: List[Word]
    final_state: np.ndarray


def _reverse_time(model, t, v):
    return model.reversed(), -t, -v


def b_derivative(model: EventModel, t: float, x, v: float, w, config: Optional[IntegratorConfig] = None,
                 *, details: bool = False, trajectory: Optional[Trajectory] = None):
    """Directional B-derivative ``D phi(t, x; v, w)``.

    Smooth segments use the classical variational equation; at every
    crossing the tangent ``(v, xi)`` jumps by the saltation chain of the
    word that the perturbed trajectory follows there.
    """
    cfg = config or IntegratorConfig()
    if t < 0:
        model, t, v = _reverse_time(model, t, v)
        trajectory = None
    if trajectory is None:
        _, trajectory = flow(model, t, x, cfg, jacobian=True)
    tr = trajectory
    lam = float(v)
    xi = tr.jacobians[0] @ np.asarray(w, dtype=float)
    words = []
    for k, cl in enumerate(clusters_of(tr)):
        vec = np.concatenate([[lam], xi])
        word, P = _chain_for_direction(model, cl, xi, 1e-9, vec)
        words.append(word)
        vec = P @ vec
        lam, xi = vec[0], tr.jacobians[k + 1] @ vec[1:]
    out = model.F(tr.final_corner, tr.final_state) * lam + xi
    if details:
        return BDerivativeResult(out, words, tr.final_state)
    return out


WordChoice = Union[Word, Sequence[Word], Mapping[int, Word], None]


def _pick(words: WordChoice, k: int, cl: Cluster) -> Word:
    if words is None:
        if cl.size != 1:
            raise ValueError(f"crossing {k} flips {cl.size} surfaces; a word is required")
        return ((-1,), (1,))
    if isinstance(words, Mapping):
        if k in words:
            return words[k]
        if cl.size == 1:
            return ((-1,), (1,))
        raise ValueError(f"no word given for crossing {k}")
    if len(words) and isinstance(words[0][0], (int, np.integer)):
        return tuple(words)  # a single word used at every multi-surface crossing
    return tuple(words[k])


def jump_linear_matrix(model: EventModel, tr: Trajectory, words: WordChoice, eta=None) -> Tuple[np.ndarray, np.ndarray]:
    """Solve the matrix jump-linear system along ``tr``.

    Returns ``(M, D)`` with ``M`` the ``(d+1) x (d+1)`` map of ``(Lambda, X)``
    and ``D = [F_end, I] M`` the per-word derivative including the time
    column.
    """
    d = model.dim
    M = np.eye(d + 1)
    M[1:, 1:] = tr.jacobians[0]
    for k, cl in enumerate(clusters_of(tr)):
        word = _pick(words, k, cl)
        if len(word[0]) != cl.size:
            raise ValueError(f"crossing {k} flips {cl.size} surfaces, word has {len(word[0])}")
        e = None if eta is None else eta.get(k) if isinstance(eta, Mapping) else eta
        M = saltation_chain(model, word, e, cluster=cl).product @ M
        S = np.eye(d + 1)
        S[1:, 1:] = tr.jacobians[k + 1]
        M = S @ M
    D = np.column_stack([model.F(tr.final_corner, tr.final_state), np.eye(d)]) @ M
    return M, D


def per_word_derivative(model: EventModel, t: float, x, words: WordChoice = None, eta=None,
                        config: Optional[IntegratorConfig] = None, *, trajectory: Optional[Trajectory] = None
                        ) -> np.ndarray:
    """``d x (d+1)`` derivative of the selection indexed by ``words``.

    ``words`` is one local word per multi-surface crossing along the
    trajectory (a list, a ``{crossing index: word}`` mapping, or a single
    word reused everywhere).  Column 0 is the time derivative.
    """
    cfg = config or IntegratorConfig()
    if trajectory is None:
        if t < 0:
            raise ValueError("per-word derivatives are defined for t >= 0; reverse the model for t < 0")
        _, trajectory = flow(model, t, x, cfg, jacobian=True)
    return jump_linear_matrix(model, trajectory, words, eta)[1]


def all_word_derivatives(model: EventModel, t: float, x, config: Optional[IntegratorConfig] = None,
                         *, trajectory: Optional[Trajectory] = None) -> Dict[Tuple[Word, ...], np.ndarray]:
    """Per-word derivatives for every combination of words at the crossings.

    Chain products are computed once per crossing and word, then combined.
    """
    cfg = config or IntegratorConfig()
    if trajectory is None:
        _, trajectory = flow(model, t, x, cfg, jacobian=True)
    tr = trajectory
    d = model.dim
    cls = clusters_of(tr)
    options = []
    for cl in cls:
        ws = enumerate_words(cl.size)
        options.append([(w, saltation_chain(model, w, cluster=cl).product) for w in ws])
    segs = []
    for J in tr.jacobians:
        S = np.eye(d + 1)
        S[1:, 1:] = J
        segs.append(S)
    out_row = np.column_stack([model.F(tr.final_corner, tr.final_state), np.eye(d)])
    result = {}
    for combo in itertools.product(*options):
        M = segs[0]
        for (w, P), S in zip(combo, segs[1:]):
            M = S @ (P @ M)
        result[tuple(w for w, _ in combo)] = out_row @ M
    return result


def combo_label(combo: Tuple[Word, ...], clusters: Sequence[Cluster]) -> str:
    """Label for a combination of words: crossings separated by ``;``."""
    return ";".join(word_label(w, cl.surfaces) for w, cl in zip(combo, clusters))
