"""Acceptance suite: one function per criterion, each at its pinned tolerance."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .custom import (
    DEFAULT_PIECEWISE_CONSTANT,
    custom_nonlinear_model,
    piecewise_constant_model,
    tangent_pair_model,
    two_piece_1d,
    two_piece_1d_flow,
)
from .errors import NotTangent, TransversalityViolation
from .flow import IntegratorConfig, compose_local_flow, flow
from .model import EventModel, all_corners
from .oscillators import (
    Sync1Params,
    Sync2Params,
    desynchronized_starts,
    sync1_chart,
    sync1_expected_DP,
    sync1_local_model,
    sync1_model,
    sync1_orbit,
    sync2_expected_DP,
    sync2_find_orbit,
    sync2_local_model,
    sync2_return_map,
    synchronization_rate,
)
from .poincare import (
    flowbox_chart,
    perturbation_experiment,
    poincare_derivative,
    poincare_fd,
    stability_test,
)
from .variational import (
    b_derivative,
    enumerate_words,
    local_derivative,
    per_word_derivative,
    single_surface_saltation,
    tangency_reduction_check,
    word_label,
    word_steps,
)

TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, event_tol=1e-10)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d}: {self.title} ({self.seconds:.2f} s) -- {self.detail}"


def _timed(number, title, fn) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CriterionResult(number, title, bool(ok), detail, time.perf_counter() - t0)


# 1 ---------------------------------------------------------------------------------


def sync1_dp_cases(cases=((2, 1.0, 0.5), (3, 1.0, 0.5), (3, 1.0, 0.9)), tol=1e-6, budget=10.0):
    rows = []
    for d, nu, de in cases:
        t0 = time.perf_counter()
        p = Sync1Params(d, nu, de)
        m, orbit, sec = sync1_orbit(p, TIGHT)
        expected = sync1_expected_DP(p)
        pd = poincare_derivative(m, orbit, sec, TIGHT)
        err_chain = max(float(np.max(np.abs(M - expected))) for M in pd.matrices.values())
        err_fd = float(np.max(np.abs(poincare_fd(m, orbit, sec, 1e-5, TIGHT) - expected)))
        dt = time.perf_counter() - t0
        rows.append(((d, nu, de), err_chain, err_fd, dt, err_chain <= tol and err_fd <= tol and dt <= budget))
    return rows


def criterion_1():
    rows = sync1_dp_cases()
    detail = "; ".join(f"{c}: chain {a:.1e}, fd {b:.1e}, {t:.1f}s" for c, a, b, t, _ in rows)
    return all(r[-1] for r in rows), detail


# 2 ---------------------------------------------------------------------------------


def brute_force_word_count(n: int) -> int:
    """Count monotone corner chains by filtering all corner sequences."""
    corners = all_corners(n)
    lo, hi = (-1,) * n, (1,) * n
    count = 0
    for m in range(1, n + 1):
        for mid in itertools.product(corners, repeat=m - 1):
            chain = (lo,) + mid + (hi,)
            ok = True
            for a, b in zip(chain, chain[1:]):
                if a == b or any(x > y for x, y in zip(a, b)):
                    ok = False
                    break
            count += ok
    return count


def criterion_2():
    parts, ok = [], True
    for d, expect in ((2, 3), (3, 13)):
        p = Sync1Params(d, 1.0, 0.5)
        m = sync1_local_model(p)
        words = enumerate_words(d)
        brute = brute_force_word_count(d)
        blocks = [local_derivative(m, w)[:, 1:] for w in words]
        pair = max((float(np.max(np.abs(A - B))) for A, B in itertools.combinations(blocks, 2)), default=0.0)
        target = max(float(np.max(np.abs(A - p.contraction * np.eye(d)))) for A in blocks)
        ok &= len(words) == expect == brute and pair <= 1e-12 and target <= 1e-12
        parts.append(f"d={d}: |words|={len(words)} (brute {brute}), pairwise {pair:.1e}, vs cI {target:.1e}")
    return ok, "; ".join(parts)


# 3 ---------------------------------------------------------------------------------


def sync2_decay(betas=(5.0, 10.0, 20.0), d=2, alpha=1.0, delta=0.5, Delta=0.05):
    rows = []
    for beta in betas:
        p = Sync2Params(d, alpha, beta, delta, Delta)
        o = sync2_find_orbit(p, TIGHT)
        nu = o.nu_beta
        resid = abs(sync2_return_map(p, nu, TIGHT) - nu)
        pd = poincare_derivative(o.model, o.orbit, o.section, TIGHT)
        lead = sync2_expected_DP(p, nu)
        err = max(float(np.linalg.norm(M - lead, 2)) for M in pd.matrices.values())
        lo, hi = p.velocity_bracket
        rows.append(dict(beta=beta, nu=nu, residual=resid, inside=lo < nu < hi, error=err,
                         contraction=stability_test(pd).contraction))
    return rows


def criterion_3():
    t0 = time.perf_counter()
    rows = sync2_decay()
    dt = time.perf_counter() - t0
    errs = [r["error"] for r in rows]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = (all(r["residual"] <= 1e-10 and r["inside"] for r in rows)
          and all(a > b for a, b in zip(errs, errs[1:])) and all(q >= 3 for q in ratios) and dt <= 60)
    detail = ", ".join(f"beta={r['beta']:g}: nu={r['nu']:.6f} |E|={r['error']:.4g}" for r in rows)
    detail += ", ratios " + ", ".join(f"{q:.2f}" for q in ratios) + " (need >= 3)"
    return ok, detail


# 4 ---------------------------------------------------------------------------------


def _through(model: EventModel, s: float, cfg):
    """Start point and duration of a trajectory passing through ``rho`` at time ``s``."""
    x0 = flow(model.reversed(), s, model.rho, cfg)[0]
    return x0, 2 * s


def oracle_check(model: EventModel, s: float, per_word: int = 5, eps: float = 1e-5, seed: int = 0,
                 cfg=TIGHT, max_draws: int = 400):
    """One-sided differences against b_derivative, grouped by active word."""
    rng = np.random.default_rng(seed)
    x0, t = _through(model, s, cfg)
    _, tr = flow(model, t, x0, cfg, jacobian=True)
    base = tr.final_state
    n = len(tr.events[0].surfaces) if tr.events else 0
    needed = {w for w in enumerate_words(n) if all(len(g) == 1 for g in word_steps(w))} if n else set()
    hits = {w: [] for w in needed}
    worst = 0.0
    for _ in range(max_draws):
        if all(len(v) >= per_word for v in hits.values()):
            break
        u = rng.normal(size=model.dim + 1)
        u /= np.linalg.norm(u)
        v, w = float(u[0]), u[1:]
        r = b_derivative(model, t, x0, v, w, cfg, details=True, trajectory=tr)
        key = r.words[0] if r.words else None
        if key not in hits or len(hits[key]) >= per_word:
            continue
        fd = (flow(model, t + eps * v, x0 + eps * w, cfg)[0] - base) / eps
        rel = float(np.linalg.norm(fd - r.value) / max(np.linalg.norm(r.value), 1e-12))
        pw = per_word_derivative(model, t, x0, [key], config=cfg, trajectory=tr) @ np.concatenate([[v], w])
        rel = max(rel, float(np.linalg.norm(pw - r.value) / max(np.linalg.norm(r.value), 1e-12)))
        hits[key].append(rel)
        worst = max(worst, rel)
    counts = {word_label(k): len(v) for k, v in hits.items()}
    enough = all(len(v) >= per_word for v in hits.values())
    v = float(rng.normal())
    w = rng.normal(size=model.dim)
    ref = b_derivative(model, t, x0, v, w, cfg, trajectory=tr)
    hom = max(float(np.linalg.norm(b_derivative(model, t, x0, lam * v, lam * w, cfg, trajectory=tr) - lam * ref))
              for lam in (0.0, 0.5, 2.0))
    return worst, counts, enough, hom


def criterion_4():
    p2 = Sync2Params(2, 1.0, 2.0, 0.5, 0.05)
    nu = sync2_find_orbit(p2, TIGHT).nu_beta
    models = [
        ("sync1", sync1_local_model(Sync1Params(3, 1.0, 0.5)), 0.1),
        ("sync2", sync2_local_model(p2, nu), 0.05),
        ("custom", custom_nonlinear_model(), 0.1),
    ]
    ok, parts = True, []
    for name, m, s in models:
        worst, counts, enough, hom = oracle_check(m, s)
        ok &= enough and worst <= 1e-4 and hom <= 1e-9
        parts.append(f"{name}: {len(counts)} words x {min(counts.values())} dirs, rel {worst:.1e}, homog {hom:.1e}")
    return ok, "; ".join(parts)


# 5 ---------------------------------------------------------------------------------


def sync1_chart_residual(samples=100, seed=0, cfg=TIGHT):
    p = Sync1Params(2, 1.0, 0.5)
    m = sync1_local_model(p)
    chi, _ = sync1_chart(p)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = rng.uniform(-0.3, 0.3, size=p.d)
        t = rng.uniform(-0.3, 0.3)
        y = flow(m, t, x, cfg)[0]
        worst = max(worst, float(np.max(np.abs(chi(y) - chi(x) - t * (p.nu + p.delta)))))
    return worst


def flowbox_residual(model, samples=100, seed=0, radius=0.1, span=0.1, cfg=TIGHT):
    chart = flowbox_chart(model, config=cfg)
    rng = np.random.default_rng(seed)
    worst = 0.0
    e1 = np.zeros(model.dim)
    e1[0] = 1.0
    for _ in range(samples):
        x = model.rho + rng.uniform(-radius, radius, size=model.dim)
        t = rng.uniform(-span, span)
        y = flow(model, t, x, cfg)[0]
        worst = max(worst, float(np.max(np.abs(chart.chi(y) - chart.chi(x) - t * e1))))
    return worst


def criterion_5():
    tol = 10 * TIGHT.event_tol
    a = sync1_chart_residual()
    b = flowbox_residual(custom_nonlinear_model())
    return a <= tol and b <= tol, f"sync1 explicit chart {a:.1e}, custom flowbox {b:.1e} (tol {tol:.0e})"


# 6 ---------------------------------------------------------------------------------


def flow_law_residuals(model, samples=100, seed=0, radius=0.2, span=0.3, cfg=TIGHT):
    """Worst semigroup, inverse and two-path residuals; ``|s|, |t| <= span``."""
    rng = np.random.default_rng(seed)
    semi = inv = comp = 0.0
    for _ in range(samples):
        x = model.rho + rng.uniform(-radius, radius, size=model.dim)
        s, t = rng.uniform(-span, span, size=2)
        xs = flow(model, s, x, cfg)[0]
        semi = max(semi, float(np.linalg.norm(flow(model, t, xs, cfg)[0] - flow(model, s + t, x, cfg)[0])))
        inv = max(inv, float(np.linalg.norm(flow(model, -s, xs, cfg)[0] - x)))
        comp = max(comp, float(np.linalg.norm(compose_local_flow(model, s, x, cfg) - xs)))
    return semi, inv, comp


def criterion_6():
    tol = 10 * TIGHT.event_tol
    models = [
        ("sync1", sync1_local_model(Sync1Params(2, 1.0, 0.5))),
        ("custom", custom_nonlinear_model()),
        ("pc3", piecewise_constant_model(**DEFAULT_PIECEWISE_CONSTANT)),
        ("1d", two_piece_1d()),
    ]
    # the custom model is only transverse near the origin
    reach = {"custom": (0.08, 0.06)}
    ok, parts = True, []
    for name, m in models:
        r = flow_law_residuals(m, *((100, 0) + reach.get(name, (0.2, 0.3))))
        ok &= max(r) <= tol
        parts.append(f"{name}: " + "/".join(f"{v:.0e}" for v in r))
    return ok, "semigroup/inverse/compose " + "; ".join(parts) + f" (tol {tol:.0e})"


# 7 ---------------------------------------------------------------------------------


def criterion_7():
    m = two_piece_1d(2.0, 1.0)
    S = float(single_surface_saltation(m, [0.0], 0, (-1,), (1,))[0, 0])
    x, t, eps = -0.3, 0.5, 1e-7
    exact = (two_piece_1d_flow(t, x + eps) - two_piece_1d_flow(t, x)) / eps
    numeric = (flow(m, t, [x + eps], TIGHT)[0][0] - flow(m, t, [x], TIGHT)[0][0]) / eps
    bd = float(b_derivative(m, t, [x], 0.0, [1.0], TIGHT)[0])
    errs = [abs(S - exact), abs(numeric - S), abs(bd - S)]
    return max(errs) <= 1e-6, f"saltation {S:.12g}, closed-form fd {exact:.9f}, flow fd {numeric:.9f}, b-derivative {bd:.12g}"


# 8 ---------------------------------------------------------------------------------


def criterion_8():
    m = tangent_pair_model()
    ok = tangency_reduction_check(m, [0.0, 0.0], (0, 1), tol=1e-12)
    try:
        tangency_reduction_check(custom_nonlinear_model(), [0.0, 0.0], (0, 1))
        rejected = False
    except NotTangent:
        rejected = True
    return ok and rejected, f"identity holds: {ok}; transverse pair rejected: {rejected}"


# 9 ---------------------------------------------------------------------------------


def criterion_9():
    m = sync1_model(Sync1Params(2, 1.0, 0.5))
    sizes = [1e-2, 1e-3, 1e-4]
    curve = perturbation_experiment(m, sizes, trials=8, horizon=1.0, radius=0.2, seed=0, config=TIGHT)
    try:
        perturbation_experiment(m, [m.f_min], trials=1, config=TIGHT)
        rejected = False
    except TransversalityViolation:
        rejected = True
    ok = curve.monotone and curve.worst_ratio <= 10 and rejected
    detail = ", ".join(f"{s:g}->{d:.3g}" for s, d in zip(curve.sizes, curve.deviations))
    return ok, f"{detail}; max dev/size {curve.worst_ratio:.2f}; size f_min rejected: {rejected}"


# 10 --------------------------------------------------------------------------------


def criterion_10():
    p = Sync1Params(3, 1.0, 0.5)
    starts = desynchronized_starts(p, 20, 0.05, seed=0)
    rates, _ = synchronization_rate(p, starts, laps=4, config=TIGHT)
    c = p.contraction
    dev = float(np.max(np.abs(rates - c)) / c)
    return dev <= 0.1, f"fitted rates in [{rates.min():.6f}, {rates.max():.6f}], c = {c:.6f}, max rel dev {dev:.1e}"


CRITERIA: List[tuple] = [
    (1, "sync1 Poincare derivative", criterion_1),
    (2, "sync1 all words agree at the corner", criterion_2),
    (3, "sync2 leading-order DP and error decay", criterion_3),
    (4, "B-derivative finite-difference oracle", criterion_4),
    (5, "flowbox conjugacy", criterion_5),
    (6, "flow laws", criterion_6),
    (7, "single-surface saltation", criterion_7),
    (8, "tangency reduction", criterion_8),
    (9, "perturbation continuity", criterion_9),
    (10, "synchronization rate", criterion_10),
]


def run_criterion(number: int) -> CriterionResult:
    for k, title, fn in CRITERIA:
        if k == number:
            return _timed(k, title, fn)
    raise KeyError(number)


def run_all(only=None, echo: Callable[[str], None] = print) -> List[CriterionResult]:
    out = []
    for k, title, fn in CRITERIA:
        if only and k not in only:
            continue
        r = _timed(k, title, fn)
        echo(r.line())
        out.append(r)
    return out
