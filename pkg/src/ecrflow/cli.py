"""Command-line front end.

``ecrflow run CONFIG`` runs one experiment on a built-in scenario and writes
CSV artifacts, a text report where relevant, and ``manifest.json``.
``ecrflow acceptance`` runs the acceptance suite.

Configs are TOML with a few top-level keys and the sections ``[params]``,
``[integrator]``, ``[options.<experiment>]`` and ``[output]``::

    scenario = "sync1"
    experiment = "stability"
    seed = 0

    [params]
    d = 3
    nu = 1.0
    delta = 0.5

    [output]
    dir = "out"
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .custom import DEFAULT_PIECEWISE_CONSTANT, piecewise_constant_model
from .errors import ConfigError, ECRError, ExperimentError
from .flow import IntegratorConfig, Trajectory, flow
from .oscillators import (
    Sync1Params,
    Sync2Params,
    canonical_lift,
    sync1_chart,
    sync1_expected_DP,
    sync1_local_model,
    sync1_model,
    sync1_orbit,
    sync2_expected_DP,
    sync2_find_orbit,
    sync2_local_model,
    sync2_model,
    sync2_return_map,
)
from .poincare import (
    flowbox_chart,
    perturbation_experiment,
    poincare_derivative,
    poincare_fd,
    stability_test,
)
from .variational import (
    all_word_derivatives,
    b_derivative,
    clusters_of,
    combo_label,
    enumerate_words,
    saltation_sign_mutation,
    word_label,
)

SCENARIOS = ("sync1", "sync2", "custom-piecewise-constant")
EXPERIMENTS = ("simulate", "b-derivative", "poincare", "stability", "flowbox", "perturbation", "words")
MUTATIONS = ("saltation-sign",)

TOP_KEYS = {"scenario", "experiment", "seed"}
SECTIONS = {"params", "integrator", "options", "output"}
OUTPUT_KEYS = {"dir"}
CUSTOM_KEYS = {"normals", "fields", "rho", "f_min"}

# experiment options and their defaults; None means "scenario dependent"
OPTIONS: Dict[str, Dict[str, Any]] = {
    "simulate": {"t": None, "x0": None},
    "b-derivative": {"s": 0.1, "v": None, "w": None},
    "poincare": {"eps": 1e-5, "fd": True},
    "stability": {"margin": 0.0},
    "flowbox": {"samples": 20, "radius": 0.1, "span": 0.1},
    "perturbation": {"sizes": [1e-2, 1e-3, 1e-4], "trials": 8, "horizon": 1.0, "radius": None},
    "words": {"n": None},
}


@dataclass
class RunConfig:
    scenario: str
    experiment: str
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)
    integrator: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)
    out: Optional[str] = None

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(**self.integrator)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Result:
    """What an experiment produced; written to disk by the caller."""

    metrics: Dict[str, Any] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    summary: List[str] = field(default_factory=list)


# -- config ---------------------------------------------------------------------


def parse_value(text: str):
    """Best-effort scalar from the command line: int, float, bool or string."""
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _keyval(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"expected key=value, got {item!r}")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _param_keys(scenario: str) -> set:
    if scenario == "sync1":
        return {f.name for f in dataclasses.fields(Sync1Params)}
    if scenario == "sync2":
        return {f.name for f in dataclasses.fields(Sync2Params)}
    return set(CUSTOM_KEYS)


def _check_keys(where: str, got, allowed) -> None:
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def resolve_config(raw: dict, experiment: Optional[str] = None, seed: Optional[int] = None,
                   out: Optional[str] = None, tol_overrides: Sequence[str] = (),
                   options: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Validate a parsed config and apply command-line overrides."""
    _check_keys("config", raw, TOP_KEYS | SECTIONS)
    for sec in SECTIONS:
        if sec in raw and not isinstance(raw[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}; got {scenario!r}")
    exp = experiment or raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    params = dict(raw.get("params", {}))
    _check_keys("[params]", params, _param_keys(scenario))
    integ = dict(raw.get("integrator", {}))
    for item in tol_overrides:
        k, v = _keyval(item)
        integ[k] = parse_value(v)
    _check_keys("[integrator]", integ, {f.name for f in dataclasses.fields(IntegratorConfig)})
    tables = raw.get("options", {})
    _check_keys("[options] (expects one table per experiment)", tables, OPTIONS)
    for name, table in tables.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[options.{name}] must be a table")
        _check_keys(f"[options.{name}]", table, OPTIONS[name])
    opts = dict(tables.get(exp, {}))
    opts.update(options or {})
    _check_keys(f"options for {exp}", opts, OPTIONS[exp])
    output = dict(raw.get("output", {}))
    _check_keys("[output]", output, OUTPUT_KEYS)
    seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    cfg = RunConfig(scenario, exp, seed, params, integ, opts, out or output.get("dir"))
    build_params(cfg)
    try:
        cfg.integrator_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[integrator]: {exc}") from None
    return cfg


def build_params(cfg: RunConfig):
    """Scenario parameter object; constraint violations become ConfigError."""
    try:
        if cfg.scenario == "sync1":
            return Sync1Params(**cfg.params)
        if cfg.scenario == "sync2":
            return Sync2Params(**cfg.params)
        kw = {**DEFAULT_PIECEWISE_CONSTANT, **cfg.params}
        return piecewise_constant_model(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[params] for {cfg.scenario}: {exc}") from None


# -- experiments ----------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _matrix_rows(mats: Dict[str, np.ndarray]):
    rows = []
    width = max((M.shape[1] for M in mats.values()), default=0)
    for key in sorted(mats):
        for i, row in enumerate(np.atleast_2d(mats[key])):
            rows.append([key, i] + list(row))
    return ["word", "row"] + [f"c{j}" for j in range(width)], rows


def _opt(cfg: RunConfig, key: str):
    return cfg.options.get(key, OPTIONS[cfg.experiment][key])


def _sync2_orbit(p, icfg):
    try:
        return sync2_find_orbit(p, icfg)
    except ECRError as exc:
        raise ExperimentError(f"sync2 orbit not found: {exc}") from exc


def _global_model(cfg: RunConfig, icfg):
    p = build_params(cfg)
    if cfg.scenario == "sync1":
        return sync1_model(p)
    if cfg.scenario == "sync2":
        return sync2_model(p)
    return p


def _local_model(cfg: RunConfig, icfg):
    p = build_params(cfg)
    if cfg.scenario == "sync1":
        return sync1_local_model(p)
    if cfg.scenario == "sync2":
        return sync2_local_model(p, _sync2_orbit(p, icfg).nu_beta)
    return p


def _simulate(cfg: RunConfig, icfg) -> Result:
    m = _global_model(cfg, icfg)
    p = build_params(cfg)
    d = m.dim
    x0, t = _opt(cfg, "x0"), _opt(cfg, "t")
    if cfg.scenario == "sync1":
        x0 = -0.5 + 0.02 * np.arange(p.d) if x0 is None else x0
        t = 3 * p.period if t is None else t
    elif cfg.scenario == "sync2":
        x0 = np.concatenate([-0.3 + 0.02 * np.arange(p.d), np.full(p.d, 0.2)]) if x0 is None else x0
        t = 3 * p.beta / p.alpha if t is None else t
    else:
        x0 = np.full(d, -0.3) if x0 is None else x0
        t = 1.0 if t is None else t
    if cfg.scenario == "custom-piecewise-constant":
        y, tr = flow(m, float(t), np.asarray(x0, dtype=float), icfg)
    else:
        lap = p.period if cfg.scenario == "sync1" else 1.0 / (p.alpha / p.beta)
        y, tr = _wrapped_flow(m, float(t), np.asarray(x0, dtype=float), p.d, lap, icfg)
    traj, ev = io.StringIO(), io.StringIO()
    tr.write_csv(traj)
    tr.write_events_csv(ev)
    return Result({"t": float(t), "events": len(tr.events), "final_state": [float(v) for v in y]},
                  {"trajectory.csv": traj.getvalue(), "events.csv": ev.getvalue()},
                  [f"{len(tr.events)} events, final state {np.array2string(y, precision=6)}"])


def _wrapped_flow(m, t, x0, d, chunk, icfg):
    """Flow on the torus in pieces, moving back to the canonical lift between pieces."""
    parts, t_done, x = [], 0.0, canonical_lift(x0, d)
    while t_done < t:
        step = min(chunk, t - t_done)
        x_new, tr = flow(m, step, x, icfg)
        parts.append((t_done, tr))
        t_done += step
        x = canonical_lift(x_new, d)
    times = np.concatenate([off + tr.times for off, tr in parts])
    states = np.concatenate([tr.states for _, tr in parts])
    corners = [b for _, tr in parts for b in tr.corners]
    events = [dataclasses.replace(e, time=off + e.time) for off, tr in parts for e in tr.events]
    merged = Trajectory(times, states, corners, events, None, False)
    return merged.final_state.copy(), merged


def _b_derivative(cfg: RunConfig, icfg) -> Result:
    m = _local_model(cfg, icfg)
    s = float(_opt(cfg, "s"))
    x0 = flow(m.reversed(), s, m.rho, icfg)[0]
    _, tr = flow(m, 2 * s, x0, icfg, jacobian=True)
    cls = clusters_of(tr)
    mats = {combo_label(k, cls) or "smooth": D
            for k, D in all_word_derivatives(m, 2 * s, x0, icfg, trajectory=tr).items()}
    header, rows = _matrix_rows(mats)
    files = {"derivatives.csv": _csv_text(header, rows)}
    metrics = {"words": len(mats), "t": 2 * s, "x0": [float(v) for v in x0]}
    v, w = _opt(cfg, "v"), _opt(cfg, "w")
    if w is not None:
        r = b_derivative(m, 2 * s, x0, float(v or 0.0), np.asarray(w, dtype=float), icfg,
                         details=True, trajectory=tr)
        files["b_derivative.csv"] = _csv_text(["word"] + [f"x_{i + 1}" for i in range(m.dim)],
                                              [[combo_label(r.words, cls) or "smooth"] + list(r.value)])
        metrics["value"] = [float(u) for u in r.value]
    return Result(metrics, files, [f"{len(mats)} selection derivatives through rho"])


def _orbit(cfg: RunConfig, icfg):
    p = build_params(cfg)
    if cfg.scenario == "sync1":
        m, orbit, sec = sync1_orbit(p, icfg)
        return p, m, orbit, sec, None
    if cfg.scenario == "sync2":
        o = _sync2_orbit(p, icfg)
        return p, o.model, o.orbit, o.section, o.nu_beta
    raise ConfigError(f"experiment {cfg.experiment} needs a periodic orbit; scenario {cfg.scenario} has none")


def _poincare(cfg: RunConfig, icfg) -> Result:
    p, m, orbit, sec, nu = _orbit(cfg, icfg)
    pd = poincare_derivative(m, orbit, sec, icfg)
    header, rows = _matrix_rows(pd.matrices)
    files = {"poincare.csv": _csv_text(header, rows)}
    if cfg.scenario == "sync1":
        lead = sync1_expected_DP(p)
        metrics = {"c_expected": p.contraction}
    else:
        lead = sync2_expected_DP(p, nu)
        metrics = {"nu_beta": nu, "residual": abs(sync2_return_map(p, nu, icfg) - nu)}
    metrics["E_norm"] = max(float(np.linalg.norm(M - lead, 2)) for M in pd.matrices.values())
    if _opt(cfg, "fd"):
        fd = poincare_fd(m, orbit, sec, float(_opt(cfg, "eps")), icfg)
        metrics["fd_error"] = float(np.max(np.abs(fd - lead))) if cfg.scenario == "sync1" else \
            float(np.linalg.norm(fd - lead, 2))
        files["poincare_fd.csv"] = _csv_text(*_matrix_rows({"fd": fd}))
    lines = [f"{len(pd.matrices)} word combinations, |DP - leading term| = {metrics['E_norm']:.3e}"]
    return Result(metrics, files, lines)


def _stability(cfg: RunConfig, icfg) -> Result:
    p, m, orbit, sec, nu = _orbit(cfg, icfg)
    pd = poincare_derivative(m, orbit, sec, icfg)
    rep = stability_test(pd, margin=float(_opt(cfg, "margin")), tolerances=dataclasses.asdict(icfg))
    header, rows = _matrix_rows(pd.matrices)
    metrics = {"contraction": rep.contraction, "verdict": rep.verdict}
    if cfg.scenario == "sync1":
        metrics["c_expected"] = p.contraction
    else:
        metrics["nu_beta"] = nu
    return Result(metrics, {"report.txt": rep.to_text(), "poincare.csv": _csv_text(header, rows)},
                  [f"verdict {rep.verdict}, c = {rep.contraction:.12g}"])


def _flowbox(cfg: RunConfig, icfg) -> Result:
    m = _local_model(cfg, icfg)
    if cfg.scenario == "sync1":
        p = build_params(cfg)
        chi, _ = sync1_chart(p)
        speed = (p.nu + p.delta) * np.ones(m.dim)
    else:
        chi = flowbox_chart(m, config=icfg).chi
        speed = np.eye(m.dim)[0]
    rng = np.random.default_rng(cfg.seed)
    r, span = float(_opt(cfg, "radius")), float(_opt(cfg, "span"))
    rows, worst = [], 0.0
    for _ in range(int(_opt(cfg, "samples"))):
        x = m.rho + rng.uniform(-r, r, size=m.dim)
        t = float(rng.uniform(-span, span))
        res = float(np.max(np.abs(chi(flow(m, t, x, icfg)[0]) - chi(x) - t * speed)))
        worst = max(worst, res)
        rows.append([t] + list(x) + [res])
    header = ["t"] + [f"x_{i + 1}" for i in range(m.dim)] + ["residual"]
    return Result({"max_residual": worst}, {"flowbox.csv": _csv_text(header, rows)},
                  [f"max straightening residual {worst:.3e}"])


def _perturbation(cfg: RunConfig, icfg) -> Result:
    m = _global_model(cfg, icfg) if cfg.scenario != "sync2" else _local_model(cfg, icfg)
    sizes = [float(s) for s in _opt(cfg, "sizes")]
    radius = _opt(cfg, "radius")
    if radius is None:
        # the sync2 margin is half the orbit velocity, so stay well inside it
        radius = 0.25 * m.rho[-1] if cfg.scenario == "sync2" else 0.1
    curve = perturbation_experiment(m, sizes, trials=int(_opt(cfg, "trials")), horizon=float(_opt(cfg, "horizon")),
                                    radius=float(radius), seed=cfg.seed, config=icfg)
    rows = [[s, dv, dv / s] for s, dv in zip(curve.sizes, curve.deviations)]
    return Result({"monotone": curve.monotone, "worst_ratio": curve.worst_ratio},
                  {"perturbation.csv": _csv_text(["size", "deviation", "ratio"], rows)},
                  [f"deviation/size <= {curve.worst_ratio:.3g}, monotone {curve.monotone}"])


def _words(cfg: RunConfig, icfg) -> Result:
    n = _opt(cfg, "n")
    if n is None:
        n = build_params(cfg).n_events if cfg.scenario == "custom-piecewise-constant" else build_params(cfg).d
    words = enumerate_words(int(n))
    rows = [[i, word_label(w)] for i, w in enumerate(words)]
    text = _csv_text(["index", "word"], rows)
    return Result({"n": int(n), "count": len(words)}, {"words.csv": text},
                  [f"{len(words)} words on {n} surfaces"] + [r[1] for r in rows])


RUNNERS = {
    "simulate": _simulate,
    "b-derivative": _b_derivative,
    "poincare": _poincare,
    "stability": _stability,
    "flowbox": _flowbox,
    "perturbation": _perturbation,
    "words": _words,
}


def run_experiment(cfg: RunConfig, mutation: Optional[str] = None) -> Result:
    """Run one configured experiment; core errors surface as ExperimentError."""
    guard = saltation_sign_mutation() if mutation == "saltation-sign" else contextlib.nullcontext()
    icfg = cfg.integrator_config()
    try:
        with guard:
            return RUNNERS[cfg.experiment](cfg, icfg)
    except (ConfigError, ExperimentError):
        raise
    except ECRError as exc:
        err = ExperimentError(f"{type(exc).__name__}: {exc}")
        err.cause = type(exc).__name__
        raise err from exc


def _run_point(args):
    cfg, mutation = args
    return run_experiment(cfg, mutation)


# -- sweeps and artifacts -----------------------------------------------------------


def sweep_points(cfg: RunConfig, sweeps: Sequence[str]) -> List[Tuple[Dict[str, Any], RunConfig]]:
    """Cartesian product of ``key=v1,v2`` sweeps over params or options."""
    axes = []
    for item in sweeps:
        k, vals = _keyval(item)
        values = [parse_value(v) for v in vals.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"sweep {k!r} has no values")
        axes.append((k, values))
    points = []
    for combo in itertools.product(*[v for _, v in axes]):
        params, opts = dict(cfg.params), dict(cfg.options)
        for (k, _), v in zip(axes, combo):
            sec, _, key = k.rpartition(".")
            if (sec in ("", "params")) and key in _param_keys(cfg.scenario):
                params[key] = v
            elif sec in ("", "options") and key in OPTIONS[cfg.experiment]:
                opts[key] = v
            else:
                raise ConfigError(f"cannot sweep {k!r}: not a parameter or option of this run")
        pc = dataclasses.replace(cfg, params=params, options=opts)
        build_params(pc)
        points.append((dict(zip([k for k, _ in axes], combo)), pc))
    return points


def max_workers(n_tasks: int) -> int:
    env = os.environ.get("ECRFLOW_THREADS")
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"ECRFLOW_THREADS must be an integer, got {env!r}") from None
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def _versions() -> Dict[str, str]:
    import scipy

    return {"ecrflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write(out: Path, name: str, text: str, digests: Dict[str, str]) -> None:
    data = text.encode()
    (out / name).parent.mkdir(parents=True, exist_ok=True)
    (out / name).write_bytes(data)
    digests[name] = hashlib.sha256(data).hexdigest()


def _check_out(out) -> Path:
    if out is None:
        raise ConfigError("no output directory: pass --out or set [output] dir")
    path = Path(out)
    if not path.is_dir():
        raise ConfigError(f"output directory does not exist: {path}")
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory is not writable: {path}")
    return path


def execute(cfg: RunConfig, sweeps: Sequence[str] = (), mutation: Optional[str] = None,
            overrides: Optional[dict] = None, echo=print) -> Dict[str, Any]:
    """Run (or sweep) an experiment and write artifacts plus the manifest."""
    out = _check_out(cfg.out)
    digests: Dict[str, str] = {}
    manifest = {"config": cfg.as_dict(), "overrides": overrides or {}, "seed": cfg.seed,
                "mutation": mutation, "tolerances": dataclasses.asdict(cfg.integrator_config()),
                "versions": _versions()}
    if not sweeps:
        res = run_experiment(cfg, mutation)
        for name, text in res.files.items():
            _write(out, name, text, digests)
        for line in res.summary:
            echo(line)
        manifest["metrics"] = res.metrics
    else:
        points = sweep_points(cfg, sweeps)
        tasks = [(pc, mutation) for _, pc in points]
        workers = max_workers(len(tasks))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_point, tasks))
        else:
            results = [_run_point(t) for t in tasks]
        keys = list(points[0][0])
        metric_names = [k for k, v in results[0].metrics.items() if not isinstance(v, (list, dict))]
        rows = []
        manifest["points"] = []
        for i, ((values, pc), res) in enumerate(zip(points, results)):
            sub = f"point_{i:03d}"
            for name, text in res.files.items():
                _write(out, f"{sub}/{name}", text, digests)
            rows.append([values[k] for k in keys] + [res.metrics.get(k) for k in metric_names])
            manifest["points"].append({"dir": sub, "values": values, "config": pc.as_dict(), "metrics": res.metrics})
            echo(f"{', '.join(f'{k}={values[k]}' for k in keys)}: " + "; ".join(res.summary[:1]))
        _write(out, "sweep.csv", _csv_text([k.rpartition(".")[2] for k in keys] + metric_names, rows), digests)
    manifest["artifacts"] = digests
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return manifest


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if o == float("inf"):
        return "inf"
    raise TypeError(type(o).__name__)


def error_record(exc: Exception) -> dict:
    kind = "ConfigError" if isinstance(exc, ConfigError) else "ExperimentError"
    rec = {"error": kind, "message": str(exc)}
    cause = getattr(exc, "cause", None)
    if cause:
        rec["cause"] = cause
    return rec


# -- entry points ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecrflow", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config", help="TOML config file")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                     help="sweep a parameter or option (repeatable; points form a grid)")
    run.add_argument("--out", metavar="DIR", help="existing output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--tol-override", action="append", default=[], metavar="KEY=VAL",
                     help="override an integrator setting, e.g. event_tol=1e-12")
    run.add_argument("--n", type=int, help="number of surfaces for the words experiment")
    run.add_argument("--mutation", choices=MUTATIONS, help="fault-injection test mode")

    acc = sub.add_parser("acceptance", help="run the acceptance suite")
    acc.add_argument("config", nargs="?", help="optional TOML config with an [output] dir")
    acc.add_argument("--out", metavar="DIR", help="write acceptance.csv here (must exist)")
    acc.add_argument("--only", metavar="N,M", help="comma-separated criterion numbers")
    acc.add_argument("--mutation", choices=MUTATIONS, help="fault-injection test mode")
    return ap


def cmd_run(args) -> int:
    opts = {"n": args.n} if args.n is not None else {}
    cfg = resolve_config(load_config(args.config), args.experiment, args.seed, args.out,
                         args.tol_override, opts)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v not in (None, [])}
    execute(cfg, args.sweep, args.mutation, overrides)
    return 0


def cmd_acceptance(args) -> int:
    from .acceptance import run_all

    out = args.out
    if args.config:
        raw = load_config(args.config)
        _check_keys("acceptance config", raw, {"output"})
        _check_keys("[output]", raw.get("output", {}), OUTPUT_KEYS)
        out = out or raw.get("output", {}).get("dir")
    path = _check_out(out) if out is not None else None
    only = None
    if args.only:
        try:
            only = {int(k) for k in args.only.split(",")}
        except ValueError:
            raise ConfigError(f"--only expects comma-separated integers, got {args.only!r}") from None
    guard = saltation_sign_mutation() if args.mutation == "saltation-sign" else contextlib.nullcontext()
    with guard:
        results = run_all(only, echo=lambda s: print(s, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {', '.join(map(str, failed))}" if failed else ""))
    if path is not None:
        text = _csv_text(["criterion", "title", "passed", "seconds", "detail"],
                         [[r.number, r.title, r.passed, r.seconds, r.detail] for r in results])
        (path / "acceptance.csv").write_text(text)
    return 1 if failed else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_acceptance(args)
    except (ConfigError, ExperimentError) as exc:
        rec = error_record(exc)
        print(json.dumps(rec), file=sys.stderr)
        out = getattr(args, "out", None)
        if out and Path(out).is_dir():
            (Path(out) / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        return 2 if isinstance(exc, ConfigError) else 3


if __name__ == "__main__":
    sys.exit(main())
