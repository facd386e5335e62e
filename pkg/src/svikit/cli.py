"""Command-line driver.

    svikit simulate --config run.cfg --seed 42 --out results/
    svikit convergence --config conv.cfg --set paths=200
    svikit list-models --json

Outputs are assembled in memory and written only when the whole study
succeeds; on failure the output directory receives a ``FAILED`` marker
holding the diagnostic, and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys as _sys
from typing import Optional

import numpy as np

from . import __version__
from .analysis import check_momentum, check_symplectic, estimate_strong_order, temperature_study
from .catalog import build, list_models
from .config import ExperimentConfig, STUDIES, format_value, load, parse_text
from .errors import ConfigParse, NumericalFailure, SVIError
from .geometry import orthogonality_defect
from .integrators import StepperConfig, simulate, simulate_lie, simulate_rigid
from .noise import sample_path, uniform_increments
from .systems import LieBodyState, LieSystem, PhaseState, RigidBodySystem

__all__ = ["main", "run", "run_config", "format_models"]

log = logging.getLogger("svikit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# helpers


def _f(x) -> str:
    return repr(float(x))


def _header(cfg: ExperimentConfig) -> str:
    return f"# svikit {__version__} seed={cfg.seed} config={cfg.digest()}\n"


def _csv(cfg, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _increments(cfg: ExperimentConfig, member: int, channels: int) -> np.ndarray:
    N = cfg.n_steps
    if channels == 0:
        return np.zeros((N, 0))
    L = N.bit_length() - 1
    if N == 1 << L:
        return sample_path(cfg.seed, cfg.horizon, L, channels, member=member).steps()
    return uniform_increments(cfg.seed, member, N, channels, cfg.h)


def _stepper_cfg(cfg: ExperimentConfig) -> StepperConfig:
    return StepperConfig(cfg.h, retraction=cfg.retraction)


def _rn_state0(cfg, entry, system):
    s0 = entry.default_state(system)
    q = s0.q if cfg.initial_q is None else np.array(cfg.initial_q, dtype=float)
    p = s0.p if cfg.initial_p is None else np.array(cfg.initial_p, dtype=float)
    if q.shape != (system.dim,) or p.shape != (system.dim,):
        raise ConfigParse(f"initial.q / initial.p: {system.name} needs {system.dim} components each")
    return PhaseState.from_qp(system, q, p)


def _state0(cfg, entry, system):
    if isinstance(system, (LieSystem, RigidBodySystem)):
        if cfg.initial_q is not None or cfg.initial_p is not None:
            raise ConfigParse("initial.q / initial.p: only vector-space models accept explicit initial states")
        return entry.default_state(system)
    return _rn_state0(cfg, entry, system)


def _seeded(fn, seed):
    try:
        return fn()
    except NumericalFailure as exc:
        if exc.seed is None:
            exc.seed = seed
        raise


# ---------------------------------------------------------------------------
# studies


def _simulate(cfg, entry, system) -> tuple[dict, dict]:
    sc = _stepper_cfg(cfg)
    a = cfg.horizon[0]
    s0 = _state0(cfg, entry, system)
    rows, results = [], {}
    if isinstance(system, RigidBodySystem):
        K = system.n_bodies
        cols = ["method", "path", "t"]
        for b in range(K):
            cols += [f"x{b}_{j}" for j in range(3)] + [f"v{b}_{j}" for j in range(3)]
            cols += [f"p{b}_{j}" for j in range(3)] + [f"R{b}_{i}{j}" for i in range(3) for j in range(3)]
            cols += [f"w{b}_{j}" for j in range(3)] + [f"pi{b}_{j}" for j in range(3)]
        for meth in cfg.integrators:
            for m in range(cfg.paths):
                inc = _increments(cfg, m, system.n_noise)
                states, digest = _seeded(lambda: simulate_rigid(
                    system, s0, inc, sc, method=meth, record_every=cfg.record_every), cfg.seed)
                ks = _recorded_steps(cfg)
                for k, st in zip(ks, states):
                    row = [meth, m, _f(a + k * cfg.h)]
                    for b in range(K):
                        for arr in (st.x[b], st.v[b], st.p[b], st.R[b].ravel(), st.w[b], st.pi[b]):
                            row += [_f(x) for x in arr]
                    rows.append(row)
                results[f"{meth}.path{m}.noise_digest"] = digest
    elif isinstance(system, LieSystem):
        g0, xi0, mu0 = s0
        cols = ["method", "path", "t"] + [f"R_{i}{j}" for i in range(3) for j in range(3)]
        cols += [f"xi_{j}" for j in range(3)] + [f"mu_{j}" for j in range(3)]
        for m in range(cfg.paths):
            inc = _increments(cfg, m, system.n_noise)
            states, digest = _seeded(lambda: simulate_lie(system, g0, xi0, mu0, inc, sc, cfg.record_every), cfg.seed)
            for k, (g, xi, mu) in zip(_recorded_steps(cfg), states):
                rows.append(["svi-lie", m, _f(a + k * cfg.h)] + [_f(x) for x in (*g.ravel(), *xi, *mu)])
            results[f"svi-lie.path{m}.noise_digest"] = digest
    else:
        n = system.dim
        cols = ["method", "path", "t"] + [f"q{i}" for i in range(n)] + [f"v{i}" for i in range(n)]
        cols += [f"p{i}" for i in range(n)]
        for meth in cfg.integrators:
            for m in range(cfg.paths):
                inc = _increments(cfg, m, system.n_noise)
                tr = _seeded(lambda: simulate(system, meth, s0, inc, sc, t0=a, record_every=cfg.record_every),
                             cfg.seed)
                for k in range(len(tr.t)):
                    rows.append([meth, m, _f(tr.t[k])] + [_f(x) for x in (*tr.q[k], *tr.v[k], *tr.p[k])])
                results[f"{meth}.path{m}.noise_digest"] = tr.audit
    return {"trajectory.csv": _csv(cfg, cols, rows)}, results


def _recorded_steps(cfg):
    N = cfg.n_steps
    ks = [0] + [k for k in range(1, N + 1) if k % cfg.record_every == 0]
    if ks[-1] != N:
        ks.append(N)
    return ks


def _convergence(cfg, entry, system) -> tuple[dict, dict]:
    if isinstance(system, LieSystem):
        raise ConfigParse(f"study: convergence is not available for {system.name}")
    s0 = _state0(cfg, entry, system)
    files, results = {}, {}
    for i, meth in enumerate(cfg.integrators):
        if isinstance(system, RigidBodySystem) and meth != "svi-rigid":
            raise ConfigParse(f"integrators: convergence of {meth!r} is not available for {system.name}")
        if meth == "reference":
            raise ConfigParse("integrators: the reference solver is the convergence oracle, not a subject")
        rep = _seeded(lambda: estimate_strong_order(
            system, meth, s0, cfg.horizon, cfg.levels, cfg.paths, cfg.seed, cfg.levels_ref,
            _stepper_cfg(cfg), cfg.threads, check_reference=not isinstance(system, RigidBodySystem),
        ), cfg.seed)
        rows = [[_f(h), _f(e)] for h, e in zip(rep.step_sizes, rep.ms_errors)]
        text = _csv(cfg, ["h", "ms_error"], rows)
        files["convergence.csv" if i == 0 else f"convergence_{meth}.csv"] = text
        for k, v in rep.summary().items():
            results[f"{meth}.{k}" if i else k] = v
            if i == 0:
                results[f"{meth}.{k}"] = v
    return files, results


def _temperature(cfg, entry, system) -> tuple[dict, dict]:
    if not hasattr(system, "temperature") or system.temperature is None:
        raise ConfigParse(f"model.name: {cfg.model} has no temperature; pick a thermostatted model")
    series = _seeded(lambda: temperature_study(
        system, cfg.integrators, cfg.horizon, cfg.h, cfg.paths, cfg.seed, _stepper_cfg(cfg),
        cfg.threads, cfg.record_every,
    ), cfg.seed)
    rows, results = [], {}
    a, b = cfg.horizon
    mid = 0.5 * (a + b)
    for meth, s in series.items():
        rows += [[_f(t), meth, _f(k)] for t, k in zip(s.times, s.mean_kinetic)]
        results[f"{meth}.target_kinetic"] = s.target
        results[f"{meth}.tail_mean"] = s.tail_mean(mid)
        results[f"{meth}.tail_ratio"] = s.tail_mean(mid) / s.target
        results[f"{meth}.tail_trend"] = s.tail_trend(mid)
        results[f"{meth}.noise_digest"] = s.audit
    return {"temperature.csv": _csv(cfg, ["t", "method", "mean_kinetic"], rows)}, results


def _invariants(cfg, entry, system) -> tuple[dict, dict]:
    sc = _stepper_cfg(cfg)
    s0 = _state0(cfg, entry, system)
    checks = []  # (check, statistic, value, tolerance)
    inc = _increments(cfg, 0, getattr(system, "n_noise", 0))
    if isinstance(system, RigidBodySystem):
        syms = cfg.symmetry or system.symmetries
        worst = {"orth": 0.0, "lin": 0.0, "ang": 0.0}

        def observe(k, st):
            worst["orth"] = max(worst["orth"], max(orthogonality_defect(R) for R in st.R))
            lin, ang = st.legendre_defect(system)
            worst["lin"] = max(worst["lin"], lin)
            worst["ang"] = max(worst["ang"], ang)

        states, _ = _seeded(lambda: simulate_rigid(system, s0, inc, sc, observe=observe), cfg.seed)
        checks += [
            ("orthogonality", "max_fro(R^T R - I)", worst["orth"], 1e-8),
            ("legendre_linear", "max|p - m v|", worst["lin"], 1e-12),
            ("legendre_angular", "max|pi - I_s w|", worst["ang"], 1e-10),
        ]
        p0 = float(np.linalg.norm(s0.p.sum(axis=0)))
        for sym in syms:
            checks.append((f"momentum_{sym}", "max|J_k - J_0|", check_momentum(system, sym, states), 1e-12 * (1 + p0)))
    elif isinstance(system, LieSystem):
        g0, xi0, mu0 = s0
        states, _ = _seeded(lambda: simulate_lie(system, g0, xi0, mu0, inc, sc), cfg.seed)
        checks.append(("orthogonality", "max_fro(R^T R - I)", max(orthogonality_defect(g) for g, _, _ in states), 1e-8))
        checks.append(("legendre", "max|mu - I xi|",
                       max(float(np.max(np.abs(mu - system.inertia * xi))) for _, xi, mu in states), 1e-12))
    else:
        for meth in cfg.integrators:
            tr = _seeded(lambda: simulate(system, meth, s0, inc, sc, t0=cfg.horizon[0]), cfg.seed)
            leg = float(np.max(np.abs(tr.p - system.momentum(tr.v))))
            checks.append((f"legendre_{meth}", "max|p - M v|", leg, 1e-12 * (1 + float(np.max(np.abs(tr.p))))))
            if system.constraint is not None:
                g = np.max(np.abs(system.constraint.value(tr.q)))
                checks.append((f"constraint_{meth}", "max|g(q)|", float(g), sc.constraint_tol))
                continue
            rep = check_symplectic(system, meth, cfg.samples, cfg.fd_step, cfg.seed, sc)
            checks.append((f"symplectic_{meth}", "max_fro(DF^T J DF - J)", rep.max_defect, 1e-6))
            p0 = float(np.linalg.norm(s0.p))
            for sym in cfg.symmetry or tuple(s.name for s in system.symmetries):
                checks.append((f"momentum_{sym}_{meth}", "max|J_k - J_0|",
                               check_momentum(system, sym, tr), 1e-12 * (1 + p0)))
    rows = [[c, stat, _f(v), _f(tol), "true" if v <= tol else "false"] for c, stat, v, tol in checks]
    results = {f"{c}.pass": v <= tol for c, _, v, tol in checks}
    return {"invariants.csv": _csv(cfg, ["check", "statistic", "value", "tolerance", "pass"], rows)}, results


_STUDY_FN = {"simulate": _simulate, "convergence": _convergence, "temperature": _temperature, "invariants": _invariants}


# ---------------------------------------------------------------------------
# orchestration


def _summary(cfg: ExperimentConfig, results: dict) -> str:
    lines = [_header(cfg).rstrip("\n")]
    lines += cfg.to_lines()
    lines.append(f"meta.version = {__version__}")
    lines.append(f"meta.config_hash = {cfg.digest()}")
    for k in sorted(results):
        lines.append(f"result.{k} = {format_value(results[k])}")
    return "\n".join(lines) + "\n"


def _write_failed(out_dir: Optional[str], message: str) -> None:
    if not out_dir:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "FAILED"), "w") as fh:
            fh.write(message + "\n")
    except OSError:
        pass


def run_config(cfg: ExperimentConfig) -> dict:
    """Execute a validated config and write its outputs; returns the results map."""
    entry, system = build(cfg.model, cfg.model_params)
    files, results = _STUDY_FN[cfg.study](cfg, entry, system)
    files["summary.txt"] = _summary(cfg, results)
    os.makedirs(cfg.outputs, exist_ok=True)
    stale = os.path.join(cfg.outputs, "FAILED")
    if os.path.exists(stale):
        os.remove(stale)
    for name, text in files.items():
        with open(os.path.join(cfg.outputs, name), "w", newline="") as fh:
            fh.write(text)
    return results


def run(config_path: Optional[str], study: Optional[str] = None, overrides: Optional[dict] = None) -> int:
    """Parse, validate and execute; returns the process exit code."""
    overrides = dict(overrides or {})
    if study is not None:
        overrides["study"] = study
    out_dir = overrides.get("outputs")
    try:
        kv = {}
        if config_path is not None:
            try:
                with open(config_path) as fh:
                    kv = parse_text(fh.read())
            except OSError as exc:
                raise ConfigParse(f"cannot read config {config_path}: {exc.strerror}") from None
        kv.update(overrides)
        out_dir = kv.get("outputs", "out")
        cfg = ExperimentConfig.from_mapping(kv)
        log.info("running %s on %s (config %s)", cfg.study, cfg.model, cfg.digest())
        run_config(cfg)
        log.info("wrote outputs to %s", cfg.outputs)
        return EXIT_OK
    except NumericalFailure as exc:
        msg = f"numerical failure: {type(exc).__name__}: {exc}"
        code = EXIT_NUMERICAL
    except (SVIError, ValueError) as exc:
        detail = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        msg = f"{type(exc).__name__}: {detail}"
        code = EXIT_CONFIG
    print(f"svikit: error: {msg}", file=_sys.stderr)
    _write_failed(out_dir, msg)
    return code


def format_models(machine: bool = False) -> str:
    models = list_models()
    if machine:
        return json.dumps(models, indent=2, sort_keys=True) + "\n"
    lines = []
    for m in models:
        lines.append(f"[{m['name']}]")
        lines.append(f"kind = {m['kind']}")
        lines.append(f"anchor = {m['anchor']}")
        for k, v in m["parameters"].items():
            lines.append(f"parameters.{k} = {format_value(v)}")
        lines.append(f"symmetries = {', '.join(m['symmetries']) or 'none'}")
        lines.append(f"constrained = {format_value(m['constrained'])}")
        lines.append(f"integrators = {', '.join(m['integrators'])}")
        lines.append("")
    return "\n".join(lines)


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigParse(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svikit", description="Stochastic variational integrator experiments.")
    ap.add_argument("--version", action="version", version=f"svikit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress (with timestamps) to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STUDIES:
        sp = sub.add_parser(name, help=f"run a {name} study")
        sp.add_argument("--config", help="experiment config file (key = value lines)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override a config key (repeatable)")
    lm = sub.add_parser("list-models", help="describe the model catalog")
    lm.add_argument("--json", action="store_true", help="machine-readable output")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=_sys.stderr,
    )
    if args.command == "list-models":
        _sys.stdout.write(format_models(args.json))
        return EXIT_OK
    try:
        overrides = _parse_set(args.set)
    except ConfigParse as exc:
        print(f"svikit: error: {exc}", file=_sys.stderr)
        _write_failed(args.out, str(exc))
        return EXIT_CONFIG
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["outputs"] = args.out
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    return run(args.config, args.command, overrides)


if __name__ == "__main__":
    raise SystemExit(main())
