"""Command-line workflow: generate, train, rollout, evaluate, export-plots."""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy import linalg

from .config import ConfigError, ExperimentConfig
from .files import (
    FormatError,
    load_snapshots,
    load_trajectory,
    power_stats,
    read_document,
    sha256_file,
    snapshots_payload,
    trajectory_payload,
    write_document,
)
from .hyper import HyperBasis, pack, param_count, param_names, unpack
from .prior import PriorContext
from .rollout import (
    IncompatibleGridsError,
    NewtonDivergenceError,
    RolloutError,
    simulate_posterior,
    simulate_true,
    trajectory_error,
)
from .train import (
    FactorizationError,
    OptimizationError,
    PosteriorModel,
    TrajectoryTooShortError,
    bounds_for,
    extract_snapshots,
    nlml,
    optimize,
)

log = logging.getLogger("phgp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_OPTIMIZATION = 4
EXIT_ROLLOUT = 5

TRAJECTORY_FILE = "trajectory.json"
SNAPSHOT_FILE = "snapshots.json"
FIELD_GRID = 201


class CommandError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------- helpers


def _thread_limit():
    raw = os.environ.get("PHGP_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CommandError(EXIT_CONFIG, f"PHGP_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _data_file(data_dir, name) -> Path:
    path = Path(data_dir) / name
    if not path.is_file():
        raise CommandError(EXIT_CONFIG, f"missing input file {path}")
    return path


class LoadedModel:
    """Model document rebuilt into a posterior; the Cholesky factor is recomputed."""

    def __init__(self, path):
        self.path = Path(path)
        self.doc = read_document(self.path, "model")
        self.config = ExperimentConfig.from_dict(self.doc["config"])
        try:
            self.basis = HyperBasis.from_dict(self.doc["basis"])
            self.hp = unpack(self.doc["theta"], self.basis)
            self.init_hp = unpack(self.doc["init_theta"], self.basis)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{self.path}: bad hyperparameters ({exc})") from None
        ref = self.doc["training_data"]
        snap_path = self.path.parent / ref["path"]
        if not snap_path.is_file():
            raise FormatError(f"{self.path}: training data {snap_path} not found")
        if sha256_file(snap_path) != ref["sha256"]:
            raise FormatError(f"{self.path}: training data {snap_path} has changed (sha256 mismatch)")
        self.training, _ = load_snapshots(snap_path)
        self.sys = self.config.system()
        if self.training.dim != self.sys.size:
            raise FormatError(f"{self.path}: training data dimension does not match the mesh")
        self.variant = self.doc["variant"]

    def posterior(self, initial: bool = False) -> PosteriorModel:
        hp = self.init_hp if initial else self.hp
        return PosteriorModel(PriorContext(self.sys, hp, self.variant), self.training)

    def rollout(self, times, initial: bool = False):
        cfg = self.config
        tol = cfg["rollout"]
        try:
            model = self.posterior(initial)
        except (FactorizationError, linalg.LinAlgError) as exc:
            raise CommandError(EXIT_ROLLOUT, f"cannot condition the posterior: {exc}") from None
        alpha0 = np.zeros(self.sys.size)
        with np.errstate(over="raise", invalid="raise"):
            try:
                return simulate_posterior(
                    model, alpha0, cfg.input_fn(), cfg.t_final, times, tol["rtol"], tol["atol"]
                )
            except (RolloutError, FloatingPointError) as exc:
                raise CommandError(EXIT_ROLLOUT, f"rollout failed: {exc}") from None


def _rel_l2(x, a, b) -> float:
    den = np.trapezoid(b**2, x)
    return float(np.sqrt(np.trapezoid((a - b) ** 2, x) / den)) if den > 0 else float("nan")


def _corr(a, b):
    if np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def field_samples(hp, cfg: ExperimentConfig, n: int = FIELD_GRID) -> dict:
    x = np.linspace(0.0, cfg.length, n)
    return {
        "x": x,
        "m_q": hp.m_q(x),
        "m_p": hp.m_p(x),
        "lam_q": np.maximum(hp.lam_q(x), 0.0),
        "lam_p": np.maximum(hp.lam_p(x), 0.0),
        "T": cfg.material_function("T")(x),
        "rho_inv": 1.0 / cfg.material_function("rho")(x),
        "c": cfg.material_function("c")(x),
    }


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    seed = cfg["training"]["seed"] if args.seed is None else args.seed
    sim = cfg["simulation"]
    sys_ = cfg.system()
    u = cfg.input_fn()
    try:
        traj = simulate_true(
            sys_, np.zeros(sys_.size), u, cfg.t_final, cfg.dt, sim["newton_tol"], sim["newton_max_iter"]
        )
    except (NewtonDivergenceError, FloatingPointError, linalg.LinAlgError) as exc:
        raise CommandError(EXIT_SIMULATION, f"simulation failed: {exc}") from None
    try:
        ts = extract_snapshots(traj, cfg["training"]["snapshots"], cfg.t_final, sys_, u, cfg["training"]["noise_std"], seed)
    except TrajectoryTooShortError as exc:
        raise CommandError(EXIT_SIMULATION, str(exc)) from None
    stats = power_stats(traj)
    out = Path(args.out)
    recorded = traj.every(sim["record_every"])
    conf = cfg.to_dict()
    write_document(out / TRAJECTORY_FILE, "trajectory", trajectory_payload(recorded, "ground_truth", conf, stats))
    write_document(out / SNAPSHOT_FILE, "snapshots", snapshots_payload(ts, cfg["training"]["noise_std"], seed, conf))
    print(f"simulated {cfg.n_steps} steps of dt={cfg.dt:g} on {sys_.size} states")
    print(f"power balance: max per-step residual {stats['max']:.3e}, cumulative drift {stats['max_cumulative_drift']:.3e}")
    print(f"snapshots: {ts.count} records x {ts.dim} coordinates = {ts.n_obs} observations")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    snap_path = _data_file(args.data, SNAPSHOT_FILE)
    training, _ = load_snapshots(snap_path)
    sys_ = cfg.system()
    if training.dim != sys_.size:
        raise CommandError(EXIT_CONFIG, f"snapshot dimension {training.dim} does not match the mesh ({sys_.size})")
    basis = cfg.basis(args.basis)
    init = cfg.initial_hyperparams(basis)
    try:
        opts = cfg.optimize_options(starts=args.starts, max_iter=args.max_iter)
        bounds_for(basis, pack(init), opts)
    except ValueError as exc:
        raise CommandError(EXIT_CONFIG, f"optimizer options: {exc}") from None
    try:
        res = optimize(sys_, training, init, opts)
    except OptimizationError as exc:
        raise CommandError(EXIT_OPTIMIZATION, str(exc)) from None
    init_nlml = res.history[0] if res.start == 0 and res.history else None
    if init_nlml is None or not np.isfinite(init_nlml):
        try:
            init_nlml = nlml(PriorContext(sys_, init), training)
        except (FactorizationError, FloatingPointError, ValueError):
            init_nlml = None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rel = os.path.relpath(snap_path.resolve(), out.parent.resolve())
    conf = cfg.to_dict()
    conf["hyper_basis"] = _basis_config(basis)
    payload = {
        "basis": basis.to_dict(),
        "variant": opts.variant,
        "param_count": param_count(res.hp),
        "param_names": param_names(basis),
        "theta": pack(res.hp).tolist(),
        "init_theta": pack(init).tolist(),
        "nlml": float(res.nlml),
        "init_nlml": float(init_nlml) if init_nlml is not None else float(res.nlml),
        "iterations": int(res.iterations),
        "start": int(res.start),
        "message": res.message,
        "history": [float(h) for h in res.history],
        "training_data": {"path": Path(rel).as_posix(), "sha256": sha256_file(snap_path)},
        "config": conf,
    }
    write_document(out, "model", payload)
    print(f"basis {basis}: {payload['param_count']} parameters, {training.n_obs} observations")
    print(f"nlml {res.nlml:.6g} after {res.iterations} iterations ({res.message})")
    print(f"sigma_f {res.hp.sigma_f:.4g}, sigma_n {res.hp.sigma_n:.4g}")
    return EXIT_OK


def _basis_config(basis: HyperBasis) -> dict:
    if basis.kind == "p1":
        return {"kind": "p1", "node_count": basis.size}
    return {"kind": "legendre", "degree": basis.size - 1}


def cmd_rollout(args) -> int:
    model = LoadedModel(args.model)
    cfg = ExperimentConfig.load(args.config)
    if cfg["mesh"] != model.config["mesh"]:
        raise CommandError(EXIT_CONFIG, "rollout config mesh differs from the model's mesh")
    model.config = cfg
    times = cfg.sample_times()
    traj = model.rollout(times)
    write_document(args.out, "trajectory", trajectory_payload(traj, "posterior", cfg.to_dict(), None))
    print(f"rolled out {len(times)} samples to t={times[-1]:g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = LoadedModel(args.model)
    truth, truth_doc = load_trajectory(_data_file(args.data, TRAJECTORY_FILE))
    if truth.states.shape[1] != model.sys.size:
        raise CommandError(EXIT_CONFIG, "ground-truth trajectory does not match the model's mesh")
    if args.rollout:
        learned, _ = load_trajectory(args.rollout)
    else:
        learned = model.rollout(truth.times)
    untrained = model.rollout(truth.times, initial=True)
    try:
        err = trajectory_error(learned, truth, model.sys)
        err0 = trajectory_error(untrained, truth, model.sys)
    except IncompatibleGridsError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None
    f = field_samples(model.hp, model.config)
    x = f["x"]
    report = {
        "rollout_error": err,
        "untrained_rollout_error": err0,
        "power_balance": truth_doc["power_balance"],
        "nlml": float(model.doc["nlml"]),
        "param_count": int(model.doc["param_count"]),
        "basis": model.doc["basis"],
        "fields": {k: v.tolist() for k, v in f.items()},
        "correlations": {
            "m_q_T": _corr(f["m_q"], f["T"]),
            "m_p_rho_inv": _corr(f["m_p"], f["rho_inv"]),
            "lam_q_c": _corr(f["lam_q"], f["c"]),
            "lam_p_c": _corr(f["lam_p"], f["c"]),
        },
        "relative_l2": {
            "m_q_T": _rel_l2(x, f["m_q"], f["T"]),
            "m_p_rho_inv": _rel_l2(x, f["m_p"], f["rho_inv"]),
        },
    }
    write_document(args.report, "report", report)
    print(f"rollout error {err:.4g} (untrained {err0:.4g})")
    c = report["correlations"]
    print(f"corr(m_q, T) {c['m_q_T']}, corr(m_p, 1/rho) {c['m_p_rho_inv']}, corr(lam_q, c) {c['lam_q_c']}")
    return EXIT_OK


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def cmd_export_plots(args) -> int:
    if len(args.traj) != 2:
        raise CommandError(EXIT_CONFIG, "export-plots needs exactly two --traj files")
    (ta, _), (tb, _) = (load_trajectory(p) for p in args.traj)
    if len(ta) != len(tb) or not np.allclose(ta.times, tb.times, rtol=0, atol=1e-9):
        raise CommandError(EXIT_CONFIG, "the two trajectories use different time grids")
    if ta.states.shape != tb.states.shape:
        raise CommandError(EXIT_CONFIG, "the two trajectories have different state sizes")
    doc = read_document(args.model, "model")
    cfg = ExperimentConfig.from_dict(doc["config"])
    hp = unpack(doc["theta"], HyperBasis.from_dict(doc["basis"]))
    nodes = cfg.system().space_p.mesh.nodes
    n_q = len(nodes)
    if ta.states.shape[1] != 2 * n_q:
        raise CommandError(EXIT_CONFIG, "trajectories do not match the model's mesh")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pa, pb = ta.states[:, n_q:], tb.states[:, n_q:]
    rows = (
        (t, x, pa[k, i], pb[k, i]) for k, t in enumerate(ta.times) for i, x in enumerate(nodes)
    )
    _write_csv(out / "fig1_alpha_p.csv", ["t", "x", "alpha_p_a", "alpha_p_b"], rows)
    f = field_samples(hp, cfg)
    _write_csv(out / "fig2_means.csv", ["x", "m_q", "T", "m_p", "rho_inv"],
               zip(f["x"], f["m_q"], f["T"], f["m_p"], f["rho_inv"]))
    _write_csv(out / "fig3_lengths.csv", ["x", "lam_q", "lam_p", "c"],
               zip(f["x"], f["lam_q"], f["lam_p"], f["c"]))
    print(f"wrote fig1_alpha_p.csv, fig2_means.csv, fig3_lengths.csv to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phgp", description="GP learning of a port-Hamiltonian wave equation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate the ground truth and extract snapshots")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit hyperparameters by minimizing the NLML")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="directory written by generate")
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--basis", help="override the hyper-basis, e.g. p1:11 or legendre:3")
    t.add_argument("--starts", type=int)
    t.add_argument("--max-iter", type=int, dest="max_iter")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="integrate the posterior-mean dynamics")
    r.add_argument("--model", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="trajectory file")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("evaluate", help="compare a trained model with the ground truth")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="directory written by generate")
    e.add_argument("--report", required=True)
    e.add_argument("--rollout", help="use this trajectory file instead of rolling out again")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-plots", help="write CSV data for the figures")
    x.add_argument("--traj", action="append", required=True, help="give twice: reference then comparison")
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CommandError as exc:
        print(f"phgp: error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"phgp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
