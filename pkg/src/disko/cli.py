"""Command line entry point: ``disko <command> [--options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import experiments as ex
from .basis import (BasisDictionary, DictionaryError, coordinate_terms,
                    pendulum_dictionary, pendulum_lqr_dictionary)
from .config import (ConfigError, ExperimentConfig, apply_env, load_config,
                     resolve_paths, validate)
from .edmd import (KoopmanModel, NumericalError, fit_least_squares, load_model,
                   reconstruction_error, save_model)
from .lqr import LQRWeights, solve_finite_lqr, solve_infinite_lqr
from .lyapunov import write_certificate_csv
from .rollout import error_profile, rollout, write_rollout_csv
from .snapshots import (AccumulatorSet, SnapshotError, build_from_trajectory,
                        read_trajectory_csv, write_trajectory_csv)
from .soc import fit_stable
from .svg import Chart, eigenvalue_chart

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}")


def _ints(text: str) -> List[int]:
    return [int(v) for v in _floats(text)]


# -- shared helpers ---------------------------------------------------------

def _resolve_dictionary(spec: str, state_dim: int, input_dim: int) -> BasisDictionary:
    if spec == "pendulum6":
        return pendulum_dictionary(input_dim)
    if spec == "pendulum8":
        return pendulum_lqr_dictionary(input_dim)
    if spec:
        try:
            d = BasisDictionary.from_text(Path(spec).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read dictionary {spec}: {exc}") from None
        if d.state_dim != state_dim or d.input_dim != input_dim:
            raise SnapshotError(
                f"dictionary expects N={d.state_dim}, M={d.input_dim} but the "
                f"data has N={state_dim}, M={input_dim}")
        return d
    labels = [t.label for t in coordinate_terms(state_dim)]
    return BasisDictionary.from_labels(labels, state_dim, input_dim)


def _load_trajectories(cfg: ExperimentConfig):
    if not cfg.trajectories:
        raise ConfigError("no trajectory files given")
    trajs = [read_trajectory_csv(p, cfg.dt) for p in cfg.trajectories]
    N, M = trajs[0].states.shape[1], trajs[0].inputs.shape[1]
    dt = cfg.dt or trajs[0].dt
    for tr in trajs:
        if tr.states.shape[1] != N or tr.inputs.shape[1] != M:
            raise SnapshotError("trajectory files disagree in dimensions")
        if len(tr.t) > 1 and not np.isclose(tr.dt, dt, rtol=1e-9, atol=0):
            raise SnapshotError(f"trajectory spacing {tr.dt} differs from {dt}")
    return trajs, N, M, dt


def _trajectory_pairs(cfg: ExperimentConfig):
    """Lifted pairs of every trajectory, in file order."""
    trajs, N, M, dt = _load_trajectories(cfg)
    d = _resolve_dictionary(cfg.dictionary, N, M)
    snaps = [build_from_trajectory(d, tr.states, tr.inputs if M else None, dt)[0]
             for tr in trajs]
    X = np.hstack([s.X for s in snaps])
    Y = np.hstack([s.Y for s in snaps])
    U = np.hstack([s.U for s in snaps])
    return d, dt, X, Y, U


def _report(model: KoopmanModel, objective: float, pairs: int, out=None):
    out = out or sys.stdout
    print(f"pairs = {pairs}", file=out)
    print(f"objective = {objective:.10g}", file=out)
    print(f"spectral_radius = {model.spectral_radius:.10g}", file=out)
    print(f"stability = {model.stability_class.value}", file=out)
    lam = model.eigenvalues
    print("eigenvalues = " + ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in lam),
          file=out)


def _out_path(cfg: ExperimentConfig, given: Optional[str], default: str) -> Path:
    p = Path(given) if given else Path(cfg.output_dir) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_rows(path: Path, rows: List[dict]):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})


# -- commands ---------------------------------------------------------------

def cmd_fit(cfg: ExperimentConfig, args) -> int:
    d, dt, X, Y, U = _trajectory_pairs(cfg)
    acc = AccumulatorSet.from_matrices(X, Y, U)
    model = fit_least_squares(acc, dt, d)
    _report(model, reconstruction_error(model.A, model.B, acc), acc.count)
    path = _out_path(cfg, args.output, "model.txt")
    save_model(path, model)
    print(f"model written to {path}")
    return EXIT_OK


def cmd_fit_stable(cfg: ExperimentConfig, args) -> int:
    d, dt, X, Y, U = _trajectory_pairs(cfg)
    P = X.shape[1]
    acc = AccumulatorSet.empty(X.shape[0], U.shape[0])
    soc = cfg.soc_config()
    diag_fh = open(args.diagnostics, "w", newline="") if args.diagnostics else None
    try:
        # Each chunk is ingested and the model refit, as in an online loop.
        for k, idx in enumerate(np.array_split(np.arange(P), cfg.chunks)):
            if idx.size == 0:
                continue
            acc.ingest_batch(X[:, idx], Y[:, idx], U[:, idx])
            model, state = fit_stable(acc, soc, dt=dt, dictionary=d,
                                      diagnostics=diag_fh)
            log.info("chunk %d: %d pairs, objective %.6g", k, acc.count,
                     state.objective)
    finally:
        if diag_fh:
            diag_fh.close()
    _report(model, state.objective, acc.count)
    print(f"iterations = {state.iter} ({state.reason})")
    path = _out_path(cfg, args.output, "model.txt")
    save_model(path, model)
    print(f"model written to {path}")
    return EXIT_OK


def _load(path: str):
    try:
        return load_model(path)
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None


def cmd_rollout(cfg: ExperimentConfig, args) -> int:
    model, _ = _load(args.model)
    s0 = np.asarray(args.initial_state)
    psi0 = model.dictionary.evaluate_state(s0) if model.dictionary else s0
    res = rollout(model, psi0, None, args.steps)
    path = _out_path(cfg, args.output, "rollout.csv")
    with open(path, "w", newline="") as fh:
        write_rollout_csv(fh, res)
    print(f"rollout of {args.steps} steps written to {path}")
    return EXIT_OK


def cmd_errors(cfg: ExperimentConfig, args) -> int:
    model, _ = _load(args.model)
    tr = read_trajectory_csv(args.trajectory, cfg.dt)
    d = model.dictionary
    Psi = d.evaluate_state(tr.states.T).T if d else tr.states
    U = None
    if model.n_input_terms and tr.inputs.size:
        U = d.evaluate_input(tr.inputs.T).T if d else tr.inputs
    prof = error_profile(model, Psi, U, args.norm)
    res = rollout(model, Psi[0], U, Psi.shape[0] - 1)
    path = _out_path(cfg, args.output, "errors.csv")
    with open(path, "w", newline="") as fh:
        write_rollout_csv(fh, res, prof)
    print(f"e_max = {prof.e_max:.6g}")
    print(f"final |E| = {prof.global_norms[-1]:.6g}, bound = {prof.bound[-1]:.6g}")
    print(f"identity residual = {prof.identity_residual:.3g}")
    return EXIT_OK


def cmd_lqr(cfg: ExperimentConfig, args) -> int:
    model, extras = _load(args.model)
    if model.n_input_terms == 0:
        raise ConfigError("model has no inputs; LQR needs a B matrix")
    weights = LQRWeights.lifted(cfg.q_state, cfg.r, model.n_state_terms)
    d = model.dictionary
    target = np.asarray(cfg.target[:d.state_dim] if d else cfg.target)
    psi_des = d.evaluate_state(target) if d else np.zeros(model.n_state_terms)
    extra = {}
    if args.horizon:
        law = solve_finite_lqr(model.A, model.B, weights, args.horizon,
                               weights.Q, psi_des)
        for k, K in enumerate(law.K):
            extra[f"K_LQR_{k}"] = K
        K0 = law.K[0]
    else:
        law, P = solve_infinite_lqr(model.A, model.B, weights, psi_des=psi_des)
        extra = {"K_LQR": law.K, "P_LQR": P}
        K0 = law.K
    extra["psi_des"] = psi_des[None, :]
    rho = np.max(np.abs(np.linalg.eigvals(model.A - model.B @ K0)))
    print("K_LQR = " + np.array2string(K0, precision=6))
    print(f"closed_loop_spectral_radius = {rho:.10g}")
    path = _out_path(cfg, args.output, "lqr_model.txt")
    save_model(path, model, extra)
    print(f"gains written to {path}")
    return EXIT_OK


def cmd_lyapunov(cfg: ExperimentConfig, args) -> int:
    run = ex.lyapunov_pipeline(cfg.lyapunov_config())
    c = run.certificate
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "certificate.csv", "w", newline="") as fh:
        write_certificate_csv(fh, c)
    write_trajectory_csv(out / "closed_loop.csv", run.t, run.states, run.inputs)
    save_model(out / "closed_loop_model.txt", run.closed_loop,
               {"P_lyapunov": c.P, "alpha_upper": c.alpha_upper})
    save_model(out / "design_model.txt", run.design, {"K_LQR": run.law.K})
    ch = Chart("Lyapunov certificate", "t [s]", "log10 value")
    ch.line(c.t, np.log10(np.maximum(c.alpha_lower, 1e-300)), "alpha_lower")
    ch.line(c.t, np.full_like(c.t, np.log10(c.alpha_upper)), "alpha_upper",
            dashed=True)
    ch.line(c.t, np.log10(np.maximum(c.V, 1e-300)), "V")
    ch.save(out / "certificate.svg")
    print(f"path = {c.path}")
    print(f"lyapunov_residual = {c.residual:.3g}")
    print(f"alpha_upper = {c.alpha_upper:.6g}")
    print(f"valid_fraction = {c.fraction_valid:.3f}")
    print(f"valid_suffix = {c.valid_suffix} samples from t = {c.suffix_start}")
    print(f"suffix_V_decreasing = {c.suffix_decreasing}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_pendulum(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = ex.pendulum_experiment(cfg.pendulum_config())
    _write_rows(out / "pendulum_errors.csv", res["rows"])
    for r in res["rows"]:
        print(f"n={r['n_train']}: LS {r['ls_mean']:.4f} rad ({r['ls_class']}), "
              f"stable {r['soc_mean']:.4f} rad ({r['soc_class']})")
    n_show = max(res["curves"])
    cur = res["curves"][n_show]
    ch = Chart(f"Mean angle error, {n_show} training pairs", "t [s]",
               "mean |angle error| [rad]")
    ch.line(cur["t"], cur["ls"], "least squares")
    ch.line(cur["t"], cur["soc"], "stable")
    ch.save(out / "pendulum_curves.svg")
    sizes = [r["n_train"] for r in res["rows"]]
    ch = Chart("Data efficiency", "training pairs", "mean angle error [rad]")
    ch.line(sizes, [r["ls_mean"] for r in res["rows"]], "least squares")
    ch.line(sizes, [r["soc_mean"] for r in res["rows"]], "stable")
    ch.save(out / "pendulum_sweep.svg")
    eigenvalue_chart({"least squares": cur["ls_eig"], "stable": cur["soc_eig"]},
                     "Eigenvalues").save(out / "pendulum_eigenvalues.svg")
    if not args.no_damped:
        rows = ex.damped_sweep(cfg.damped_config())
        _write_rows(out / "damped.csv", rows)
        n_uns = sum(r["ls_class"] == "unstable" for r in rows)
        n_st = sum(r["soc_class"] != "unstable" for r in rows)
        print(f"damped: LS unstable in {n_uns}/{len(rows)}, "
              f"stable fit stable in {n_st}/{len(rows)}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_bench_random(cfg: ExperimentConfig, args) -> int:
    rows = ex.bench_random(cfg.bench_config())
    path = _out_path(cfg, args.output, "bench_random.csv")
    # timings go to a separate file so the main table is reproducible
    keep = [{k: v for k, v in r.items() if not k.endswith("seconds")} for r in rows]
    _write_rows(path, keep)
    _write_rows(path.with_name(path.stem + "_timing.csv"),
                [{"W": r["W"], "P": r["P"], "soc_seconds": r["soc_seconds"],
                  "projection_seconds": r["projection_seconds"]} for r in rows])
    wins = sum(r["soc_error"] <= r["projection_error"] for r in rows)
    print(f"stable fit <= projection baseline in {wins}/{len(rows)} cells")
    print(f"results written to {path}")
    return EXIT_OK


def cmd_worked_example(cfg: ExperimentConfig, args) -> int:
    report = ex.worked_example(cfg.soc_config())
    print("least-squares solution:")
    print(np.array2string(report["K_ls"], precision=4))
    print(f"least-squares error = {report['ls_error']:.4f}")
    for name in ("K1", "K2"):
        r = report[name]
        print(f"{name}: error = {r['error']:.4f}, distance = {r['distance']:.4f}, "
              f"spectral radius = {r['spectral_radius']:.4f}")
    s = report["soc"]
    print(f"stable fit: error = {s['error']:.4f}, spectral radius = "
          f"{s['spectral_radius']:.6f}, {s['iterations']} iterations ({s['reason']})")
    print(f"projection baseline: error = {report['projection']['error']:.4f}")
    checks = ex.worked_example_checks(report)
    for c in checks:
        print(c.line())
    if args.check and not all(c.passed for c in checks):
        return EXIT_CHECK
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

COMMANDS = {
    "fit": cmd_fit, "fit-stable": cmd_fit_stable, "rollout": cmd_rollout,
    "errors": cmd_errors, "lqr": cmd_lqr, "lyapunov": cmd_lyapunov,
    "pendulum": cmd_pendulum, "bench-random": cmd_bench_random,
    "worked-example": cmd_worked_example,
}

# command line flag -> config key
_OVERRIDES = {
    "seed": "seed", "output_dir": "output_dir", "dictionary": "dictionary",
    "dt": "dt", "rho": "rho", "max_iter": "max_iter", "chunks": "chunks",
    "q_state": "q_state", "r": "r", "target": "target", "workers": "workers",
    "grid_w": "grid_w", "grid_p": "grid_p", "train_sizes": "train_sizes",
    "restarts": "restarts", "path": "path", "residual": "residual",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="disko", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    for name in ("fit", "fit-stable"):
        sp = add(name, "least-squares fit" if name == "fit" else "stable fit")
        sp.add_argument("--trajectory", action="append", default=[],
                        help="trajectory CSV (repeatable)")
        sp.add_argument("--dictionary",
                        help="dictionary file, or pendulum6 / pendulum8")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--output")
        if name == "fit-stable":
            sp.add_argument("--rho", type=float)
            sp.add_argument("--max-iter", type=int)
            sp.add_argument("--restarts", type=int)
            sp.add_argument("--chunks", type=int)
            sp.add_argument("--diagnostics", help="per-iteration CSV")

    sp = add("rollout", "multi-step prediction from a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--initial-state", type=_floats, required=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--output")

    sp = add("errors", "local/global errors along a trajectory")
    sp.add_argument("--model", required=True)
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--norm", choices=("spectral", "frobenius"), default="spectral")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--output")

    sp = add("lqr", "LQR gains for a model with inputs")
    sp.add_argument("--model", required=True)
    sp.add_argument("--q-state", type=_floats)
    sp.add_argument("--r", type=_floats)
    sp.add_argument("--target", type=_floats)
    sp.add_argument("--horizon", type=int, default=0,
                    help="finite horizon; 0 solves the infinite-horizon problem")
    sp.add_argument("--output")

    sp = add("lyapunov", "pendulum LQR and Lyapunov certificate")
    sp.add_argument("--path", choices=("continuous", "discrete"))
    sp.add_argument("--residual", choices=("forward", "hold"))

    sp = add("pendulum", "pendulum prediction and damped stability sweep")
    sp.add_argument("--train-sizes", type=_ints)
    sp.add_argument("--no-damped", action="store_true")

    sp = add("bench-random", "stable fit vs projection on random data")
    sp.add_argument("--grid-w", type=_ints)
    sp.add_argument("--grid-p", type=_ints)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--output")

    sp = add("worked-example", "3x3 example with reference matrices")
    sp.add_argument("--check", action="store_true",
                    help="exit with status 4 if any reference check fails")
    return p


def make_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = apply_env(cfg)
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, key, v)
    traj = getattr(args, "trajectory", None)
    if isinstance(traj, list) and traj:
        cfg.trajectories = traj
    resolve_paths(cfg, Path.cwd())
    return validate(cfg)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg, args)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        # LinAlgError subclasses ValueError, so it is handled first
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, SnapshotError, DictionaryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
