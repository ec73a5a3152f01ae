"""Experiment drivers shared by the command line and the acceptance tests."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .basis import (BasisDictionary, pendulum_dictionary,
                    pendulum_lqr_dictionary)
from .edmd import (KoopmanModel, fit_least_squares, reconstruction_error,
                   spectral_radius)
from .lqr import FeedbackLaw, LQRWeights, solve_infinite_lqr
from .lyapunov import LyapunovCertificate, certify_trajectory
from .snapshots import AccumulatorSet, build_from_pairs, build_from_trajectory
from .soc import SOCConfig, fit_stable, project_nearest_stable
from .systems import (PendulumParams, RandomDataSpec, pendulum_derivative,
                      random_snapshots, rk4_step, sample_training_set,
                      sample_uniform)

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi

# -- worked 3x3 example -------------------------------------------------------

WORKED_X = np.array([[0.1419, 0.4218, 0.9157, 0.7922, 0.9595],
                     [0.6557, 0.0357, 0.8491, 0.9340, 0.6787],
                     [0.7577, 0.7431, 0.3922, 0.6555, 0.1712]])
WORKED_Y = np.array([[8.1472, 9.0579, 1.2699, 9.1338, 6.3236],
                     [0.9754, 2.7850, 5.4688, 9.5751, 9.6489],
                     [1.5761, 9.7059, 9.5717, 4.8538, 8.0028]])
# stable matrices reported for this data by two stabilizing methods
WORKED_K1 = np.array([[0.0041, -6.6031, 5.1709],
                      [10.3449, -1.9480, -0.0590],
                      [11.7192, -6.7149, 3.4609]])
WORKED_K2 = np.array([[5.6337, -8.2334, 11.5883],
                      [14.4877, -5.0863, 1.9636],
                      [8.3346, -2.8916, 1.0662]])
WORKED_TARGETS = {
    "K1": {"error": 203.04, "distance": 45.98, "eig_real": (0.87, 0.87, -0.22)},
    "K2": {"error": 79.47, "distance": 108.53, "eig_real": (0.98, 0.98, -0.35)},
}


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}"


def _sorted_real(lam) -> np.ndarray:
    return np.sort(np.real(lam))[::-1]


def worked_example(config: Optional[SOCConfig] = None) -> dict:
    """Least squares, both reference matrices, SOC and projection baseline."""
    acc = AccumulatorSet.from_matrices(WORKED_X, WORKED_Y)
    ls = fit_least_squares(acc)
    out = {"K_ls": ls.A, "ls_error": reconstruction_error(ls.A, None, acc)}
    for name, K in (("K1", WORKED_K1), ("K2", WORKED_K2)):
        out[name] = {
            "error": reconstruction_error(K, None, acc),
            "distance": 0.5 * float(np.sum((ls.A - K) ** 2)),
            "eigenvalues": np.linalg.eigvals(K),
            "spectral_radius": spectral_radius(K),
        }
    t0 = time.perf_counter()
    model, state = fit_stable(acc, config, init=ls)
    out["soc"] = {"A": model.A, "error": state.objective,
                  "eigenvalues": model.eigenvalues,
                  "spectral_radius": model.spectral_radius,
                  "iterations": state.iter, "reason": state.reason,
                  "seconds": time.perf_counter() - t0}
    A_proj = project_nearest_stable(ls.A, config)
    out["projection"] = {"A": A_proj,
                         "error": reconstruction_error(A_proj, None, acc),
                         "distance": 0.5 * float(np.sum((ls.A - A_proj) ** 2))}
    return out


def worked_example_checks(report: dict, tol: float = 0.05,
                          eig_tol: float = 0.01) -> List[Check]:
    checks = []
    for name, tgt in WORKED_TARGETS.items():
        r = report[name]
        for key in ("error", "distance"):
            checks.append(Check(
                f"{name} {key}", abs(r[key] - tgt[key]) <= tol,
                f"{r[key]:.4f} vs {tgt[key]} (+-{tol})"))
        got = _sorted_real(r["eigenvalues"])
        want = np.sort(np.array(tgt["eig_real"]))[::-1]
        checks.append(Check(
            f"{name} eigenvalues", bool(np.all(np.abs(got - want) <= eig_tol)),
            f"real parts {np.round(got, 4).tolist()} vs {want.tolist()}"))
    soc = report["soc"]
    checks.append(Check("SOC stable", soc["spectral_radius"] <= 1 + 1e-8,
                        f"spectral radius {soc['spectral_radius']:.6f}"))
    checks.append(Check("SOC error <= 85", soc["error"] <= 85,
                        f"{soc['error']:.4f}"))
    checks.append(Check("SOC beats projection",
                        soc["error"] < report["projection"]["error"],
                        f"{soc['error']:.4f} < {report['projection']['error']:.4f}"))
    return checks


# -- pendulum prediction --------------------------------------------------------

@dataclass
class PendulumConfig:
    train_sizes: Tuple[int, ...] = (50, 100, 200, 500, 1000)
    train_ranges: Tuple[Tuple[float, float], ...] = ((-TWO_PI, TWO_PI), (-2.5, 2.5))
    eval_ranges: Tuple[Tuple[float, float], ...] = ((-TWO_PI, TWO_PI), (-2.5, 2.5))
    n_eval: int = 300
    horizon: float = 3.0
    dt: float = 0.02
    beta: float = 0.0
    seed: int = 0
    soc: SOCConfig = field(default_factory=lambda: SOCConfig(max_iter=5000))


def _pendulum_models(params, n, ranges, seed, soc: SOCConfig,
                     dictionary: BasisDictionary):
    pre, post, _ = sample_training_set(params, n, ranges, seed=seed)
    _, acc = build_from_pairs(dictionary, pre, post, None, params.dt)
    ls = fit_least_squares(acc, params.dt, dictionary)
    stable, state = fit_stable(acc, soc, init=ls)
    return ls, stable, state


def _angle_errors(models: Sequence[KoopmanModel], dictionary, params, s0, steps):
    """Mean absolute angle error per initial condition and per time step."""
    f = lambda s: pendulum_derivative(params, s)
    truth = np.empty((steps + 1, s0.shape[0]))
    s = s0.T.copy()
    truth[0] = s[0]
    for k in range(steps):
        s = rk4_step(f, s, params.dt)
        truth[k + 1] = s[0]
    out = []
    for m in models:
        psi = dictionary.evaluate_state(s0.T)
        pred = np.empty_like(truth)
        peak = np.abs(psi).max(axis=0)
        pred[0] = psi[0]
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(steps):
                psi = m.A @ psi
                pred[k + 1] = psi[0]
                peak = np.maximum(peak, np.abs(psi).max(axis=0))
            err = np.abs(pred - truth)
        err[~np.isfinite(err)] = np.inf
        bounded = np.isfinite(peak) & (peak < 1e6)
        out.append((err, bounded))
    return out


def pendulum_experiment(cfg: PendulumConfig) -> dict:
    """Prediction accuracy of least-squares vs stable models by training size."""
    params = PendulumParams(beta=cfg.beta, dt=cfg.dt)
    d = pendulum_dictionary()
    steps = int(round(cfg.horizon / cfg.dt))
    rng = np.random.default_rng(cfg.seed + 10_000)
    s0 = sample_uniform(rng, cfg.eval_ranges, cfg.n_eval)
    rows, curves = [], {}
    for n in cfg.train_sizes:
        ls, st, state = _pendulum_models(params, n, cfg.train_ranges, cfg.seed,
                                         cfg.soc, d)
        (e_ls, b_ls), (e_st, b_st) = _angle_errors((ls, st), d, params, s0, steps)
        per_ls, per_st = e_ls.mean(axis=0), e_st.mean(axis=0)
        rows.append({
            "n_train": n,
            "ls_mean": float(per_ls.mean()), "ls_std": float(per_ls.std()),
            "soc_mean": float(per_st.mean()), "soc_std": float(per_st.std()),
            "ls_spectral_radius": ls.spectral_radius,
            "soc_spectral_radius": st.spectral_radius,
            "ls_class": ls.stability_class.value,
            "soc_class": st.stability_class.value,
            "ls_bounded": float(b_ls.mean()), "soc_bounded": float(b_st.mean()),
            "soc_iterations": state.iter,
        })
        curves[n] = {"t": cfg.dt * np.arange(steps + 1),
                     "ls": e_ls.mean(axis=1), "soc": e_st.mean(axis=1),
                     "ls_eig": ls.eigenvalues, "soc_eig": st.eigenvalues}
        log.info("n=%d: LS %.3f rad, stable %.3f rad", n, rows[-1]["ls_mean"],
                 rows[-1]["soc_mean"])
    return {"rows": rows, "curves": curves}


@dataclass
class DampedConfig:
    n_seeds: int = 20
    n_train: int = 500
    beta: float = -0.1
    dt: float = 0.02
    train_ranges: Tuple[Tuple[float, float], ...] = ((-math.pi, math.pi), (-1.0, 1.0))
    seed: int = 0
    soc: SOCConfig = field(default_factory=lambda: SOCConfig(max_iter=2000))


def damped_sweep(cfg: DampedConfig) -> List[dict]:
    """Stability class of both fits over seeded training sets."""
    params = PendulumParams(beta=cfg.beta, dt=cfg.dt)
    d = pendulum_dictionary()
    rows = []
    for k in range(cfg.n_seeds):
        ls, st, _ = _pendulum_models(params, cfg.n_train, cfg.train_ranges,
                                     cfg.seed + k, cfg.soc, d)
        rows.append({"seed": cfg.seed + k,
                     "ls_spectral_radius": ls.spectral_radius,
                     "ls_class": ls.stability_class.value,
                     "soc_spectral_radius": st.spectral_radius,
                     "soc_class": st.stability_class.value})
    return rows


# -- LQR and Lyapunov certification ----------------------------------------

@dataclass
class LyapunovConfig:
    dt: float = 0.1
    n_design: int = 3000
    design_ranges: Tuple[Tuple[float, float], ...] = (
        (-1.2 * math.pi, 1.2 * math.pi), (-8.0, 8.0))
    input_range: Tuple[float, float] = (-20.0, 20.0)
    q_state: Tuple[float, ...] = (1.0, 1.0)
    r: Tuple[float, ...] = (0.01,)
    s0: Tuple[float, float] = (math.pi, 5.0)
    target: Tuple[float, float] = (0.0, 0.0)
    duration: float = 10.0
    seed: int = 0
    normalize_pairs: bool = True
    path: str = "continuous"
    residual: str = "forward"
    soc: SOCConfig = field(default_factory=SOCConfig)


@dataclass
class LyapunovRun:
    design: KoopmanModel
    law: FeedbackLaw
    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    closed_loop: KoopmanModel
    certificate: LyapunovCertificate


def design_pendulum_lqr(cfg: LyapunovConfig):
    """Least-squares model with inputs and its infinite-horizon LQR law."""
    params = PendulumParams(dt=cfg.dt)
    d = pendulum_lqr_dictionary(1)
    pre, post, u = sample_training_set(params, cfg.n_design, cfg.design_ranges,
                                       seed=cfg.seed, input_range=cfg.input_range)
    _, acc = build_from_pairs(d, pre, post, u, cfg.dt)
    model = fit_least_squares(acc, cfg.dt, d)
    weights = LQRWeights.lifted(cfg.q_state, cfg.r, d.n_state_terms)
    law, _ = solve_infinite_lqr(model.A, model.B, weights,
                                psi_des=d.evaluate_state(np.asarray(cfg.target)))
    return model, law


def simulate_closed_loop(law: FeedbackLaw, dictionary: BasisDictionary,
                         params: PendulumParams, s0, steps: int):
    """Apply the sampled-data law (input held over each step) to the plant."""
    s = np.asarray(s0, dtype=float)
    states, inputs = [s], []
    for k in range(steps):
        u = float(law.control(dictionary.evaluate_state(s), k)[0])
        s = rk4_step(lambda z: pendulum_derivative(params, z, u), s, params.dt)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError(f"closed loop diverged at step {k + 1}")
        states.append(s)
        inputs.append(u)
    return np.array(states), np.array(inputs)


def fit_closed_loop(states, dictionary: BasisDictionary, dt: float,
                    soc: SOCConfig, normalize_pairs: bool = True):
    """Stable autonomous model of a measured closed-loop trajectory.

    With ``normalize_pairs`` each pair is divided by ``||Psi_k||`` so the fit
    minimizes relative one-step residuals; a linear model is invariant to
    that per-pair scaling, and the validity test is a relative condition.
    """
    snap, acc = build_from_trajectory(dictionary, states, None, dt)
    if normalize_pairs:
        w = 1.0 / np.maximum(np.linalg.norm(snap.X, axis=0), 1e-12)
        acc = AccumulatorSet.from_matrices(snap.X * w, snap.Y * w)
    model, _ = fit_stable(acc, soc, dt=dt, dictionary=dictionary)
    return model


def lyapunov_pipeline(cfg: LyapunovConfig) -> LyapunovRun:
    design, law = design_pendulum_lqr(cfg)
    params = PendulumParams(dt=cfg.dt)
    steps = int(round(cfg.duration / cfg.dt))
    d_ctrl = design.dictionary
    states, inputs = simulate_closed_loop(law, d_ctrl, params, cfg.s0, steps)
    d_auto = pendulum_lqr_dictionary(0)
    cl = fit_closed_loop(states, d_auto, cfg.dt, cfg.soc, cfg.normalize_pairs)
    cert = certify_trajectory(cl, states, cfg.dt, Q=np.eye(d_auto.n_state_terms),
                              path=cfg.path, residual=cfg.residual,
                              equilibria=[cfg.target])
    return LyapunovRun(design, law, cfg.dt * np.arange(steps + 1), states,
                       inputs, cl, cert)


# -- random benchmark ----------------------------------------------------------

@dataclass
class BenchConfig:
    grid_w: Tuple[int, ...] = (2, 5, 10, 20)
    grid_p: Tuple[int, ...] = (2, 5, 10, 20, 50)
    seed: int = 0
    workers: int = 1
    soc: SOCConfig = field(default_factory=lambda: SOCConfig(max_iter=2000))


def bench_cell(W: int, P: int, seed: int, soc: SOCConfig) -> dict:
    X, Y = random_snapshots(RandomDataSpec(W, P, seed))
    acc = AccumulatorSet.from_matrices(X, Y)
    t0 = time.perf_counter()
    ls = fit_least_squares(acc)
    model, state = fit_stable(acc, soc, init=ls)
    t_soc = time.perf_counter() - t0
    t0 = time.perf_counter()
    A_proj = project_nearest_stable(ls.A, soc)
    t_proj = time.perf_counter() - t0
    norm = W * P
    return {"W": W, "P": P, "seed": seed,
            "soc_error": state.objective / norm,
            "projection_error": reconstruction_error(A_proj, None, acc) / norm,
            "soc_spectral_radius": model.spectral_radius,
            "soc_iterations": state.iter, "soc_reason": state.reason,
            "soc_seconds": t_soc, "projection_seconds": t_proj}


def _cell_args(cfg: BenchConfig):
    # one seed per cell, derived deterministically from the base seed
    return [(W, P, cfg.seed + 1000 * i + j, cfg.soc)
            for i, W in enumerate(cfg.grid_w) for j, P in enumerate(cfg.grid_p)]


def _run_cell(args):
    return bench_cell(*args)


def bench_random(cfg: BenchConfig) -> List[dict]:
    args = _cell_args(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_cell, args))
    return [_run_cell(a) for a in args]
