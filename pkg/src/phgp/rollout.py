"""Time integration of the true and learned dynamics, plus trajectory metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .wave import (
    PhSystem,
    coenergy,
    hamiltonian_discrete,
    outputs,
    supplied_power,
)

InputFn = Callable[[float], np.ndarray]


class NewtonDivergenceError(RuntimeError):
    def __init__(self, step: int, msg: str = ""):
        super().__init__(f"Newton iteration failed at step {step}{': ' + msg if msg else ''}")
        self.step = step


class RolloutError(RuntimeError):
    pass


class IncompatibleGridsError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    hamiltonian: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        k = len(self.times)
        for name in ("states", "inputs", "outputs", "hamiltonian"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != k:
                raise ValueError(f"trajectory field {name} has length {len(arr)}, expected {k}")
            setattr(self, name, arr)
        if k > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def every(self, stride: int) -> "Trajectory":
        """Subsample keeping every ``stride``-th record and the final one."""
        idx = np.arange(0, len(self), stride)
        if idx[-1] != len(self) - 1:
            idx = np.append(idx, len(self) - 1)
        return Trajectory(
            self.times[idx], self.states[idx], self.inputs[idx], self.outputs[idx],
            self.hamiltonian[idx], dict(self.diagnostics),
        )


def sine_input(amplitude=(1.0, 0.0), omega=(math.pi, 0.0), phase=(0.0, 0.0)) -> InputFn:
    amp = np.asarray(amplitude, dtype=float)
    om = np.asarray(omega, dtype=float)
    ph = np.asarray(phase, dtype=float)
    return lambda t: amp * np.sin(om * t + ph)


def zero_input(t):
    return np.zeros(2)


def experiment_input() -> InputFn:
    """``u(t) = (sin(pi t), 0)``."""
    return sine_input((1.0, 0.0), (math.pi, 0.0))


def _n_steps(t_final: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("time step must be positive")
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a whole number of steps of {dt}")
    return n


def implicit_midpoint_step(sys: PhSystem, a0, u_mid, dt, tol=1e-12, max_iter=50, step=0):
    """Solve ``M (a1 - a0) = dt [(J - R) e(a_mid) + G u_mid]`` by Newton's method."""
    nq = sys.n_q
    M, JmR = sys.M, sys.JmR
    forcing = dt * (sys.G @ u_mid)
    a1 = a0 + dt * sys.solve_M(JmR @ coenergy(sys, a0) + sys.G @ u_mid)
    for _ in range(max_iter):
        mid = 0.5 * (a0 + a1)
        res = M @ (a1 - a0) - dt * (JmR @ coenergy(sys, mid)) - forcing
        de = np.zeros((sys.size, sys.size))
        de[:nq, :nq] = sys.Mq_inv @ sys.tangent_stiffness(mid[:nq])
        de[nq:, nq:] = sys.e_p_map
        jac = M - 0.5 * dt * (JmR @ de)
        delta = np.linalg.solve(jac, res)
        a1 = a1 - delta
        if not np.all(np.isfinite(a1)):
            raise NewtonDivergenceError(step, "non-finite iterate")
        if np.max(np.abs(delta)) <= tol * (1.0 + np.max(np.abs(a1))):
            return a1
    raise NewtonDivergenceError(step, f"no convergence in {max_iter} iterations")


def simulate_true(
    sys: PhSystem,
    alpha0,
    input_fn: InputFn,
    t_final: float,
    dt: float = 1e-3,
    newton_tol: float = 1e-12,
    newton_max_iter: int = 50,
) -> Trajectory:
    """Implicit-midpoint integration of the PFEM system with fixed step ``dt``.

    The input is averaged over each step; ``diagnostics["power_residual"]``
    holds the per-step energy-balance defect.
    """
    n = _n_steps(t_final, dt)
    times = np.arange(n + 1) * dt
    states = np.empty((n + 1, sys.size))
    inputs = np.stack([np.asarray(input_fn(t), dtype=float) for t in times])
    states[0] = np.asarray(alpha0, dtype=float)
    for k in range(n):
        u_mid = 0.5 * (inputs[k] + inputs[k + 1])
        states[k + 1] = implicit_midpoint_step(sys, states[k], u_mid, dt, newton_tol, newton_max_iter, k)
    ham = np.array([hamiltonian_discrete(sys, a) for a in states])
    outs = np.stack([outputs(sys, coenergy(sys, a)) for a in states])
    mids = 0.5 * (states[1:] + states[:-1])
    u_mids = 0.5 * (inputs[1:] + inputs[:-1])
    power = np.array([supplied_power(sys, coenergy(sys, m), u) for m, u in zip(mids, u_mids)])
    defect = np.diff(ham) - dt * power
    diag = {"power_residual": np.abs(defect), "power_defect": defect, "dt": dt}
    return Trajectory(times, states, inputs, outs, ham, diag)


def simulate_posterior(
    model,
    alpha0,
    input_fn: InputFn,
    t_final: float,
    sample_times=None,
    rtol: float = 1e-6,
    atol: float = 1e-8,
) -> Trajectory:
    """Adaptive Dormand-Prince integration of the posterior-mean vector field."""
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 101)
    sample_times = np.asarray(sample_times, dtype=float)
    fun = lambda t, a: model.mean(a, input_fn(t))
    sol = solve_ivp(
        fun, (0.0, t_final), np.asarray(alpha0, dtype=float), method="RK45",
        t_eval=sample_times, rtol=rtol, atol=atol,
    )
    if sol.status != 0:
        raise RolloutError(f"integration failed: {sol.message}")
    states = sol.y.T
    inputs = np.stack([np.asarray(input_fn(t), dtype=float) for t in sample_times])
    outs = np.stack([model.outputs(a) for a in states])
    ham = np.array([model.hamiltonian(a) for a in states])
    return Trajectory(sample_times, states, inputs, outs, ham, {"nfev": int(sol.nfev)})


def trajectory_error(a: Trajectory, b: Trajectory, sys: PhSystem) -> float:
    """Relative M-weighted L2 distance of ``a`` from the reference ``b``."""
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0, atol=1e-9):
        raise IncompatibleGridsError("trajectories are sampled on different time grids")
    diff = a.states - b.states
    num = np.einsum("ka,ab,kb->", diff, sys.M, diff)
    den = np.einsum("ka,ab,kb->", b.states, sys.M, b.states)
    if not den > 0:
        raise ZeroDivisionError("reference trajectory has zero norm")
    return float(np.sqrt(num / den))


def resample(traj: Trajectory, times) -> Trajectory:
    """Pick records of ``traj`` at the given times (which must be on its grid)."""
    times = np.asarray(times, dtype=float)
    idx = np.searchsorted(traj.times, times - 1e-9)
    idx = np.clip(idx, 0, len(traj) - 1)
    if not np.allclose(traj.times[idx], times, rtol=0, atol=1e-9):
        raise IncompatibleGridsError("requested times are not on the trajectory grid")
    return Trajectory(
        traj.times[idx], traj.states[idx], traj.inputs[idx], traj.outputs[idx],
        traj.hamiltonian[idx], dict(traj.diagnostics),
    )
