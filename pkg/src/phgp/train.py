"""Training data, marginal likelihood, hyperparameter fitting and the posterior."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize as sopt
from scipy.linalg import lapack

from .hyper import HyperBasis, HyperParams, pack, param_names, unpack
from .prior import PriorContext, gram_blocks
from .wave import PhSystem, rhs_true

log = logging.getLogger(__name__)

MAX_RESTARTS = 20
LOG_SIGMA_BOUNDS = (-12.0, 6.0)
JITTER = 1e-10


class FactorizationError(linalg.LinAlgError):
    pass


class OptimizationError(RuntimeError):
    pass


class TrajectoryTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingSet:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        n, d = np.shape(self.states)
        if np.shape(self.derivs) != (n, d) or np.shape(self.inputs) != (n, 2) or np.shape(self.times) != (n,):
            raise ValueError("inconsistent training-set shapes")

    @property
    def count(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def n_obs(self) -> int:
        return self.states.size

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.times[idx], self.states[idx], self.inputs[idx], self.derivs[idx])

    @classmethod
    def empty(cls, dim: int) -> "TrainingSet":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, 2)), np.zeros((0, dim)))


def _hermite(t, t0, t1, y0, y1, f0, f1):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def extract_snapshots(
    traj, count: int, t_final: float, sys: PhSystem, input_fn, noise_std: float = 0.0, seed: int | None = None
) -> TrainingSet:
    """Sample ``count`` states at ``t_i = i t_final / count`` with exact derivatives.

    States between recorded times use cubic Hermite interpolation with the
    true vector field as slope data. Derivatives are ``rhs_true`` at the
    sampled state, plus optional Gaussian noise.
    """
    if count < 1:
        raise ValueError("snapshot count must be >= 1")
    times = np.arange(count) * (t_final / count)
    tt = np.asarray(traj.times)
    if tt[0] > times[0] + 1e-12 or tt[-1] < times[-1] - 1e-12 or tt[-1] < t_final - 1e-9:
        raise TrajectoryTooShortError("trajectory does not cover the sampling window")
    states = np.empty((count, sys.size))
    inputs = np.empty((count, 2))
    for i, t in enumerate(times):
        k = int(np.clip(np.searchsorted(tt, t, side="right") - 1, 0, len(tt) - 2))
        t0, t1 = tt[k], tt[k + 1]
        y0, y1 = traj.states[k], traj.states[k + 1]
        if t == t0:
            states[i] = y0
        else:
            f0 = rhs_true(sys, y0, input_fn(t0))
            f1 = rhs_true(sys, y1, input_fn(t1))
            states[i] = _hermite(t, t0, t1, y0, y1, f0, f1)
        inputs[i] = input_fn(t)
    derivs = np.stack([rhs_true(sys, a, u) for a, u in zip(states, inputs)])
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        derivs = derivs + noise_std * rng.standard_normal(derivs.shape)
    return TrainingSet(times, states, inputs, derivs)


def gram(ctx: PriorContext, training: TrainingSet) -> np.ndarray:
    n = training.n_obs
    K4 = gram_blocks(ctx, training.states)[0]
    return K4.reshape(n, n)


def residuals(ctx: PriorContext, training: TrainingSet) -> np.ndarray:
    mean = training.states @ (ctx.C @ ctx.M_m).T + training.inputs @ ctx.Minv_G.T
    return (training.derivs - mean).ravel()


def _cholesky(Kn: np.ndarray):
    try:
        return linalg.cho_factor(Kn, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    jitter = JITTER * np.mean(np.diag(Kn))
    log.debug("cholesky failed, retrying with jitter %.3g", jitter)
    try:
        return linalg.cho_factor(Kn + jitter * np.eye(len(Kn)), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationError("covariance not positive definite after jitter") from exc


def _inverse_from_cholesky(cf) -> np.ndarray:
    c, lower = cf
    inv, info = lapack.dpotri(c, lower=int(lower))
    if info != 0:
        raise FactorizationError(f"potri failed with info={info}")
    tri = np.tril(inv) if lower else np.triu(inv)
    return tri + tri.T - np.diag(np.diag(tri))


def nlml(ctx: PriorContext, training: TrainingSet) -> float:
    return nlml_and_grad(ctx, training, with_grad=False)[0]


def nlml_grad(ctx: PriorContext, training: TrainingSet) -> np.ndarray:
    return nlml_and_grad(ctx, training)[1]


def nlml_and_grad(ctx: PriorContext, training: TrainingSet, with_grad: bool = True):
    """Negative log marginal likelihood and its gradient w.r.t. ``pack(hp)``.

    Kernel-parameter derivatives are contracted through a single matrix
    ``Omega`` with ``dNLML = <Omega, dB>``, so each field coefficient costs
    one Frobenius product with its W tensor.
    """
    N, d = training.states.shape
    n = N * d
    r = residuals(ctx, training)
    K4, kmat, dv, diff = gram_blocks(ctx, training.states)
    K = K4.reshape(n, n)
    Kn = K + ctx.hp.sigma_n**2 * np.eye(n)
    cf = _cholesky(Kn)
    beta = linalg.cho_solve(cf, r, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    value = 0.5 * r @ beta + 0.5 * logdet + 0.5 * n * np.log(2 * np.pi)
    if not with_grad:
        return value, None

    Kinv = _inverse_from_cholesky(cf)
    S = Kinv - np.outer(beta, beta)
    S4 = S.reshape(N, d, N, d)
    C = ctx.C
    s_pair = np.einsum("iajb,iajb->ij", S4, K4)
    # Z[i, :, j, :] = C^T S_ij C
    Z4 = np.matmul(C.T[None], (S.reshape(n, N, d) @ C).reshape(N, d, n)).reshape(N, d, N, d)
    Y = np.einsum("ij,ipjq->pq", kmat, Z4)
    if ctx.variant == "display":
        # P = C B B C^T, so dP contracts with Y B + B Y
        Y = Y @ ctx.B + ctx.B @ Y
    rows = s_pair.sum(axis=1)
    X = training.states
    Gamma = 2.0 * (X.T @ (rows[:, None] * X) - X.T @ s_pair @ X)
    w = diff @ ctx.B
    Zw = np.einsum("ipjq,ijq->ijp", Z4, w)
    Xi = np.einsum("ij,ijp,ijq->pq", kmat, Zw, diff)
    Omega = 0.5 * (-0.5 * Gamma + Y - (Xi + Xi.T))

    nq = ctx.sys.n_q
    g_lam_q = np.einsum("rij,ij->r", ctx.Wk_q, Omega[:nq, :nq])
    g_lam_p = np.einsum("rij,ij->r", ctx.Wk_p, Omega[nq:, nq:])

    # mean fields: dNLML = -(d mu)^T beta
    cb = beta.reshape(N, d) @ C
    g_m_q = -np.einsum("rij,ij->r", ctx.W_q, cb[:, :nq].T @ X[:, :nq])
    g_m_p = -np.einsum("rij,ij->r", ctx.W_p, cb[:, nq:].T @ X[:, nq:])

    g_sf = s_pair.sum()
    g_sn = ctx.hp.sigma_n**2 * np.trace(S)
    grad = np.concatenate([g_m_q, g_m_p, g_lam_q, g_lam_p, [g_sf, g_sn]])
    return value, grad


@dataclass
class OptimizeOptions:
    max_iter: int = 500
    gtol: float = 1e-6
    starts: int = 1
    seed: int = 0
    frozen: tuple = ()
    log_sigma_bounds: tuple = LOG_SIGMA_BOUNDS
    variant: str = "exact"


@dataclass
class OptimizeResult:
    hp: HyperParams
    nlml: float
    history: list = field(default_factory=list)
    iterations: int = 0
    message: str = ""
    start: int = 0


def bounds_for(basis: HyperBasis, theta0: np.ndarray, opts: OptimizeOptions):
    d = basis.dimension
    lam_lo = 0.0 if basis.nonnegative_coeffs_imply_nonnegative else None
    bounds = [(None, None)] * (2 * d) + [(lam_lo, None)] * (2 * d) + [opts.log_sigma_bounds] * 2
    names = param_names(basis)
    for key in opts.frozen:
        sel = [i for i, nm in enumerate(names) if nm == key or nm.split("[")[0] == key]
        if not sel:
            raise ValueError(f"unknown parameter {key!r}")
        for i in sel:
            bounds[i] = (theta0[i], theta0[i])
    return bounds


def _project(theta, bounds):
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    return np.clip(theta, lo, hi)


def optimize(
    sys: PhSystem, training: TrainingSet, init: HyperParams, opts: OptimizeOptions | None = None
) -> OptimizeResult:
    """Minimize the NLML with L-BFGS-B from one or more starting points.

    The best point evaluated so far is tracked, and that is what a start
    returns. A line-search failure that still made progress restarts
    L-BFGS-B from there; such failures come from the cliff where a clamped
    length-scale field removes prior variance.
    """
    opts = opts or OptimizeOptions()
    basis = init.basis
    theta0 = pack(init)
    bounds = bounds_for(basis, theta0, opts)

    cache = {}
    seen = {"f": np.inf, "x": None}

    def objective(theta):
        key = np.asarray(theta, dtype=float).tobytes()
        if key in cache:
            return cache[key]
        if len(cache) > 8:
            cache.clear()
        cache[key] = out = _evaluate(theta)
        if out[0] < seen["f"]:
            seen["f"], seen["x"] = out[0], np.array(theta, dtype=float)
        return out

    def _evaluate(theta):
        try:
            ctx = PriorContext(sys, unpack(theta, basis), opts.variant)
            f, g = nlml_and_grad(ctx, training)
        except (FactorizationError, FloatingPointError, ValueError):
            return np.inf, np.zeros_like(theta)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(theta)
        return f, g

    if opts.max_iter <= 0:
        f0, _ = objective(theta0)
        return OptimizeResult(init, float(f0), [float(f0)], 0, "zero iteration budget")

    rng = np.random.default_rng(opts.seed)
    fixed = np.array([b[0] is not None and b[0] == b[1] for b in bounds])
    best = None
    failures = []
    for start in range(max(1, opts.starts)):
        if start == 0:
            x0 = theta0.copy()
        else:
            x0 = theta0 * (1.0 + rng.uniform(-0.5, 0.5, theta0.shape))
            x0[fixed] = theta0[fixed]
            x0 = _project(x0, bounds)
        history = []
        seen["f"], seen["x"] = np.inf, None
        f_start = objective(x0)[0]
        history.append(float(f_start))
        if not np.isfinite(f_start):
            failures.append(f"start {start}: non-finite NLML at initial point")
            continue
        x, f_prev, nit = x0, f_start, 0
        for _ in range(MAX_RESTARTS + 1):
            res = sopt.minimize(
                objective,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                callback=lambda xk: history.append(float(objective(xk)[0])),
                options={"maxiter": opts.max_iter - nit, "gtol": opts.gtol, "maxfun": 4 * opts.max_iter + 20},
            )
            nit += max(int(res.nit), 1)
            progressed = seen["f"] < f_prev - 1e-12 * abs(f_prev)
            if res.success or nit >= opts.max_iter or not progressed:
                break
            log.info("start %d: restarting after %s at nlml %.6g", start, res.message, seen["f"])
            x, f_prev = seen["x"], seen["f"]
        log.info("start %d: nlml %.6g after %d iterations (%s)", start, seen["f"], nit, res.message)
        cand = OptimizeResult(unpack(seen["x"], basis), float(seen["f"]), history, min(nit, opts.max_iter), str(res.message), start)
        if best is None or cand.nlml < best.nlml:
            best = cand
    if best is None:
        raise OptimizationError("all optimizer starts failed: " + "; ".join(failures))
    return best


class PosteriorModel:
    """Dynamics GP conditioned on a training set."""

    def __init__(self, ctx: PriorContext, training: TrainingSet):
        self.ctx = ctx
        self.hp = ctx.hp
        self.training = training
        N, d = training.states.shape
        n = N * d
        if N == 0:
            self.chol = None
            self.weights = np.zeros((0, d))
            self.Kn = np.zeros((0, 0))
        else:
            K = gram(ctx, training)
            self.Kn = K + self.hp.sigma_n**2 * np.eye(n)
            self.chol = _cholesky(self.Kn)
            self.weights = linalg.cho_solve(self.chol, residuals(ctx, training)).reshape(N, d)
        X = training.states
        self._v = X @ ctx.CB.T
        self._Pw = self.weights @ ctx.P.T
        self._Ew = self.weights @ (ctx.E @ ctx.A.T).T

    def _pair_terms(self, a):
        a = np.asarray(a, dtype=float)
        diff = a[None, :] - self.training.states
        k = self.ctx.sigma_f2 * np.exp(-0.5 * np.einsum("ja,ab,jb->j", diff, self.ctx.B, diff))
        dv = a @ self.ctx.CB.T - self._v
        proj = np.einsum("ja,ja->j", dv, self.weights)
        return k, diff, dv, proj

    def mean(self, a, u) -> np.ndarray:
        """Posterior mean of the state derivative."""
        out = self.ctx.prior_mean_dynamics(a, u)
        if self.training.count == 0:
            return out
        k, _, dv, proj = self._pair_terms(a)
        return out + k @ self._Pw - (k * proj) @ dv

    def coenergy(self, a) -> np.ndarray:
        out = self.ctx.mean_coenergy(a)
        if self.training.count == 0:
            return out
        k, diff, _, proj = self._pair_terms(a)
        g = diff @ (self.ctx.M_inv @ self.ctx.B).T
        return out + k @ self._Ew - (k * proj) @ g

    def hamiltonian(self, a) -> float:
        """Posterior mean of the discrete Hamiltonian (zero at the origin in the prior)."""
        out = self.ctx.mean_hamiltonian(a)
        if self.training.count == 0:
            return out
        k, _, _, proj = self._pair_terms(a)
        return float(out + k @ proj)

    def outputs(self, a) -> np.ndarray:
        return self.ctx.sys.G.T @ self.coenergy(a)

    def cross_cov(self, a) -> np.ndarray:
        """Covariance between f(a) and the training observations, ``d x n``."""
        K4 = gram_blocks(self.ctx, np.atleast_2d(a), self.training.states)[0]
        return K4.reshape(self.ctx.size, -1)

    def cov(self, a) -> np.ndarray:
        prior = self.ctx.prior_cov_dynamics(a, a)
        if self.training.count == 0:
            return prior
        Ks = self.cross_cov(a)
        V = linalg.cho_solve(self.chol, Ks.T)
        out = prior - Ks @ V
        return 0.5 * (out + out.T)


def build_posterior(sys: PhSystem, hp: HyperParams, training: TrainingSet, variant: str = "exact") -> PosteriorModel:
    return PosteriorModel(PriorContext(sys, hp, variant), training)


def posterior_mean(model: PosteriorModel, a, u) -> np.ndarray:
    return model.mean(a, u)


def posterior_cov(model: PosteriorModel, a) -> np.ndarray:
    return model.cov(a)
