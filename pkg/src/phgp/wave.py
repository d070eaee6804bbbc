"""Nonlinear vibrating string in PFEM port-Hamiltonian form.

State vectors are flat arrays ``[alpha_q, alpha_p]`` (strain then momentum
coefficients); inputs are pairs ``(u_L, u_R)`` of boundary stresses.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg

from .fem import (
    FemSpace,
    MeshMismatchError,
    QuadratureRule,
    assemble_derivative,
    boundary_vectors,
)

Func = Callable[[np.ndarray], np.ndarray]


def _zero(a):
    return np.zeros_like(np.asarray(a, dtype=float))


def gauss_exp(a):
    return np.exp(-np.square(a))


def gauss_exp_prime(a):
    return -2.0 * a * np.exp(-np.square(a))


def gauss_exp_energy(a):
    # int_0^a exp(-u^2) u du
    return 0.5 * -np.expm1(-np.square(a))


@dataclass(frozen=True)
class MaterialLaw:
    """Constitutive data: stress ``s(x, a) a`` with ``s = T(x) + c(x) f(a)``.

    ``F(a) = int_0^a f(u) u du`` and ``df = f'`` must match ``f``.
    """

    T: Func
    c: Func
    rho: Func
    nu: Func = _zero
    f: Func = _zero
    F: Func = _zero
    df: Func = _zero
    linear: bool = False

    def stiffness(self, x, a):
        return self.T(x) + self.c(x) * self.f(a)

    def tangent(self, x, a):
        # d/da [s(x, a) a]
        return self.T(x) + self.c(x) * (self.f(a) + self.df(a) * a)


def make_law(T: Func, c: Func, rho: Func, nu: Func | None = None, nonlinearity: str = "gauss-exp"):
    nu = nu if nu is not None else _zero
    if nonlinearity == "gauss-exp":
        return MaterialLaw(T, c, rho, nu, gauss_exp, gauss_exp_energy, gauss_exp_prime)
    if nonlinearity == "none":
        return MaterialLaw(T, _zero, rho, nu, linear=True)
    raise ValueError(f"unknown nonlinearity {nonlinearity!r}")


def experiment_law(linear: bool = False) -> MaterialLaw:
    """Tension, modulator and density of the reference string on [0, 1]."""
    T = lambda x: 2.0 - 4.0 * x * (1.0 - x)
    c = lambda x: 2.0 * x * (x - 1.0) ** 2
    rho = lambda x: 3.0 - 2.5 * x**2
    return make_law(T, c, rho, nonlinearity="none" if linear else "gauss-exp")


@dataclass(frozen=True, eq=False)
class PhSystem:
    space_q: FemSpace
    space_p: FemSpace
    law: MaterialLaw
    quad: QuadratureRule
    M_q: np.ndarray
    M_p: np.ndarray
    D: np.ndarray
    R22: np.ndarray
    B_L: np.ndarray
    B_R: np.ndarray

    @property
    def n_q(self) -> int:
        return self.space_q.dof_count

    @property
    def n_p(self) -> int:
        return self.space_p.dof_count

    @property
    def size(self) -> int:
        return self.n_q + self.n_p

    @cached_property
    def M(self) -> np.ndarray:
        return linalg.block_diag(self.M_q, self.M_p)

    @cached_property
    def JmR(self) -> np.ndarray:
        z = np.zeros((self.n_q, self.n_q))
        return np.block([[z, self.D], [-self.D.T, -self.R22]])

    @cached_property
    def G(self) -> np.ndarray:
        g = np.zeros((self.size, 2))
        g[self.n_q :, 0] = self.B_L
        g[self.n_q :, 1] = self.B_R
        return g

    @cached_property
    def tab_q(self):
        return self.space_q.tables(self.quad)

    @cached_property
    def tab_p(self):
        return self.space_p.tables(self.quad)

    @cached_property
    def chol_q(self):
        return linalg.cho_factor(self.M_q)

    @cached_property
    def chol_p(self):
        return linalg.cho_factor(self.M_p)

    @cached_property
    def Mq_inv(self) -> np.ndarray:
        return linalg.cho_solve(self.chol_q, np.eye(self.n_q))

    @cached_property
    def Mp_inv(self) -> np.ndarray:
        return linalg.cho_solve(self.chol_p, np.eye(self.n_p))

    @cached_property
    def M_inv(self) -> np.ndarray:
        return linalg.block_diag(self.Mq_inv, self.Mp_inv)

    @cached_property
    def e_p_map(self) -> np.ndarray:
        """``M_p^-1 M_rho``: momentum coefficients to velocity coefficients."""
        return self.Mp_inv @ self.M_rho

    @cached_property
    def _T_at_q(self):
        return np.broadcast_to(self.law.T(self.tab_q.x), self.tab_q.shape)

    @cached_property
    def _c_at_q(self):
        return np.broadcast_to(self.law.c(self.tab_q.x), self.tab_q.shape)

    @cached_property
    def _inv_rho_at_p(self):
        return 1.0 / np.broadcast_to(self.law.rho(self.tab_p.x), self.tab_p.shape)

    @cached_property
    def M_rho(self) -> np.ndarray:
        """Mass matrix weighted by 1 / rho."""
        return self.tab_p.mass(self._inv_rho_at_p)

    def split(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return alpha[: self.n_q], alpha[self.n_q :]

    def solve_M(self, v):
        vq, vp = self.split(v)
        return np.concatenate([self.Mq_inv @ vq, self.Mp_inv @ vp])

    def M_s(self, alpha_q) -> np.ndarray:
        """Secant stiffness matrix ``int s(x, alpha_q^h) phi_j phi_i``."""
        a = self.tab_q.interpolate(alpha_q)
        if self.law.linear:
            return self.tab_q.mass(self._T_at_q)
        return self.tab_q.mass(self._T_at_q + self._c_at_q * self.law.f(a))

    def tangent_stiffness(self, alpha_q) -> np.ndarray:
        a = self.tab_q.interpolate(alpha_q)
        if self.law.linear:
            return self.tab_q.mass(self._T_at_q)
        return self.tab_q.mass(self._T_at_q + self._c_at_q * (self.law.f(a) + self.law.df(a) * a))


def assemble_system(
    space_q: FemSpace, space_p: FemSpace, law: MaterialLaw, quad: QuadratureRule | None = None
) -> PhSystem:
    quad = quad or QuadratureRule(5)
    if not space_q.mesh.same_as(space_p.mesh):
        raise MeshMismatchError("strain and momentum spaces must share a mesh")
    tab_q = space_q.tables(quad)
    tab_p = space_p.tables(quad)
    M_q = tab_q.mass(np.ones(tab_q.shape))
    M_p = tab_p.mass(np.ones(tab_p.shape))
    R22 = tab_p.mass(np.broadcast_to(law.nu(tab_p.x), tab_p.shape))
    D = assemble_derivative(space_q, space_p, quad)
    B_L, B_R = boundary_vectors(space_p)
    rho = np.asarray(law.rho(tab_p.x))
    if np.any(rho <= 0):
        raise ValueError("density must be positive on the domain")
    sys = PhSystem(space_q, space_p, law, quad, M_q, M_p, D, R22, B_L, B_R)
    try:
        sys.chol_q, sys.chol_p
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError("singular mass matrix") from exc
    return sys


def coenergy(sys: PhSystem, alpha) -> np.ndarray:
    """Co-energy coefficients from ``M_q e_q = M_s alpha_q`` and ``M_p e_p = M_rho alpha_p``."""
    aq, ap = sys.split(alpha)
    return np.concatenate([sys.Mq_inv @ (sys.M_s(aq) @ aq), sys.e_p_map @ ap])


def energy_gradient(sys: PhSystem, alpha) -> np.ndarray:
    aq, ap = sys.split(alpha)
    return np.concatenate([sys.M_s(aq) @ aq, sys.M_rho @ ap])


def hamiltonian_discrete(sys: PhSystem, alpha) -> float:
    """Quadrature of the energy density on the P1 interpolants of ``alpha``."""
    aq, ap = sys.split(alpha)
    a = sys.tab_q.interpolate(aq)
    p = sys.tab_p.interpolate(ap)
    dens_q = 0.5 * sys._T_at_q * a * a
    if not sys.law.linear:
        dens_q = dens_q + sys._c_at_q * sys.law.F(a)
    return sys.tab_q.integrate(dens_q) + sys.tab_p.integrate(0.5 * sys._inv_rho_at_p * p * p)


def rhs_true(sys: PhSystem, alpha, u) -> np.ndarray:
    e = coenergy(sys, alpha)
    return sys.solve_M(sys.JmR @ e + sys.G @ np.asarray(u, dtype=float))


def outputs(sys: PhSystem, e) -> np.ndarray:
    _, ep = sys.split(e)
    return np.array([sys.B_L @ ep, sys.B_R @ ep])


def supplied_power(sys: PhSystem, e, u) -> float:
    """Dissipation plus boundary power, ``-e_p' R22 e_p + u . y``."""
    _, ep = sys.split(e)
    return float(-ep @ sys.R22 @ ep + np.dot(u, outputs(sys, e)))


def power_balance_residual(sys: PhSystem, alpha0, alpha1, u0, u1, dt: float) -> float:
    """Energy-balance defect of one step, with the supplied power taken at the midpoint."""
    mid = 0.5 * (np.asarray(alpha0) + np.asarray(alpha1))
    u_mid = 0.5 * (np.asarray(u0, dtype=float) + np.asarray(u1, dtype=float))
    dH = hamiltonian_discrete(sys, alpha1) - hamiltonian_discrete(sys, alpha0)
    return abs(dH - dt * supplied_power(sys, coenergy(sys, mid), u_mid))
