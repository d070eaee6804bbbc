"""GP prior on the Hamiltonian pushed through the PFEM discretization.

The Hamiltonian prior has a quadratic mean
``m(a) = 1/2 int m_q a_q^2 + m_p a_p^2`` and a squared-exponential kernel whose
squared distance is ``int lam_q (a_q - a_q')^2 + lam_p (a_p - a_p')^2``.
On P1 states both reduce to quadratic forms with weighted mass matrices:
``M_m = blockdiag(M_{m,q}, M_{m,p})`` for the mean and
``B = blockdiag(M_{k,q}, M_{k,p})`` for the kernel.

Co-energies are ``e = M^-1 grad h`` and dynamics ``f = M^-1 (J - R) e + M^-1 G u``;
both are linear maps of the scalar GP ``h``, so their covariances follow from
``grad grad' k = k [B - w w^T]`` with ``w = B (a - a')``.
"""

from __future__ import annotations

from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg

from .hyper import HyperBasis, HyperParams, weighted_mass_tensor
from .wave import PhSystem


@lru_cache(maxsize=16)
def hyper_tables(sys: PhSystem, basis: HyperBasis):
    """Hyper-basis values at the quadrature points and unmasked W tensors."""
    tab_q, tab_p = sys.tab_q, sys.tab_p
    psi_q = basis.evaluate(tab_q.x)
    psi_p = basis.evaluate(tab_p.x)
    W_q = weighted_mass_tensor(sys.space_q, basis, sys.quad)
    W_p = weighted_mass_tensor(sys.space_p, basis, sys.quad)
    return psi_q, psi_p, W_q, W_p


class PriorContext:
    """Prior on the state derivative for one hyperparameter setting.

    ``variant="display"`` swaps the co-energy covariance for the alternative
    form ``k M_k (I - d d^T) M_k^T`` with ``M_k = M^-1 B``; the default
    ``"exact"`` form is the true covariance of ``M^-1 grad h``.
    """

    def __init__(self, sys: PhSystem, hp: HyperParams, variant: str = "exact"):
        if variant not in ("exact", "display"):
            raise ValueError(f"unknown covariance variant {variant!r}")
        self.sys = sys
        self.hp = hp
        self.variant = variant
        basis = hp.basis
        if not np.isclose(basis.length, sys.space_q.mesh.length):
            raise ValueError("hyper-basis and mesh lengths differ")
        psi_q, psi_p, W_q, W_p = hyper_tables(sys, basis)
        self.W_q, self.W_p = W_q, W_p

        # lam fields are clamped at zero; unclamped region as a point mask
        lam_q_pts = np.tensordot(hp.lam_q.coeffs, psi_q, axes=1)
        lam_p_pts = np.tensordot(hp.lam_p.coeffs, psi_p, axes=1)
        self.mask_q = lam_q_pts >= 0.0
        self.mask_p = lam_p_pts >= 0.0
        self.Wk_q = W_q if self.mask_q.all() else sys.tab_q.mass(psi_q * self.mask_q)
        self.Wk_p = W_p if self.mask_p.all() else sys.tab_p.mass(psi_p * self.mask_p)

        self.M_mq = np.tensordot(hp.m_q.coeffs, W_q, axes=1)
        self.M_mp = np.tensordot(hp.m_p.coeffs, W_p, axes=1)
        self.M_kq = np.tensordot(hp.lam_q.coeffs, self.Wk_q, axes=1)
        self.M_kp = np.tensordot(hp.lam_p.coeffs, self.Wk_p, axes=1)
        self.M_m = linalg.block_diag(self.M_mq, self.M_mp)
        self.B = linalg.block_diag(self.M_kq, self.M_kp)

        self.M_inv = sys.M_inv
        self.A = self.M_inv @ sys.JmR
        self.C = self.A @ self.M_inv
        self.Minv_G = self.M_inv @ sys.G
        self.sigma_f2 = hp.sigma_f**2

    @property
    def size(self) -> int:
        return self.sys.size

    @cached_property
    def CB(self) -> np.ndarray:
        return self.C @ self.B

    @cached_property
    def P(self) -> np.ndarray:
        """``C B C^T``, the amplitude-free part of the dynamics covariance."""
        if self.variant == "display":
            Mk = self.M_inv @ self.B
            return self.A @ Mk @ Mk.T @ self.A.T
        return self.CB @ self.C.T

    @cached_property
    def E(self) -> np.ndarray:
        """``M^-1 B M^-1``, the amplitude-free part of the co-energy covariance."""
        if self.variant == "display":
            Mk = self.M_inv @ self.B
            return Mk @ Mk.T
        return self.M_inv @ self.B @ self.M_inv

    def sq_distance(self, a, b) -> float:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return float(d @ self.B @ d)

    def kernel_scalar(self, a, b) -> float:
        return self.sigma_f2 * float(np.exp(-0.5 * self.sq_distance(a, b)))

    def mean_hamiltonian(self, a) -> float:
        a = np.asarray(a, dtype=float)
        return 0.5 * float(a @ self.M_m @ a)

    def mean_coenergy(self, a) -> np.ndarray:
        return self.M_inv @ (self.M_m @ np.asarray(a, dtype=float))

    def cov_coenergy(self, a, b) -> np.ndarray:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        k = self.sigma_f2 * np.exp(-0.5 * d @ self.B @ d)
        g = self.M_inv @ (self.B @ d)
        return k * (self.E - np.outer(g, g))

    def prior_mean_dynamics(self, a, u) -> np.ndarray:
        return self.C @ (self.M_m @ np.asarray(a, dtype=float)) + self.Minv_G @ np.asarray(u, dtype=float)

    def prior_cov_dynamics(self, a, b) -> np.ndarray:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        k = self.sigma_f2 * np.exp(-0.5 * d @ self.B @ d)
        g = self.CB @ d
        return k * (self.P - np.outer(g, g))

    def output_mean(self, a) -> np.ndarray:
        return self.sys.G.T @ self.mean_coenergy(a)


def gram_blocks(ctx: PriorContext, states: np.ndarray, others: np.ndarray | None = None):
    """Blocked dynamics covariance between two state sets.

    Returns ``(K4, kmat, dv, diff)`` with ``K4[i, :, j, :]`` the
    ``prior_cov_dynamics`` block, ``kmat`` the scalar kernel values,
    ``dv[i, j] = C B (a_i - b_j)`` and ``diff[i, j] = a_i - b_j``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    others = states if others is None else np.atleast_2d(np.asarray(others, dtype=float))
    diff = states[:, None, :] - others[None, :, :]
    bd = diff @ ctx.B
    sq = np.einsum("ija,ija->ij", bd, diff)
    kmat = ctx.sigma_f2 * np.exp(-0.5 * sq)
    dv = bd @ ctx.C.T
    K4 = kmat[:, None, :, None] * ctx.P[None, :, None, :]
    K4 -= np.einsum("ij,ija,ijb->iajb", kmat, dv, dv, optimize=True)
    return K4, kmat, dv, diff
