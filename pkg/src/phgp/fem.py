"""1D meshes, P1 Lagrange spaces, Gauss quadrature and dense matrix assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class MeshMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least 2 nodes")
        if nodes[0] != 0.0:
            raise ValueError("mesh must start at x = 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    @property
    def node_count(self) -> int:
        return self.nodes.size

    @property
    def element_sizes(self) -> np.ndarray:
        return np.diff(self.nodes)

    def same_as(self, other: "Mesh1D") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)


def uniform_mesh(node_count: int, length: float = 1.0) -> Mesh1D:
    if int(node_count) != node_count or node_count < 2:
        raise ValueError(f"node_count must be an integer >= 2, got {node_count}")
    if not length > 0:
        raise ValueError(f"length must be positive, got {length}")
    nodes = np.linspace(0.0, length, int(node_count))
    nodes[-1] = length
    return Mesh1D(nodes)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval [0, 1].

    Exact for polynomials of degree ``2 * order - 1`` on each element.
    """

    order: int = 5
    points: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")
        xi, w = np.polynomial.legendre.leggauss(self.order)
        object.__setattr__(self, "points", 0.5 * (xi + 1.0))
        object.__setattr__(self, "weights", 0.5 * w)


@dataclass(frozen=True, eq=False)
class FemSpace:
    """Continuous piecewise-linear Lagrange space on a 1D mesh."""

    mesh: Mesh1D
    basis_kind: str = "P1"

    def __post_init__(self):
        if self.basis_kind != "P1":
            raise ValueError(f"unsupported basis kind {self.basis_kind!r}")

    @property
    def dof_count(self) -> int:
        return self.mesh.node_count

    @property
    def element_count(self) -> int:
        return self.mesh.node_count - 1

    def tables(self, quad: QuadratureRule) -> "QuadTable":
        return QuadTable(self, quad)


class QuadTable:
    """Quadrature points of a space, with basis values and scaled weights.

    Arrays indexed ``[element, point]``; ``phi[point, a]`` holds the two local
    hat functions on the reference element.
    """

    def __init__(self, space: FemSpace, quad: QuadratureRule):
        self.space = space
        self.quad = quad
        nodes = space.mesh.nodes
        h = space.mesh.element_sizes
        self.x = nodes[:-1, None] + h[:, None] * quad.points[None, :]
        self.jw = h[:, None] * quad.weights[None, :]
        self.phi = np.stack([1.0 - quad.points, quad.points], axis=1)
        self.dphi = np.stack([-1.0 / h, 1.0 / h], axis=1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    def interpolate(self, coeffs: np.ndarray) -> np.ndarray:
        """Values of the P1 field with nodal ``coeffs`` at every quadrature point."""
        coeffs = np.asarray(coeffs, dtype=float)
        return coeffs[:-1, None] * self.phi[None, :, 0] + coeffs[1:, None] * self.phi[None, :, 1]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.jw * values))

    def mass(self, weight_values: np.ndarray) -> np.ndarray:
        """Assemble ``int g phi_j phi_i`` from weight values ``g`` at the points.

        A leading batch axis on ``weight_values`` yields a stack of matrices.
        """
        g = np.asarray(weight_values, dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite weight values at quadrature points")
        gw = g * self.jw
        phi = self.phi
        l00 = gw @ (phi[:, 0] * phi[:, 0])
        l01 = gw @ (phi[:, 0] * phi[:, 1])
        l11 = gw @ (phi[:, 1] * phi[:, 1])
        n = self.space.dof_count
        diag = np.zeros(g.shape[:-2] + (n,))
        diag[..., :-1] += l00
        diag[..., 1:] += l11
        out = np.zeros(g.shape[:-2] + (n * n,))
        out[..., :: n + 1] = diag
        out[..., 1 :: n + 1] = l01
        out[..., n :: n + 1] = l01
        return out.reshape(g.shape[:-2] + (n, n))

    def load(self, values: np.ndarray) -> np.ndarray:
        """Assemble the vector ``int g phi_i``."""
        gw = np.asarray(values, dtype=float) * self.jw
        out = np.zeros(self.space.dof_count)
        out[:-1] += gw @ self.phi[:, 0]
        out[1:] += gw @ self.phi[:, 1]
        return out


def assemble_weighted_mass(
    space: FemSpace, weight: Callable[[np.ndarray], np.ndarray], quad: QuadratureRule
) -> np.ndarray:
    """Dense matrix of ``int weight(x) phi_j(x) phi_i(x) dx``."""
    tab = space.tables(quad)
    values = np.broadcast_to(np.asarray(weight(tab.x), dtype=float), tab.shape)
    return tab.mass(values)


def assemble_mass(space: FemSpace, quad: QuadratureRule) -> np.ndarray:
    return assemble_weighted_mass(space, np.ones_like, quad)


def assemble_derivative(space_q: FemSpace, space_p: FemSpace, quad: QuadratureRule) -> np.ndarray:
    """``D[i, l] = int d/dx phi_p^l(x) phi_q^i(x) dx`` (shape N_q x N_p)."""
    if not space_q.mesh.same_as(space_p.mesh):
        raise MeshMismatchError("strain and momentum spaces must share a mesh")
    tab = space_q.tables(quad)
    # int phi_a over each element, times the constant slope of phi_b
    int_phi = tab.jw @ tab.phi
    local = int_phi[:, :, None] * tab.dphi[:, None, :]
    n = space_q.dof_count
    out = np.zeros((n, n))
    conn = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    for a in range(2):
        for b in range(2):
            np.add.at(out, (conn[:, a], conn[:, b]), local[:, a, b])
    return out


def boundary_vectors(space_p: FemSpace) -> tuple[np.ndarray, np.ndarray]:
    """Traces of the basis at x = 0 and x = length."""
    n = space_p.dof_count
    b_left = np.zeros(n)
    b_right = np.zeros(n)
    b_left[0] = 1.0
    b_right[-1] = 1.0
    return b_left, b_right


def eval_field(space: FemSpace, coeffs: np.ndarray, x):
    """Evaluate the P1 interpolant with nodal values ``coeffs`` at ``x``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dof_count,):
        raise ValueError(f"expected {space.dof_count} coefficients, got shape {coeffs.shape}")
    xa = np.asarray(x, dtype=float)
    nodes = space.mesh.nodes
    if np.any(xa < nodes[0]) or np.any(xa > nodes[-1]):
        raise ValueError("evaluation point outside the mesh domain")
    out = np.interp(xa, nodes, coeffs)
    return float(out) if out.ndim == 0 else out
