"""Functional hyperparameters: bases, fields, packing and weighted-mass tensors."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fem import FemSpace, QuadratureRule

FIELD_NAMES = ("m_q", "m_p", "lam_q", "lam_p")


@dataclass(frozen=True)
class HyperBasis:
    """Basis for a scalar field on [0, length].

    ``kind`` is ``"p1"`` (hat functions on a uniform ``size``-node mesh) or
    ``"legendre"`` (shifted Legendre polynomials of degree < ``size``).
    """

    kind: str
    size: int
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in ("p1", "legendre"):
            raise ValueError(f"unknown hyper-basis kind {self.kind!r}")
        if self.kind == "p1" and self.size < 2:
            raise ValueError("a P1 hyper-basis needs at least 2 nodes")
        if self.size < 1:
            raise ValueError("hyper-basis dimension must be >= 1")

    @classmethod
    def p1(cls, node_count: int, length: float = 1.0) -> "HyperBasis":
        return cls("p1", int(node_count), length)

    @classmethod
    def legendre(cls, degree: int, length: float = 1.0) -> "HyperBasis":
        return cls("legendre", int(degree) + 1, length)

    @classmethod
    def parse(cls, text: str, length: float = 1.0) -> "HyperBasis":
        """Parse ``p1:11`` or ``legendre:3``."""
        kind, _, num = text.partition(":")
        if kind == "p1":
            return cls.p1(int(num), length)
        if kind == "legendre":
            return cls.legendre(int(num), length)
        raise ValueError(f"bad basis spec {text!r}")

    @property
    def dimension(self) -> int:
        return self.size

    @property
    def nonnegative_coeffs_imply_nonnegative(self) -> bool:
        return self.kind == "p1"

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.size)

    def to_dict(self) -> dict:
        if self.kind == "p1":
            return {"kind": "p1", "node_count": self.size, "length": self.length}
        return {"kind": "legendre", "degree": self.size - 1, "length": self.length}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperBasis":
        length = float(d.get("length", 1.0))
        if d["kind"] == "p1":
            return cls.p1(d["node_count"], length)
        if d["kind"] == "legendre":
            return cls.legendre(d["degree"], length)
        raise ValueError(f"unknown hyper-basis kind {d['kind']!r}")

    def __str__(self):
        return f"p1:{self.size}" if self.kind == "p1" else f"legendre:{self.size - 1}"

    def evaluate(self, x) -> np.ndarray:
        """Basis values, shape ``(dimension,) + x.shape``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "p1":
            nodes = self.nodes
            flat = x.ravel()
            out = np.empty((self.size, flat.size))
            for r in range(self.size):
                e = np.zeros(self.size)
                e[r] = 1.0
                out[r] = np.interp(flat, nodes, e)
            return out.reshape((self.size,) + x.shape)
        t = 2.0 * x.ravel() / self.length - 1.0
        v = np.polynomial.legendre.legvander(t, self.size - 1)
        return v.T.reshape((self.size,) + x.shape)


@dataclass(frozen=True, eq=False)
class HyperField:
    basis: HyperBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.dimension,):
            raise ValueError(f"expected {self.basis.dimension} coefficients, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("hyper-field coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return np.tensordot(self.coeffs, self.basis.evaluate(x), axes=1)

    @classmethod
    def constant(cls, basis: HyperBasis, value: float) -> "HyperField":
        return cls(basis, project_constant(basis, value))


def project_constant(basis: HyperBasis, value: float) -> np.ndarray:
    if basis.kind == "p1":
        return np.full(basis.size, float(value))
    out = np.zeros(basis.size)
    out[0] = value
    return out


@dataclass(frozen=True)
class HyperParams:
    """Mean fields, inverse squared lengthscale fields and the two scales.

    The scales are held as logarithms so that packing round-trips exactly.
    """

    m_q: HyperField
    m_p: HyperField
    lam_q: HyperField
    lam_p: HyperField
    log_sigma_f: float = 0.0
    log_sigma_n: float = float(np.log(1e-2))

    def __post_init__(self):
        if not (np.isfinite(self.log_sigma_f) and np.isfinite(self.log_sigma_n)):
            raise ValueError("sigma_f and sigma_n must be positive and finite")
        bases = {self.m_q.basis, self.m_p.basis, self.lam_q.basis, self.lam_p.basis}
        if len(bases) != 1:
            raise ValueError("all hyper-fields must share one basis")

    @property
    def sigma_f(self) -> float:
        return float(np.exp(self.log_sigma_f))

    @property
    def sigma_n(self) -> float:
        return float(np.exp(self.log_sigma_n))

    @property
    def basis(self) -> HyperBasis:
        return self.m_q.basis

    @classmethod
    def initial(cls, basis: HyperBasis, m=1.0, lam=1.0, sigma_f=1.0, sigma_n=1e-2) -> "HyperParams":
        if not (sigma_f > 0 and sigma_n > 0):
            raise ValueError("sigma_f and sigma_n must be positive")
        c = lambda v: HyperField.constant(basis, v)
        return cls(c(m), c(m), c(lam), c(lam), float(np.log(sigma_f)), float(np.log(sigma_n)))

    def fields(self) -> dict:
        return {name: getattr(self, name) for name in FIELD_NAMES}

    def replace(self, **changes) -> "HyperParams":
        """Copy with some fields (given as coefficient arrays) or scales changed."""
        out = {}
        for k, v in changes.items():
            if k in FIELD_NAMES:
                out[k] = v if isinstance(v, HyperField) else HyperField(self.basis, v)
            elif k in ("sigma_f", "sigma_n"):
                if not v > 0:
                    raise ValueError(f"{k} must be positive")
                out["log_" + k] = float(np.log(v))
            else:
                out[k] = v
        return replace(self, **out)

    def __eq__(self, other):
        if not isinstance(other, HyperParams):
            return NotImplemented
        return (
            self.basis == other.basis
            and all(np.array_equal(getattr(self, n).coeffs, getattr(other, n).coeffs) for n in FIELD_NAMES)
            and self.log_sigma_f == other.log_sigma_f
            and self.log_sigma_n == other.log_sigma_n
        )

    __hash__ = None


def param_count(hp: HyperParams) -> int:
    return 4 * hp.basis.dimension + 2


def param_names(basis: HyperBasis) -> list[str]:
    names = [f"{f}[{r}]" for f in FIELD_NAMES for r in range(basis.dimension)]
    return names + ["log_sigma_f", "log_sigma_n"]


def pack(hp: HyperParams) -> np.ndarray:
    """Flat vector ``[m_q, m_p, lam_q, lam_p, log sigma_f, log sigma_n]``."""
    parts = [getattr(hp, n).coeffs for n in FIELD_NAMES]
    return np.concatenate(parts + [np.array([hp.log_sigma_f, hp.log_sigma_n])])


def unpack(theta, basis: HyperBasis) -> HyperParams:
    theta = np.asarray(theta, dtype=float)
    d = basis.dimension
    if theta.shape != (4 * d + 2,):
        raise ValueError(f"expected a flat vector of length {4 * d + 2}, got shape {theta.shape}")
    fields = [HyperField(basis, theta[k * d : (k + 1) * d]) for k in range(4)]
    return HyperParams(*fields, log_sigma_f=float(theta[-2]), log_sigma_n=float(theta[-1]))


def weighted_mass_tensor(
    space: FemSpace, basis: HyperBasis, quad: QuadratureRule, mask: np.ndarray | None = None
) -> np.ndarray:
    """Stack ``W[r] = int psi_r phi_j phi_i`` over the hyper-basis ``psi``.

    ``mask`` (boolean, per quadrature point) restricts the integrals to the
    points where it is true; used for clamped fields.
    """
    tab = space.tables(quad)
    psi = basis.evaluate(tab.x)
    if mask is not None:
        psi = psi * mask[None]
    return tab.mass(psi)


def clamp_mask(field: HyperField, space: FemSpace, quad: QuadratureRule) -> np.ndarray:
    """Quadrature points where the field is nonnegative (the unclamped region)."""
    return field(space.tables(quad).x) >= 0.0
