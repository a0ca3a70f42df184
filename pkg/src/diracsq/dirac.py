"""Minimal Dirac operators on the half line and their squares.

The operator acts on two-component spinors y as

    (D y)(x) = i * sigma3 * y'(x) + P(x) y(x),
    P(x) = [[0, p(x)], [conj(p(x)), 0]],

with a complex scalar potential p.  Squaring it produces a matrix
Schrodinger operator -y'' + Q y with

    Q(x) = [[|p|^2, i p'], [-i conj(p'), |p|^2]],

which is the forward map everything else in this package starts from.  Two
Dirac potentials are considered equivalent in shape when they differ by a
constant unimodular factor; the nodewise complex conjugate of p produces a
Q conjugated by a fixed unitary, so conjugate pairs are indistinguishable
at the level of Q alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    ArrayC,
    Grid,
    GridMismatchError,
    SampledMatrixField,
    SampledScalarField,
    differentiate,
    second_difference,
    _require_same_grid,
)

SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)

#: Constant unitary sigma with Q(conj p) = sigma Q(p) sigma^*.
SIGMA_FLIP = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=np.complex128)


@dataclass
class DiracPotential:
    """Scalar potential with an explicit derivative channel.

    Families built symbolically carry their exact derivative; otherwise the
    derivative is filled in by finite differences.  ``derivative_residual``
    measures the disagreement between the stored channel and a numerical
    derivative of the samples, which should be O(h^2) for smooth data.
    """

    p: SampledScalarField
    p_prime: SampledScalarField

    def __post_init__(self) -> None:
        _require_same_grid(self.p.grid, self.p_prime.grid)

    @property
    def grid(self) -> Grid:
        return self.p.grid

    @classmethod
    def from_samples(
        cls,
        grid: Grid,
        p_values: ArrayC,
        p_prime_values: ArrayC | None = None,
    ) -> "DiracPotential":
        p = SampledScalarField(grid, np.asarray(p_values, dtype=np.complex128))
        if p_prime_values is None:
            pp = differentiate(p)
        else:
            pp = SampledScalarField(grid, np.asarray(p_prime_values, np.complex128))
        return cls(p, pp)

    def derivative_residual(self) -> float:
        num = differentiate(self.p)
        return float(np.max(np.abs(num.values - self.p_prime.values)))

    def validate_derivative(self, tol: float | None = None) -> None:
        """Raise if the derivative channel disagrees with the samples.

        The default tolerance 100*h^2*(1 + |p| + |p'|) leaves room for the
        third-derivative constant of reasonably smooth potentials.
        """
        if tol is None:
            scale = 1.0 + float(np.max(np.abs(self.p.values))) + float(
                np.max(np.abs(self.p_prime.values))
            )
            tol = 100.0 * self.grid.h**2 * scale
        res = self.derivative_residual()
        if res > tol:
            raise ValueError(
                f"derivative channel residual {res:.3e} exceeds tolerance {tol:.3e}"
            )

    def conj(self) -> "DiracPotential":
        return DiracPotential(self.p.conj(), self.p_prime.conj())

    def to_json(self) -> dict:
        from .grids import scalar_field_to_json

        doc = scalar_field_to_json(self.p)
        doc["p_prime"] = {
            "re": self.p_prime.values.real.tolist(),
            "im": self.p_prime.values.imag.tolist(),
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DiracPotential":
        from .grids import scalar_field_from_json

        p = scalar_field_from_json(doc)
        if "p_prime" in doc:
            blk = doc["p_prime"]
            pp_values = np.asarray(blk["re"], float) + 1j * np.asarray(blk["im"], float)
            return cls.from_samples(p.grid, p.values, pp_values)
        return cls.from_samples(p.grid, p.values)


@dataclass
class SpinorField:
    """Two-component complex samples, shape (n, 2)."""

    grid: Grid
    values: ArrayC

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid.n, 2):
            raise ValueError(f"expected shape {(self.grid.n, 2)}, got {self.values.shape}")


def dirac_apply(pot: DiracPotential, y: SpinorField) -> SpinorField:
    """Apply i*sigma3*d/dx + P to a spinor, componentwise finite differences."""
    _require_same_grid(pot.grid, y.grid)
    y1 = SampledScalarField(y.grid, y.values[:, 0])
    y2 = SampledScalarField(y.grid, y.values[:, 1])
    d1 = differentiate(y1).values
    d2 = differentiate(y2).values
    p = pot.p.values
    out = np.empty_like(y.values)
    out[:, 0] = 1j * d1 + p * y.values[:, 1]
    out[:, 1] = -1j * d2 + np.conj(p) * y.values[:, 0]
    return SpinorField(y.grid, out)


def schrodinger_from_dirac(pot: DiracPotential) -> SampledMatrixField:
    """Forward map p -> Q = i*sigma3*P' + P^2, Hermitian by construction."""
    n = pot.grid.n
    p = pot.p.values
    pp = pot.p_prime.values
    q = np.zeros((n, 2, 2), dtype=np.complex128)
    mod2 = np.abs(p) ** 2
    q[:, 0, 0] = mod2
    q[:, 1, 1] = mod2
    q[:, 0, 1] = 1j * pp
    q[:, 1, 0] = -1j * np.conj(pp)
    return SampledMatrixField(pot.grid, 2, q, hermitian=True)


def dirac_square_residual(
    pot: DiracPotential,
    y: SpinorField,
    bc_tol: float = 1e-6,
) -> float:
    """Sup-norm defect of D(D y) against (-y'' + Q y) on interior nodes.

    The test spinor must satisfy y(0) = y'(0) = 0 (checked up to ``bc_tol``
    times the data scale); two nodes at each end are excluded because the
    doubly applied one-sided stencils degrade there.
    """
    _require_same_grid(pot.grid, y.grid)
    scale = 1.0 + float(np.max(np.abs(y.values)))
    y1 = SampledScalarField(y.grid, y.values[:, 0])
    y2 = SampledScalarField(y.grid, y.values[:, 1])
    d1 = differentiate(y1).values
    d2 = differentiate(y2).values
    if max(abs(y.values[0, 0]), abs(y.values[0, 1])) > bc_tol * scale:
        raise ValueError("test spinor does not vanish at x = 0")
    # the one-sided stencil sees O(h^2) even when y'(0) = 0 exactly
    if max(abs(d1[0]), abs(d2[0])) > (bc_tol + 10.0 * y.grid.h**2) * scale:
        raise ValueError("test spinor derivative does not vanish at x = 0")

    twice = dirac_apply(pot, dirac_apply(pot, y)).values
    q = schrodinger_from_dirac(pot).values
    ypp = np.stack(
        [second_difference(y1).values, second_difference(y2).values], axis=1
    )
    rhs = -ypp + np.einsum("nij,nj->ni", q, y.values)
    defect = np.abs(twice - rhs)
    interior = defect[2:-2] if y.grid.n > 4 else defect
    return float(np.max(interior))


def is_exceptional_sufficient(
    pot: DiracPotential, tol: float = 1e-8, angle_tol: float = 1e-8
) -> bool:
    """Sufficient test for the conjugate-ambiguous case: constant arg p.

    Checks that arg p(x) is constant mod 2*pi over the support {|p| > tol}.
    A potential that vanishes identically passes vacuously.  This is only a
    sufficient condition: a False return means "not known exceptional".
    """
    p = pot.p.values
    mask = np.abs(p) > tol
    if not np.any(mask):
        return True
    u = p[mask] / np.abs(p[mask])
    mean = np.sum(np.abs(p[mask]) * u)
    if abs(mean) == 0.0:
        return False
    mean /= abs(mean)
    return float(np.max(np.abs(u - mean))) <= angle_tol


def shift_potential(q: SampledMatrixField, gamma: float) -> SampledMatrixField:
    """Add gamma * identity at each node (spectral shift, shape-preserving)."""
    shifted = q.values + gamma * np.eye(q.k)[None, :, :]
    return SampledMatrixField(q.grid, q.k, shifted, hermitian=q.hermitian)
