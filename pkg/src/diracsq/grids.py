"""Uniform half-line grids and sampled fields.

Everything downstream (Dirac potentials, scrambled Schrodinger potentials,
the wave model) lives on uniform grids x_j = j*h starting at 0.  This module
owns the grid/field containers, the finite-difference and quadrature helpers,
and the on-disk JSON/CSV formats.

Conventions fixed here and relied on elsewhere:

* derivatives: second-order central stencils inside, second-order one-sided
  stencils at the two endpoints (exact on quadratics);
* prefix integration: composite trapezoid, node 0 is exactly 0;
* inner products: trapezoid-weighted, conjugate-linear in the first slot.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

ArrayF = NDArray[np.float64]
ArrayC = NDArray[np.complex128]


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid x_j = j*h, j = 0..n-1, on [0, (n-1)*h]."""

    h: float
    n: int

    def __post_init__(self) -> None:
        if not (self.h > 0):
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.n < 3:
            raise ValueError(f"need at least 3 nodes, got {self.n}")

    @property
    def x(self) -> ArrayF:
        return np.arange(self.n) * self.h

    @property
    def x_max(self) -> float:
        return (self.n - 1) * self.h

    @classmethod
    def from_interval(cls, x_max: float, h: float) -> "Grid":
        """Grid covering [0, x_max] with spacing h (x_max rounded to a node)."""
        n = int(round(x_max / h)) + 1
        return cls(h=h, n=n)

    def compatible(self, other: "Grid", rtol: float = 1e-12) -> bool:
        return self.n == other.n and abs(self.h - other.h) <= rtol * self.h


def _require_same_grid(a: "Grid", b: "Grid") -> None:
    if not a.compatible(b):
        raise GridMismatchError(f"grids differ: h={a.h}, n={a.n} vs h={b.h}, n={b.n}")


@dataclass
class SampledScalarField:
    """Complex scalar samples on a grid.  Values are treated as immutable."""

    grid: Grid
    values: ArrayC

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} samples, got shape {self.values.shape}"
            )

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "SampledScalarField":
        return cls(grid, np.asarray(fn(grid.x), dtype=np.complex128))

    def conj(self) -> "SampledScalarField":
        return SampledScalarField(self.grid, np.conj(self.values))


@dataclass
class SampledMatrixField:
    """k x k complex matrix samples per node, shape (n, k, k).

    ``hermitian`` is a caller-maintained flag; ``herm_defect`` measures how
    far the samples actually are from Hermitian.
    """

    grid: Grid
    k: int
    values: ArrayC
    hermitian: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.k < 1:
            raise ValueError("matrix dimension k must be >= 1")
        if self.values.shape != (self.grid.n, self.k, self.k):
            raise ValueError(
                f"expected shape {(self.grid.n, self.k, self.k)}, "
                f"got {self.values.shape}"
            )

    def herm_defect(self) -> float:
        return float(
            np.max(np.abs(self.values - np.conj(np.swapaxes(self.values, 1, 2))))
        )

    def hermitized(self) -> "SampledMatrixField":
        sym = 0.5 * (self.values + np.conj(np.swapaxes(self.values, 1, 2)))
        return SampledMatrixField(self.grid, self.k, sym, hermitian=True)


# ---------------------------------------------------------------------------
# calculus on sampled fields
# ---------------------------------------------------------------------------


def trapezoid_weights(grid: Grid) -> ArrayF:
    """Composite trapezoid weights; exposed so adjoints can be taken exactly."""
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


def differentiate(f: SampledScalarField) -> SampledScalarField:
    """First derivative: central stencils inside, one-sided at the ends.

    Both are second order, so the result is exact for quadratics.
    """
    d = np.gradient(f.values, f.grid.h, edge_order=2)
    return SampledScalarField(f.grid, d)


def second_difference(f: SampledScalarField) -> SampledScalarField:
    """Three-point second derivative; one-sided 4-point stencils at the ends."""
    v = f.values
    h2 = f.grid.h**2
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
    if f.grid.n >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return SampledScalarField(f.grid, out)


def integrate_prefix(f: SampledScalarField) -> SampledScalarField:
    """Trapezoid prefix integral F(x_j) = int_0^{x_j} f; F(0) = 0 exactly."""
    v = f.values
    inc = 0.5 * f.grid.h * (v[1:] + v[:-1])
    out = np.concatenate(([0.0 + 0.0j], np.cumsum(inc)))
    return SampledScalarField(f.grid, out)


def weighted_inner_product(f, g) -> complex:
    """Trapezoid L2 pairing, conjugate-linear in the first argument.

    Accepts scalar fields, or any pair of equally shaped sample arrays
    attached to the same grid via ``(grid, values)`` objects; vector-valued
    fields are paired by summing over components.
    """
    _require_same_grid(f.grid, g.grid)
    w = trapezoid_weights(f.grid)
    fa = np.asarray(f.values)
    ga = np.asarray(g.values)
    if fa.shape != ga.shape:
        raise GridMismatchError(f"value shapes differ: {fa.shape} vs {ga.shape}")
    prod = np.conj(fa) * ga
    while prod.ndim > 1:
        prod = prod.sum(axis=-1)
    return complex(np.sum(w * prod))


# ---------------------------------------------------------------------------
# serialization: JSON field files and CSV export
# ---------------------------------------------------------------------------


def scalar_field_to_json(f: SampledScalarField) -> dict:
    return {
        "h": f.grid.h,
        "n": f.grid.n,
        "re": f.values.real.tolist(),
        "im": f.values.imag.tolist(),
    }


def scalar_field_from_json(doc: dict) -> SampledScalarField:
    grid = Grid(h=float(doc["h"]), n=int(doc["n"]))
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc["im"], dtype=float)
    if re.shape != (grid.n,) or im.shape != (grid.n,):
        raise ValueError("field file length disagrees with its declared n")
    return SampledScalarField(grid, re + 1j * im)


def matrix_field_to_json(q: SampledMatrixField) -> dict:
    flat = q.values.reshape(q.grid.n, q.k * q.k)
    entries = [[[float(z.real), float(z.imag)] for z in row] for row in flat]
    return {"h": q.grid.h, "n": q.grid.n, "k": q.k, "entries": entries}


def matrix_field_from_json(doc: dict) -> SampledMatrixField:
    grid = Grid(h=float(doc["h"]), n=int(doc["n"]))
    k = int(doc["k"])
    raw = np.asarray(doc["entries"], dtype=float)
    if raw.shape != (grid.n, k * k, 2):
        raise ValueError(
            f"matrix field entries have shape {raw.shape}, "
            f"expected {(grid.n, k * k, 2)}"
        )
    values = (raw[..., 0] + 1j * raw[..., 1]).reshape(grid.n, k, k)
    q = SampledMatrixField(grid, k, values)
    q.hermitian = q.herm_defect() <= 1e-10 * (1.0 + float(np.max(np.abs(values))))
    return q


def save_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def scalar_field_to_csv(f: SampledScalarField, path: str | Path) -> None:
    """One row per node: x, re, im."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "re", "im"])
        for x, v in zip(f.grid.x, f.values):
            writer.writerow([repr(float(x)), repr(float(v.real)), repr(float(v.imag))])


def matrix_field_to_csv(q: SampledMatrixField, path: str | Path) -> None:
    """One row per node: x, then row-major entry re/im pairs."""
    header = ["x"]
    for i in range(q.k):
        for j in range(q.k):
            header += [f"e{i}{j}_re", f"e{i}{j}_im"]
    flat = q.values.reshape(q.grid.n, q.k * q.k)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, row in zip(q.grid.x, flat):
            cells = [repr(float(x))]
            for z in row:
                cells += [repr(float(z.real)), repr(float(z.imag))]
            writer.writerow(cells)
