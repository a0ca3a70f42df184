"""Synthetic scalar potential families with exact derivative channels.

Used by the CLI generator, the experiment scripts, and the test suite.  Each
constructor returns a :class:`~diracsq.dirac.DiracPotential` whose derivative
channel is evaluated symbolically, so forward maps built from these carry no
differentiation error.
"""

from __future__ import annotations

import numpy as np

from .dirac import DiracPotential
from .grids import Grid, SampledScalarField


def zero(grid: Grid) -> DiracPotential:
    z = np.zeros(grid.n, dtype=np.complex128)
    return DiracPotential(SampledScalarField(grid, z), SampledScalarField(grid, z.copy()))


def linear_phase(grid: Grid, a: float, b: float, c: float, d: float) -> DiracPotential:
    """p(x) = (a + b x) e^{i (c x + d)}.

    The workhorse family: for c != 0 the argument of p varies, so p and its
    conjugate are genuinely inequivalent in shape.
    """
    x = grid.x
    phase = np.exp(1j * (c * x + d))
    p = (a + b * x) * phase
    pp = phase * (b + 1j * c * (a + b * x))
    return DiracPotential(SampledScalarField(grid, p), SampledScalarField(grid, pp))


def polynomial(grid: Grid, coeffs) -> DiracPotential:
    """p(x) = sum_j coeffs[j] * x^j with complex coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    x = grid.x
    p = np.polynomial.polynomial.polyval(x, coeffs)
    dcoeffs = coeffs[1:] * np.arange(1, len(coeffs))
    pp = (
        np.polynomial.polynomial.polyval(x, dcoeffs)
        if len(dcoeffs)
        else np.zeros_like(x)
    )
    return DiracPotential(
        SampledScalarField(grid, p.astype(np.complex128)),
        SampledScalarField(grid, np.asarray(pp, dtype=np.complex128)),
    )


def bump(
    grid: Grid,
    amp: float,
    center: float,
    width: float,
    c: float = 0.0,
    d: float = 0.0,
) -> DiracPotential:
    """Gaussian bump amp * exp(-((x-center)/width)^2) * e^{i(c x + d)}."""
    if width <= 0:
        raise ValueError("bump width must be positive")
    x = grid.x
    env = amp * np.exp(-(((x - center) / width) ** 2))
    p = env * np.exp(1j * (c * x + d))
    pp = p * (-2.0 * (x - center) / width**2 + 1j * c)
    return DiracPotential(SampledScalarField(grid, p), SampledScalarField(grid, pp))


_FAMILIES = {"zero", "linear-phase", "polynomial", "bump"}


def make_potential(family: str, params: dict, grid: Grid) -> DiracPotential:
    """Dispatcher used by the CLI generator."""
    if family == "zero":
        return zero(grid)
    if family == "linear-phase":
        return linear_phase(
            grid,
            a=float(params.get("a", 1.0)),
            b=float(params.get("b", 0.0)),
            c=float(params.get("c", 0.0)),
            d=float(params.get("d", 0.0)),
        )
    if family == "polynomial":
        re = params.get("coeffs_re", [0.0, 1.0])
        im = params.get("coeffs_im", [0.0] * len(re))
        if len(re) != len(im):
            raise ValueError("coeffs_re and coeffs_im must have the same length")
        return polynomial(grid, np.asarray(re, float) + 1j * np.asarray(im, float))
    if family == "bump":
        return bump(
            grid,
            amp=float(params.get("amp", 1.0)),
            center=float(params.get("center", grid.x_max / 2.0)),
            width=float(params.get("width", max(grid.x_max / 8.0, grid.h))),
            c=float(params.get("c", 0.0)),
            d=float(params.get("d", 0.0)),
        )
    raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")


def random_linear_phase(
    rng: np.random.Generator,
    grid: Grid,
    c_min: float = 0.3,
    c_max: float = 1.2,
) -> DiracPotential:
    """Seeded draw from the linear-phase family with c bounded away from 0.

    Used by the randomized round-trip experiments: a in [0.5, 1.5] keeps
    |p(0)| > 0 and the c bound keeps the potential away from the
    constant-argument (conjugate-ambiguous) case.
    """
    a = rng.uniform(0.5, 1.5)
    b = rng.uniform(-1.0, 1.0)
    c = rng.choice([-1.0, 1.0]) * rng.uniform(c_min, c_max)
    d = rng.uniform(0.0, 2.0 * np.pi)
    return linear_phase(grid, a, b, c, d)
