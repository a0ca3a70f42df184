"""Recovering a Dirac potential class from a scrambled Schrodinger potential.

Input: Q_theta = theta Q(p) theta^* for an unknown constant unitary theta.
The route back to p (up to shape equivalence, and up to the unavoidable
p <-> conj(p) ambiguity) is:

1. split Q_theta into |p|^2 * I plus a traceless Hermitian part
   [[r, z], [conj(z), -r]]  (``decompose``);
2. find a unit vector c with c1*r + c2*Re z + c3*Im z = 0 on all nodes
   (``find_annihilator``); the invariant r^2 + |z|^2 = |p'|^2 guarantees the
   three real functions span at most a plane;
3. read spherical angles (gamma1, phi1) off c and conjugate Q_theta by
   theta1 = u2_from_params(0, 0, gamma1, phi1): the diagonal difference of
   the result vanishes and its (1,2) entry z2 equals p' * e^{i delta} or
   conj(p') * e^{i delta} for some constant delta (``compute_z2``);
4. integrate z2 and recover the missing boundary phase from the modulus
   profile |p| (``recover_phat``), which splits into four cases:

   1  |p(0)| = 0: the prefix integral is the answer;
   2  z2 = 0: p is constant, |p(0)| is the answer;
   3a generic: the angle of the prefix integral attains two values that
      differ mod pi, pinning down the boundary phase uniquely;
   3b the prefix integral has constant angle (z2 real up to a constant
      phase): the boundary phase is determined up to sign and the result is
      an honest conjugate pair.

Every outcome is checked against the modulus profile; a failure downgrades
it to Inconsistent rather than silently returning a wrong candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dirac import DiracPotential
from .grids import (
    ArrayC,
    ArrayF,
    Grid,
    SampledMatrixField,
    SampledScalarField,
    integrate_prefix,
)
from .unitary import U2Params, conjugate_potential, u2_from_params

log = logging.getLogger(__name__)


class NotAttainableError(ValueError):
    """The matrix field cannot be the square of a Dirac operator."""


class LinearlyIndependentError(ValueError):
    """No annihilator exists: the (r, Re z, Im z) samples span all of R^3."""


@dataclass
class RecoveryConfig:
    """Tolerances for the recovery chain.

    All thresholds are multiplied by (1 + data scale) at the point of use.
    The h-dependent defaults track the trapezoid/stencil error of the
    discretization; ``sin_min`` is the conditioning floor for accepting a
    node pair in case 3a.
    """

    tol0_rel: float = 1e-8
    tolz_rel: float = 1e-8
    tol_dependence: float | None = None
    tol_consistency: float | None = None
    sin_min: float = 1e-3

    def dependence_tol(self, h: float) -> float:
        if self.tol_dependence is not None:
            return self.tol_dependence
        return max(1e-6, 50.0 * h * h)

    def consistency_tol(self, h: float) -> float:
        if self.tol_consistency is not None:
            return self.tol_consistency
        return max(1e-6, 100.0 * h * h)


@dataclass
class RZDecomposition:
    """Q = p_abs_sq * I + [[r, z], [conj(z), -r]] nodewise."""

    grid: Grid
    p_abs_sq: ArrayF
    r: ArrayF
    z: ArrayC


@dataclass
class AnnihilatorResult:
    c: ArrayF
    residual: float
    dependency_case: str  # "all-zero" | "rank-one" | "rank-two"
    singular_values: ArrayF


@dataclass
class RecoveryOutcome:
    kind: str  # "Unique" | "ConjugatePair" | "Inconsistent"
    candidates: list[DiracPotential]
    case_taken: str  # "1" | "2" | "3a" | "3b"
    diagnostics: dict = field(default_factory=dict)


def decompose(q: SampledMatrixField, tol_attain: float | None = None) -> RZDecomposition:
    """Split a scrambled potential into trace and traceless parts.

    Rejects inputs whose trace part dips below zero beyond tolerance: no
    Dirac square (or unitary conjugate of one) can have a negative |p|^2.
    """
    if q.k != 2:
        raise ValueError(f"decompose expects 2x2 fields, got k={q.k}")
    scale = 1.0 + float(np.max(np.abs(q.values)))
    defect = q.herm_defect()
    if defect > 1e-8 * scale:
        raise ValueError(f"field is not Hermitian (defect {defect:.3e})")
    if tol_attain is None:
        tol_attain = 1e-10 * scale
    p_abs_sq = 0.5 * (q.values[:, 0, 0].real + q.values[:, 1, 1].real)
    r = 0.5 * (q.values[:, 0, 0].real - q.values[:, 1, 1].real)
    z = q.values[:, 0, 1].copy()
    worst = float(np.min(p_abs_sq))
    if worst < -tol_attain:
        raise NotAttainableError(
            f"trace part reaches {worst:.3e} < 0: not a scrambled Dirac square"
        )
    return RZDecomposition(q.grid, p_abs_sq, r, z)


def find_annihilator(
    d: RZDecomposition, tol_dependence: float | None = None
) -> AnnihilatorResult:
    """Unit c with c . (r, Re z, Im z) = 0 nodewise, by SVD.

    The residual is sigma_min/sigma_max of the n x 3 sample matrix.  In the
    rank-two case the sign of c is fixed by the orientation of the sample
    plane (cross product of the two best-spread sample vectors), which makes
    the downstream candidate class independent of the scrambling unitary:
    conjugation acts on (r, Re z, Im z) as a rotation, and rotations
    preserve cross products.
    """
    if tol_dependence is None:
        tol_dependence = max(1e-6, 50.0 * d.grid.h**2)
    m = np.stack([d.r, d.z.real, d.z.imag], axis=1)
    n = m.shape[0]
    ref = 1.0 + float(np.max(d.p_abs_sq, initial=0.0))
    zero_thresh = 1e-12 * np.sqrt(n) * ref

    _, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[0] <= zero_thresh:
        return AnnihilatorResult(
            c=np.array([1.0, 0.0, 0.0]),
            residual=0.0,
            dependency_case="all-zero",
            singular_values=s,
        )
    residual = float(s[2] / s[0])
    if residual > tol_dependence:
        raise LinearlyIndependentError(
            f"samples are linearly independent: residual {residual:.3e} "
            f"> tolerance {tol_dependence:.3e}"
        )
    case = "rank-one" if s[1] <= tol_dependence * s[0] else "rank-two"
    c = vt[2].copy()

    oriented = False
    if case == "rank-two":
        norms = np.linalg.norm(m, axis=1)
        ia = int(np.argmax(norms))
        crosses = np.cross(np.broadcast_to(m[ia], m.shape), m)
        ib = int(np.argmax(np.linalg.norm(crosses, axis=1)))
        w = crosses[ib]
        wn = float(np.linalg.norm(w))
        if wn > zero_thresh * max(norms[ia], 1.0):
            if float(np.dot(c, w)) < 0.0:
                c = -c
            oriented = True
    if not oriented:
        lead = int(np.argmax(np.abs(c)))
        if c[lead] < 0.0:
            c = -c
    return AnnihilatorResult(
        c=c, residual=residual, dependency_case=case, singular_values=s
    )


def angles_from_annihilator(c: ArrayF) -> tuple[float, float]:
    """Spherical angles (gamma1, phi1) of c = (cos 2phi1, sin 2phi1 cos gamma1,
    sin 2phi1 sin gamma1); gamma1 = 0 by convention when sin 2phi1 = 0."""
    c = np.asarray(c, dtype=float)
    if c.shape != (3,):
        raise ValueError("annihilator must be a 3-vector")
    nrm = float(np.linalg.norm(c))
    if nrm == 0.0:
        raise ValueError("annihilator must be nonzero")
    c = c / nrm
    two_phi1 = float(np.arccos(np.clip(c[0], -1.0, 1.0)))
    phi1 = 0.5 * two_phi1
    if np.hypot(c[1], c[2]) <= 1e-12:
        gamma1 = 0.0
    else:
        gamma1 = float(np.mod(np.arctan2(c[2], c[1]), 2.0 * np.pi))
    return gamma1, phi1


def _annihilate(
    q_scrambled: SampledMatrixField, gamma1: float, phi1: float
) -> tuple[ArrayF, ArrayC]:
    theta1 = u2_from_params(U2Params(alpha=0.0, beta=0.0, gamma=gamma1, phi=phi1))
    q2 = conjugate_potential(q_scrambled, theta1)
    r2 = 0.5 * (q2.values[:, 0, 0].real - q2.values[:, 1, 1].real)
    z2 = q2.values[:, 0, 1].copy()
    return r2, z2


def _closed_form_gap(
    d: RZDecomposition, gamma1: float, phi1: float, z2: ArrayC
) -> float:
    """Cross-check z2 against its closed form in terms of (r, z).

    The direct conjugation above is authoritative; this expansion is logged
    only, to catch convention drift.
    """
    closed = (
        -np.sin(2.0 * phi1) * d.r
        + np.cos(phi1) ** 2 * np.exp(-1j * gamma1) * d.z
        - np.sin(phi1) ** 2 * np.exp(1j * gamma1) * np.conj(d.z)
    )
    return float(np.max(np.abs(closed - z2)))


def compute_z2(
    q_scrambled: SampledMatrixField,
    gamma1: float,
    phi1: float,
    tol: float | None = None,
) -> SampledScalarField:
    """Conjugate by theta1(gamma1, phi1) and return the off-diagonal z2.

    Raises if the conjugation fails to kill the diagonal difference, which
    means the supplied angles do not come from an annihilator of this field.
    """
    d = decompose(q_scrambled)
    r2, z2 = _annihilate(q_scrambled, gamma1, phi1)
    scale = 1.0 + max(float(np.max(np.abs(d.r))), float(np.max(np.abs(d.z))))
    if tol is None:
        tol = max(1e-6, 50.0 * q_scrambled.grid.h**2) * scale
    defect = float(np.max(np.abs(r2)))
    if defect > tol:
        raise ValueError(
            f"annihilation defect sup|r2| = {defect:.3e} exceeds tolerance {tol:.3e}"
        )
    gap = _closed_form_gap(d, gamma1, phi1, z2)
    if gap > 1e-8 * scale:
        log.warning("z2 closed-form cross-check gap %.3e (scale %.3e)", gap, scale)
    return SampledScalarField(q_scrambled.grid, z2)


def recover_phat(
    p_abs: ArrayF,
    z2: SampledScalarField,
    config: RecoveryConfig | None = None,
) -> RecoveryOutcome:
    """Reconstruct candidates for p-hat from (|p|, z2); see module docstring."""
    config = config or RecoveryConfig()
    grid = z2.grid
    h = grid.h
    p_abs = np.asarray(p_abs, dtype=float)
    if p_abs.shape != (grid.n,):
        raise ValueError("modulus profile does not match the z2 grid")
    z2v = z2.values
    scale = 1.0 + max(float(np.max(p_abs, initial=0.0)), float(np.max(np.abs(z2v))))
    tol0 = config.tol0_rel * scale
    tolz = config.tolz_rel * scale
    tolc = config.consistency_tol(h) * scale
    diag: dict = {
        "tolerances": {
            "tol0": tol0,
            "tol_z": tolz,
            "tol_consistency": tolc,
            "sin_min": config.sin_min,
        }
    }

    prefix = integrate_prefix(z2).values

    def outcome(kind: str, case: str, cands: list[ArrayC], pp: list[ArrayC]):
        pots = [
            DiracPotential(
                SampledScalarField(grid, v), SampledScalarField(grid, d)
            )
            for v, d in zip(cands, pp)
        ]
        mod_res = max(
            (float(np.max(np.abs(np.abs(v) - p_abs))) for v in cands), default=0.0
        )
        diag["modulus_residual"] = mod_res
        if mod_res > tolc:
            kind = "Inconsistent"
        diag["case"] = case
        return RecoveryOutcome(kind, pots, case, diag)

    if p_abs[0] <= tol0:
        return outcome("Unique", "1", [prefix], [z2v])

    if float(np.max(np.abs(z2v))) <= tolz:
        const = np.full(grid.n, p_abs[0], dtype=np.complex128)
        return outcome("Unique", "2", [const], [np.zeros(grid.n, np.complex128)])

    abs_prefix = np.abs(prefix)
    i0 = int(np.argmax(abs_prefix))
    diag["x0"] = float(grid.x[i0])
    if abs_prefix[i0] <= tolz:
        # z2 is not negligible but its prefix integral is: constant modulus
        const = np.full(grid.n, p_abs[0], dtype=np.complex128)
        diag["note"] = "prefix integral below tolerance; treated as case 2"
        return outcome("Unique", "2", [const], [np.zeros(grid.n, np.complex128)])

    mask_idx = np.nonzero(abs_prefix > tolz)[0]
    kap = np.angle(prefix[mask_idx])

    def g_at(i: int) -> float:
        return float(
            (p_abs[i] ** 2 - p_abs[0] ** 2 - abs_prefix[i] ** 2)
            / (2.0 * p_abs[0] * abs_prefix[i])
        )

    # two anchored passes toward the pair maximizing |sin(kappa_i - kappa_j)|
    pos0 = int(np.nonzero(mask_idx == i0)[0][0])
    s_first = np.abs(np.sin(kap - kap[pos0]))
    pb = int(np.argmax(s_first))
    s_second = np.abs(np.sin(kap - kap[pb]))
    pa = int(np.argmax(s_second))
    sin_pair = float(s_second[pa])
    i1, i2 = int(mask_idx[pa]), int(mask_idx[pb])
    diag["sin_pair"] = sin_pair

    if sin_pair > config.sin_min and i1 != i2:
        # case 3a: two-point linear system for (cos kappa0, sin kappa0)
        diag["pair"] = [float(grid.x[i1]), float(grid.x[i2])]
        inconsistent = False
        rhs = []
        for i in (i1, i2):
            gi = g_at(i)
            if abs(gi) > 1.0 + tolc:
                inconsistent = True
            rhs.append(float(np.clip(gi, -1.0, 1.0)))
        k1, k2 = kap[pa], kap[pb]
        a_mat = np.array([[np.cos(k1), np.sin(k1)], [np.cos(k2), np.sin(k2)]])
        v = np.linalg.solve(a_mat, np.asarray(rhs))
        nv = float(np.hypot(v[0], v[1]))
        diag["cos_sin_norm_gap"] = abs(nv - 1.0)
        if nv <= tolz:
            diag["note"] = "degenerate (cos, sin) solution"
            inconsistent = True
            kappa0 = 0.0
        else:
            kappa0 = float(np.arctan2(v[1], v[0]))
        diag["kappa0"] = kappa0
        phat = p_abs[0] * np.exp(1j * kappa0) + prefix
        out = outcome("Unique", "3a", [phat], [z2v])
        if inconsistent:
            out.kind = "Inconsistent"
        return out

    # case 3b: constant-angle prefix integral; z2 real after derotation
    kappa_const = float(np.angle(prefix[i0]))
    diag["kappa_const"] = kappa_const
    z2rot = z2v * np.exp(-1j * kappa_const)
    imag_res = float(np.max(np.abs(z2rot.imag)))
    diag["imag_residual"] = imag_res
    j_real = np.real(prefix * np.exp(-1j * kappa_const))
    g0 = g_at(i0)
    inconsistent = imag_res > tolc or abs(g0) > 1.0 + tolc
    kappa0 = float(np.arccos(np.clip(g0, -1.0, 1.0)))
    diag["kappa0"] = kappa0
    q_plus = p_abs[0] * np.exp(1j * kappa0) + j_real
    q_minus = np.conj(q_plus)
    pp = z2rot.real.astype(np.complex128)
    out = outcome("ConjugatePair", "3b", [q_plus, q_minus], [pp, pp.copy()])
    if inconsistent:
        out.kind = "Inconsistent"
    return out


def recover_pipeline(
    q_scrambled: SampledMatrixField,
    config: RecoveryConfig | None = None,
) -> RecoveryOutcome:
    """Full chain: decompose -> annihilate -> z2 -> phase recovery."""
    config = config or RecoveryConfig()
    h = q_scrambled.grid.h
    d = decompose(q_scrambled)
    ann = find_annihilator(d, tol_dependence=config.dependence_tol(h))
    gamma1, phi1 = angles_from_annihilator(ann.c)
    r2, z2v = _annihilate(q_scrambled, gamma1, phi1)
    z2 = SampledScalarField(q_scrambled.grid, z2v)
    p_abs = np.sqrt(np.clip(d.p_abs_sq, 0.0, None))
    out = recover_phat(p_abs, z2, config)
    out.diagnostics.update(
        {
            "annihilator_c": ann.c.tolist(),
            "annihilator_residual": ann.residual,
            "dependency_case": ann.dependency_case,
            "gamma1": gamma1,
            "phi1": phi1,
            "r2_sup": float(np.max(np.abs(r2))),
            "z2_closed_form_gap": _closed_form_gap(d, gamma1, phi1, z2v),
        }
    )
    out.diagnostics["tolerances"]["tol_dependence"] = config.dependence_tol(h)
    return out


@dataclass
class TruthReport:
    """How recovered candidates compare against a known ground truth."""

    phases_vs_p: list[float | None]
    phases_vs_conj: list[float | None]
    any_matches_p: bool
    any_matches_conj: bool
    exactly_one_class: bool


def resolve_against_truth(
    outcome: RecoveryOutcome,
    p_true: DiracPotential,
    tol: float = 1e-6,
) -> TruthReport:
    """Check candidates against p and conj(p) up to constant phase."""
    from .unitary import dirac_shape_equivalent

    conj_true = p_true.conj()
    vs_p = [dirac_shape_equivalent(c, p_true, tol) for c in outcome.candidates]
    vs_c = [dirac_shape_equivalent(c, conj_true, tol) for c in outcome.candidates]
    any_p = any(a is not None for a in vs_p)
    any_c = any(a is not None for a in vs_c)
    return TruthReport(
        phases_vs_p=vs_p,
        phases_vs_conj=vs_c,
        any_matches_p=any_p,
        any_matches_conj=any_c,
        exactly_one_class=any_p != any_c,
    )
