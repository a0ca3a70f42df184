"""Constant U(2) conjugations and shape equivalence.

A constant unitary theta acts on a matrix potential by Q -> theta Q theta^*.
Every theta factors as

    theta = e^{i alpha} * diag(1, e^{i beta}) * Rot(phi) * diag(1, e^{i gamma}),
    Rot(phi) = [[cos phi, sin phi], [-sin phi, cos phi]],

with phi in [0, pi/2]; written out,

    theta = e^{i alpha} [[cos phi,            sin phi e^{i gamma}],
                         [-sin phi e^{i beta}, cos phi e^{i(beta+gamma)}]].

phi is unique; at the degenerate corners phi = 0 and phi = pi/2 only angle
sums are determined and we fix the gauge gamma = 0.

Shape equivalence:

* Dirac side: p1 ~ p2 when p1 = e^{i a} p2 for a constant a;
* Schrodinger side: Q1 ~ Q2 when Q1 = theta Q2 theta^* for a constant theta.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .dirac import DiracPotential
from .grids import (
    ArrayC,
    SampledMatrixField,
    _require_same_grid,
    weighted_inner_product,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def _wrap(angle: float) -> float:
    return float(np.mod(angle, TWO_PI))


@dataclass
class U2Params:
    """Angles (alpha, beta, gamma, phi) of the factorization above.

    alpha, beta, gamma are reduced mod 2*pi on construction; phi must lie in
    [0, pi/2] (tiny numerical overshoot is clipped).
    """

    alpha: float
    beta: float
    gamma: float
    phi: float

    def __post_init__(self) -> None:
        self.alpha = _wrap(self.alpha)
        self.beta = _wrap(self.beta)
        self.gamma = _wrap(self.gamma)
        if -1e-12 <= self.phi < 0.0:
            self.phi = 0.0
        if np.pi / 2 < self.phi <= np.pi / 2 + 1e-12:
            self.phi = float(np.pi / 2)
        if not (0.0 <= self.phi <= np.pi / 2):
            raise ValueError(f"phi must lie in [0, pi/2], got {self.phi}")

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "phi": self.phi,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "U2Params":
        return cls(
            alpha=float(doc["alpha"]),
            beta=float(doc["beta"]),
            gamma=float(doc["gamma"]),
            phi=float(doc["phi"]),
        )


def _theta_matrix(alpha, beta, gamma, phi) -> ArrayC:
    """The explicit 2x2 matrix; broadcasts over array-valued angles."""
    alpha = np.asarray(alpha, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    out = np.empty(np.broadcast(alpha, beta, gamma, phi).shape + (2, 2), np.complex128)
    out[..., 0, 0] = c
    out[..., 0, 1] = s * np.exp(1j * np.asarray(gamma, float))
    out[..., 1, 0] = -s * np.exp(1j * np.asarray(beta, float))
    out[..., 1, 1] = c * np.exp(1j * (np.asarray(beta, float) + np.asarray(gamma, float)))
    out *= np.exp(1j * alpha)[..., None, None]
    return out


def u2_from_params(params: U2Params) -> ArrayC:
    return _theta_matrix(params.alpha, params.beta, params.gamma, params.phi)


def unitary_defect(theta: ArrayC) -> float:
    theta = np.asarray(theta, dtype=np.complex128)
    return float(np.max(np.abs(theta @ theta.conj().T - np.eye(theta.shape[0]))))


def params_from_u2(theta: ArrayC, tol: float = 1e-10) -> U2Params:
    """Invert the factorization; gauge gamma = 0 at degenerate phi.

    The determinant fixes the overall phase: theta * e^{-i arg(det)/2} lies
    in SU(2) and its first row carries the remaining three angles.
    """
    theta = np.asarray(theta, dtype=np.complex128)
    if theta.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {theta.shape}")
    defect = unitary_defect(theta)
    if defect > tol:
        raise ValueError(f"matrix is not unitary (defect {defect:.3e} > {tol:.1e})")
    d2 = 0.5 * float(np.angle(np.linalg.det(theta)))
    red = theta * np.exp(-1j * d2)
    a, b = red[0, 0], red[0, 1]
    phi = float(np.arctan2(abs(b), abs(a)))
    if abs(b) <= 1e-12:  # phi ~ 0: only beta + gamma is determined
        aprime = float(np.angle(a))
        return U2Params(alpha=d2 + aprime, beta=-2.0 * aprime, gamma=0.0, phi=0.0)
    if abs(a) <= 1e-12:  # phi ~ pi/2
        bprime = float(np.angle(b))
        return U2Params(
            alpha=d2 + bprime, beta=-2.0 * bprime, gamma=0.0, phi=float(np.pi / 2)
        )
    aprime = float(np.angle(a))
    bprime = float(np.angle(b))
    return U2Params(
        alpha=d2 + aprime,
        beta=-(bprime + aprime),
        gamma=bprime - aprime,
        phi=phi,
    )


def random_u2_params(rng: np.random.Generator) -> U2Params:
    """Haar-distributed angles: phi = arccos(sqrt(u)) with u uniform."""
    return U2Params(
        alpha=rng.uniform(0.0, TWO_PI),
        beta=rng.uniform(0.0, TWO_PI),
        gamma=rng.uniform(0.0, TWO_PI),
        phi=float(np.arccos(np.sqrt(rng.uniform(0.0, 1.0)))),
    )


def conjugate_potential(q: SampledMatrixField, theta: ArrayC) -> SampledMatrixField:
    """Nodewise Q -> theta Q theta^* for a constant unitary theta."""
    theta = np.asarray(theta, dtype=np.complex128)
    if theta.shape != (q.k, q.k):
        raise ValueError(
            f"conjugator shape {theta.shape} does not match potential k={q.k}"
        )
    out = np.einsum("ab,nbc,dc->nad", theta, q.values, np.conj(theta))
    return SampledMatrixField(q.grid, q.k, out, hermitian=q.hermitian)


# ---------------------------------------------------------------------------
# equivalence checks
# ---------------------------------------------------------------------------


def dirac_shape_equivalent(
    p1: DiracPotential, p2: DiracPotential, tol: float = 1e-6
) -> float | None:
    """Constant phase a with p1 = e^{i a} p2, or None.

    a is estimated from the weighted correlation of the two sample vectors
    and accepted when sup |p1 - e^{i a} p2| <= tol * (1 + sup |p2|).
    """
    _require_same_grid(p1.grid, p2.grid)
    v1, v2 = p1.p.values, p2.p.values
    scale2 = float(np.max(np.abs(v2)))
    if float(np.max(np.abs(v1))) == 0.0 and scale2 == 0.0:
        return 0.0
    corr = weighted_inner_product(p2.p, p1.p)
    a = float(np.angle(corr)) if corr != 0 else 0.0
    resid = float(np.max(np.abs(v1 - np.exp(1j * a) * v2)))
    if resid <= tol * (1.0 + scale2):
        return _wrap(a)
    return None


def _conj_all(thetas: ArrayC, q: ArrayC) -> ArrayC:
    """theta Q theta^* for a batch of thetas over all nodes."""
    return np.einsum("tab,nbc,tdc->tnad", thetas, q, np.conj(thetas))


def _sup_defect(q1: ArrayC, q2c: ArrayC) -> float:
    return float(np.max(np.sqrt(np.sum(np.abs(q1 - q2c) ** 2, axis=(-2, -1)))))


def _mean_sq(q1: ArrayC, q2c: ArrayC) -> ArrayC:
    d = q1 - q2c
    return np.mean(np.sum(np.abs(d) ** 2, axis=(-2, -1)), axis=-1)


def _polar_unitary(m: ArrayC) -> ArrayC:
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def fit_constant_conjugator(
    a_nodes: ArrayC,
    b_nodes: ArrayC,
    coarse: int = 24,
    nm_steps: int = 50,
    polar_steps: int = 50,
) -> tuple[ArrayC, float]:
    """Best constant unitary theta with A_j ~ theta B_j theta^* (least squares).

    For 2x2 data: coarse grid over (beta, gamma, phi), Nelder-Mead refinement
    of the smooth mean-square objective, then a projected fixed-point polish
    theta <- polar(sum_j A_j theta B_j).  For other dimensions only the polar
    iteration is used (started from the identity and from polar(sum A_j B_j)).
    Returns (theta, rms residual) with rms normalized by the data norm.
    """
    a_nodes = np.asarray(a_nodes, np.complex128)
    b_nodes = np.asarray(b_nodes, np.complex128)
    if a_nodes.shape != b_nodes.shape or a_nodes.ndim != 3:
        raise ValueError("need matching (n, k, k) sample stacks")
    k = a_nodes.shape[1]

    candidates: list[ArrayC] = [np.eye(k, dtype=np.complex128)]
    if k == 2:
        nn = a_nodes.shape[0]
        sub = np.unique(np.linspace(0, nn - 1, min(nn, 192)).astype(int))
        asub, bsub = a_nodes[sub], b_nodes[sub]
        bg = np.linspace(0.0, TWO_PI, coarse, endpoint=False)
        ph = np.linspace(0.0, np.pi / 2, coarse)
        bb, gg, pp = np.meshgrid(bg, bg, ph, indexing="ij")
        thetas = _theta_matrix(0.0, bb.ravel(), gg.ravel(), pp.ravel())
        objs = _mean_sq(asub[None], _conj_all(thetas, bsub))
        best = int(np.argmin(objs))
        x0 = np.array([bb.ravel()[best], gg.ravel()[best], pp.ravel()[best]])

        def f(x):
            th = _theta_matrix(0.0, x[0], x[1], x[2])
            return float(_mean_sq(asub, np.einsum("ab,nbc,dc->nad", th, bsub, np.conj(th))))

        res = minimize(f, x0, method="Nelder-Mead", options={"maxiter": nm_steps})
        candidates.append(_theta_matrix(0.0, *res.x))
        candidates.append(_theta_matrix(0.0, *x0))
    else:
        g = np.einsum("nij,njl->il", a_nodes, b_nodes)
        if np.linalg.norm(g) > 0:
            candidates.append(_polar_unitary(g))

    data_norm = np.sqrt(np.mean(np.sum(np.abs(a_nodes) ** 2, axis=(1, 2))))
    norm = data_norm if data_norm > 0 else 1.0

    def rms(th: ArrayC) -> float:
        d = a_nodes - np.einsum("ab,nbc,dc->nad", th, b_nodes, np.conj(th))
        return float(np.sqrt(np.mean(np.sum(np.abs(d) ** 2, axis=(1, 2)))) / norm)

    best_theta = min(candidates, key=rms)
    theta = best_theta
    best_val = rms(theta)
    for _ in range(polar_steps):
        m = np.einsum("nij,jl,nlm->im", a_nodes, theta, b_nodes)
        if np.linalg.norm(m) == 0:
            break
        theta = _polar_unitary(m)
        val = rms(theta)
        if val < best_val:
            best_val, best_theta = val, theta
        else:
            break
    return best_theta, best_val


def schrodinger_shape_equivalent(
    q1: SampledMatrixField,
    q2: SampledMatrixField,
    tol: float = 1e-6,
    coarse: int = 24,
    refine_steps: int = 50,
) -> ArrayC | None:
    """Constant theta with Q1 = theta Q2 theta^* nodewise, or None.

    Verification utility: searches the (beta, gamma, phi) angles (the overall
    phase alpha acts trivially) and accepts when the sup of the nodewise
    Frobenius defect is <= tol.
    """
    _require_same_grid(q1.grid, q2.grid)
    if q1.k != 2 or q2.k != 2:
        raise ValueError("shape equivalence search is implemented for k = 2")
    theta, _ = fit_constant_conjugator(
        q1.values, q2.values, coarse=coarse, nm_steps=refine_steps
    )
    sup = _sup_defect(
        q1.values, np.einsum("ab,nbc,dc->nad", theta, q2.values, np.conj(theta))
    )
    if sup <= tol:
        return theta
    log.debug("no constant conjugator found: sup defect %.3e > tol %.3e", sup, tol)
    return None
