"""Pointwise algebra of the log-conformation representation in 2D.

All functions broadcast over numpy arrays, so the same code evaluates a
single tensor or every quadrature point of a mesh at once.  Complex inputs
are accepted: branch decisions use real parts only, which makes the
functions usable for complex-step differentiation (see
:func:`reaction_jacobian`).

Velocity-gradient convention: ``G12`` is the derivative of the x-velocity
with respect to y, i.e. ``G[i, j] = d v_i / d x_j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

EPS = 1e-12
EXP_LIMIT = 700.0
# complex step used for kernel derivatives
_CSTEP = 1e-30
# isotropic states (both eigen-branches degenerate) are shifted by this much
# before complex-step differentiation; Pi is smooth there, so the Jacobian
# error is of the same order
_ISO_SHIFT = 1e-7


class ConformationOverflow(ArithmeticError):
    """An eigenvalue of s left the representable exponent range."""


class FeneBoundExceeded(ArithmeticError):
    """Trace of the conformation tensor reached the FENE extensibility limit."""


class NotPositiveDefinite(ValueError):
    pass


class ModelKind(str, enum.Enum):
    OLDROYD_B = "oldroyd-b"
    GIESEKUS = "giesekus"
    PTT_EXP = "ptt-exp"
    FENE_P = "fene-p"
    FENE_CR = "fene-cr"


class RelaxationMode(str, enum.Enum):
    AS_WRITTEN = "as-written"
    CONSISTENT = "consistent"


@dataclass(frozen=True)
class SymTensor2:
    s11: np.ndarray | float
    s12: np.ndarray | float
    s22: np.ndarray | float

    def as_matrix(self) -> np.ndarray:
        s11, s12, s22 = np.broadcast_arrays(self.s11, self.s12, self.s22)
        return np.stack([np.stack([s11, s12], -1), np.stack([s12, s22], -1)], -2)

    @classmethod
    def from_matrix(cls, m) -> "SymTensor2":
        m = np.asarray(m)
        return cls(m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1])

    def stack(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.s11, self.s12, self.s22), -1)

    @classmethod
    def unstack(cls, a) -> "SymTensor2":
        a = np.asarray(a)
        return cls(a[..., 0], a[..., 1], a[..., 2])


@dataclass(frozen=True)
class Eigensystem2:
    lam1: np.ndarray | float
    lam2: np.ndarray | float
    v1x: np.ndarray | float
    v1y: np.ndarray | float
    identity_flag: np.ndarray | bool

    def rotation(self) -> np.ndarray:
        """R with the normalized first eigenvector as first column."""
        vx, vy = np.broadcast_arrays(self.v1x, self.v1y)
        return np.stack([np.stack([vx, -vy], -1), np.stack([vy, vx], -1)], -2)


@dataclass(frozen=True)
class VelGrad2:
    G11: np.ndarray | float
    G12: np.ndarray | float
    G21: np.ndarray | float
    G22: np.ndarray | float

    def as_matrix(self) -> np.ndarray:
        a = np.broadcast_arrays(self.G11, self.G12, self.G21, self.G22)
        return np.stack([np.stack(a[:2], -1), np.stack(a[2:], -1)], -2)

    @classmethod
    def from_matrix(cls, m) -> "VelGrad2":
        m = np.asarray(m)
        return cls(m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1])

    def stack(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.G11, self.G12, self.G21, self.G22), -1)

    @classmethod
    def unstack(cls, a) -> "VelGrad2":
        a = np.asarray(a)
        return cls(a[..., 0], a[..., 1], a[..., 2], a[..., 3])


@dataclass(frozen=True)
class ModelClosure:
    kind: ModelKind = ModelKind.OLDROYD_B
    alpha_gie: float = 0.0
    eps_ptt: float = 0.0
    a_max_sq: float = 100.0
    relaxation_mode: RelaxationMode = RelaxationMode.CONSISTENT

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "relaxation_mode", RelaxationMode(self.relaxation_mode))
        if not 0.0 <= self.alpha_gie <= 1.0:
            raise ValueError("alpha_gie out of range [0,1]")
        if self.eps_ptt < 0.0:
            raise ValueError("eps_ptt must be non-negative")
        if self.kind in (ModelKind.FENE_P, ModelKind.FENE_CR) and self.a_max_sq <= 2.0:
            raise ValueError("a_max_sq must exceed 2 (trace of the identity)")


OLDROYD_B = ModelClosure()


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to log-conformation kernel")


def _exp_checked(lam):
    re = np.real(lam)
    if np.any(np.abs(re) > EXP_LIMIT):
        raise ConformationOverflow(
            f"conformation overflow: |eigenvalue of s| = {np.max(np.abs(re)):.4g} > {EXP_LIMIT}"
        )
    return np.exp(lam)


def eig_sym(s: SymTensor2, eps: float = EPS, *, smooth: bool = False) -> Eigensystem2:
    """Eigenvalues and first eigenvector of a symmetric 2x2 tensor.

    ``lam1`` is the minus-branch root.  When ``|s12| <= eps`` the rotation is
    the identity and the eigenvalues keep storage order ``(s11, s22)``.

    With ``smooth=True`` the identity branch is skipped wherever the
    eigenvector is still well defined; this is the variant used for
    complex-step derivatives, where the branch would hide the dependence
    on ``s12``.
    """
    s11, s12, s22 = (np.asarray(x) for x in (s.s11, s.s12, s.s22))
    _check_finite(s11, s12, s22)
    s11, s12, s22 = np.broadcast_arrays(s11, s12, s22)
    d = s11 - s22
    r = np.sqrt(d * d + 4.0 * s12 * s12)
    tr = s11 + s22
    lam1 = 0.5 * (tr - r)
    lam2 = 0.5 * (tr + r)
    # (lam1 - s22, s12) and (s12, lam1 - s11) span the same eigenspace; pick
    # the row of (s - lam1 I) that avoids cancellation
    pos = np.real(d) > 0.0
    ex = np.where(pos, s12, 0.5 * (d - r))
    ey = np.where(pos, -0.5 * (d + r), s12)
    if smooth:
        ident = np.real(r) == 0.0
    else:
        ident = np.abs(np.real(s12)) <= eps
    safe = np.where(ident, 1.0, np.sqrt(ex * ex + ey * ey))
    v1x = np.where(ident, 1.0, ex / safe)
    v1y = np.where(ident, 0.0, ey / safe)
    lam1 = np.where(ident, s11, lam1)
    lam2 = np.where(ident, s22, lam2)
    return Eigensystem2(lam1, lam2, v1x, v1y, ident)


def conformation_from_log(s: SymTensor2, eps: float = EPS, *, smooth: bool = False) -> SymTensor2:
    e = eig_sym(s, eps, smooth=smooth)
    e1 = _exp_checked(e.lam1)
    e2 = _exp_checked(e.lam2)
    vx2 = e.v1x * e.v1x
    vy2 = e.v1y * e.v1y
    a11 = vx2 * e1 + vy2 * e2
    a12 = e.v1x * e.v1y * (e1 - e2)
    a22 = vx2 * e2 + vy2 * e1
    return SymTensor2(a11, a12, a22)


def log_from_conformation(A: SymTensor2, eps: float = EPS) -> SymTensor2:
    a11, a12, a22 = (np.asarray(x, dtype=float) for x in (A.s11, A.s12, A.s22))
    _check_finite(a11, a12, a22)
    if np.any(a11 <= 0.0) or np.any(a11 * a22 - a12 * a12 <= 0.0):
        raise NotPositiveDefinite("conformation tensor is not positive definite")
    e = eig_sym(A, eps)
    l1 = np.log(e.lam1)
    l2 = np.log(e.lam2)
    vx2 = e.v1x * e.v1x
    vy2 = e.v1y * e.v1y
    return SymTensor2(vx2 * l1 + vy2 * l2, e.v1x * e.v1y * (l1 - l2), vx2 * l2 + vy2 * l1)


def rotate_gradient(G: VelGrad2, e: Eigensystem2) -> VelGrad2:
    """Velocity gradient in the principal frame of s.

    Component formulas follow the published ones, so the result equals
    ``R^T G^T R`` (the transpose of ``R^T G R``): with ``G[i, j] = dv_i/dx_j``
    this is the rotated ``grad v`` of the upper-convected derivative
    ``A.grad(v) + grad(v)^T.A`` that the off-diagonal closure assumes.
    """
    vx, vy = e.v1x, e.v1y
    vx2, vy2, vxy = vx * vx, vy * vy, vx * vy
    g11, g12, g21, g22 = G.G11, G.G12, G.G21, G.G22
    t11 = vx2 * g11 + vxy * (g12 + g21) + vy2 * g22
    t12 = vx2 * g21 + vxy * (g22 - g11) - vy2 * g12
    t21 = vx2 * g12 + vxy * (g22 - g11) - vy2 * g21
    t22 = vx2 * g22 - vxy * (g12 + g21) + vy2 * g11
    return VelGrad2(t11, t12, t21, t22)


def _fene_k(denominator_trace, a_max_sq):
    den = 1.0 - denominator_trace / a_max_sq
    if np.any(np.real(den) <= 0.0):
        raise FeneBoundExceeded("FENE bound exceeded: trace reached a_max^2")
    return 1.0 / den


def relaxation_factors(m: ModelClosure, lam1, lam2):
    """Per-eigenvalue relaxation factors ``r_i``; Omega_ii = 2 Gt_ii - r_i / We."""
    kind, mode = m.kind, m.relaxation_mode
    # 1 - exp(-lam), accurate near equilibrium
    ob1 = -np.expm1(-lam1)
    ob2 = -np.expm1(-lam2)
    if kind is ModelKind.OLDROYD_B:
        return ob1, ob2
    e1 = _exp_checked(lam1)
    e2 = _exp_checked(lam2)
    if mode is RelaxationMode.AS_WRITTEN:
        if kind is ModelKind.GIESEKUS:
            a = m.alpha_gie
            return (1 + a * (e1 - 1)) * (e1 - 1), (1 + a * (e2 - 1)) * (e2 - 1)
        if kind is ModelKind.PTT_EXP:
            k = np.exp(m.eps_ptt * (lam1 + lam2 - 3.0))
            return k, k
        k = _fene_k(lam1 + lam2, m.a_max_sq)
        if kind is ModelKind.FENE_P:
            return k * e1 - 1, k * e2 - 1
        return k * (e1 - 1), k * (e2 - 1)
    if kind is ModelKind.GIESEKUS:
        a = m.alpha_gie
        return (1 + a * (e1 - 1)) * ob1, (1 + a * (e2 - 1)) * ob2
    if kind is ModelKind.PTT_EXP:
        # planar flow: out-of-plane stretch stays 1, so tr3(A) - 3 = A11 + A22 - 2
        k = np.exp(m.eps_ptt * (e1 + e2 - 2.0))
        return k * ob1, k * ob2
    k = _fene_k(e1 + e2, m.a_max_sq)
    if kind is ModelKind.FENE_P:
        k0 = 1.0 / (1.0 - 2.0 / m.a_max_sq)
        return k - k0 * np.exp(-lam1), k - k0 * np.exp(-lam2)
    return k * ob1, k * ob2


def omega_diag(m: ModelClosure, Gt: VelGrad2, lam1, lam2, We: float):
    if np.any(np.asarray(We) <= 0):
        raise ValueError("We must be positive")
    r1, r2 = relaxation_factors(m, lam1, lam2)
    return 2.0 * Gt.G11 - r1 / We, 2.0 * Gt.G22 - r2 / We


def _x_over_expm1(x):
    xs = np.where(np.real(x) == 0.0, 1.0, x)
    with np.errstate(over="ignore"):
        q = xs / np.expm1(xs)
    return np.where(np.real(x) == 0.0, 1.0, q)


def omega_offdiag(Gt: VelGrad2, lam1, lam2, eps: float = EPS):
    """Off-diagonal rate in the principal frame.

    ``(l1-l2)/(e^l1-e^l2) * (e^l1 Gt12 + e^l2 Gt21)`` rewritten with
    ``q(x) = x/expm1(x)`` as ``q(l2-l1) Gt12 + q(l1-l2) Gt21``, which stays
    finite for large eigenvalue gaps.
    """
    x = lam1 - lam2
    general = _x_over_expm1(-x) * Gt.G12 + _x_over_expm1(x) * Gt.G21
    return np.where(np.abs(np.real(x)) > eps, general, Gt.G12 + Gt.G21)


def reaction_term(e: Eigensystem2, om11, om12, om22) -> SymTensor2:
    vx, vy = e.v1x, e.v1y
    vx2, vy2, vxy = vx * vx, vy * vy, vx * vy
    p11 = vx2 * om11 - 2.0 * vxy * om12 + vy2 * om22
    p12 = (vx2 - vy2) * om12 + vxy * (om11 - om22)
    p22 = vx2 * om22 + 2.0 * vxy * om12 + vy2 * om11
    return SymTensor2(p11, p12, p22)


def reaction(s: SymTensor2, G: VelGrad2, model: ModelClosure, We: float,
             eps: float = EPS, *, smooth: bool = False) -> SymTensor2:
    """Pi(s, G): right-hand side of Ds/Dt = Pi."""
    e = eig_sym(s, eps, smooth=smooth)
    gt = rotate_gradient(G, e)
    om11, om22 = omega_diag(model, gt, e.lam1, e.lam2, We)
    om12 = omega_offdiag(gt, e.lam1, e.lam2, eps)
    return reaction_term(e, om11, om12, om22)


def reaction_array(s, G, model: ModelClosure, We: float, *, smooth: bool = False) -> np.ndarray:
    """Array form: ``s`` (..., 3), ``G`` (..., 4) -> Pi (..., 3)."""
    return reaction(SymTensor2.unstack(s), VelGrad2.unstack(G), model, We, smooth=smooth).stack()


def _isotropic_shift(s):
    s = np.array(s, dtype=float, copy=True)
    d = s[..., 0] - s[..., 2]
    r = np.sqrt(d * d + 4.0 * s[..., 1] ** 2)
    s[..., 1] = np.where(r < _ISO_SHIFT, s[..., 1] + _ISO_SHIFT, s[..., 1])
    return s


def reaction_jacobian(s, G, model: ModelClosure, We: float):
    """Pi and its derivatives by complex-step differentiation.

    Returns ``(pi, dpi_ds, dpi_dG)`` with shapes (..., 3), (..., 3, 3) and
    (..., 3, 4); ``dpi_ds[..., i, j] = dPi_i / ds_j``.
    """
    s = np.asarray(s, dtype=float)
    G = np.asarray(G, dtype=float)
    pi = reaction_array(s, G, model, We)
    sd = _isotropic_shift(s).astype(complex)
    Gc = G.astype(complex)
    dpi_ds = np.empty(s.shape[:-1] + (3, 3))
    dpi_dG = np.empty(s.shape[:-1] + (3, 4))
    for j in range(3):
        sp = sd.copy()
        sp[..., j] += 1j * _CSTEP
        dpi_ds[..., :, j] = reaction_array(sp, Gc, model, We, smooth=True).imag / _CSTEP
    # Pi is linear in G, so G-derivatives only need the eigen-structure once
    base = reaction_array(sd, np.zeros_like(Gc), model, We, smooth=True).real
    for j in range(4):
        gp = np.zeros_like(G)
        gp[..., j] = 1.0
        dpi_dG[..., :, j] = reaction_array(sd.real, gp, model, We, smooth=True) - base
    return pi, dpi_ds, dpi_dG


def conformation_jacobian(s):
    """A(s) as (..., 3) and dA/ds as (..., 3, 3), by complex step."""
    s = np.asarray(s, dtype=float)
    A = conformation_from_log(SymTensor2.unstack(s)).stack()
    sd = _isotropic_shift(s).astype(complex)
    dA = np.empty(s.shape[:-1] + (3, 3))
    for j in range(3):
        sp = sd.copy()
        sp[..., j] += 1j * _CSTEP
        dA[..., :, j] = conformation_from_log(SymTensor2.unstack(sp), smooth=True).stack().imag / _CSTEP
    return A, dA


def elastic_stress(s: SymTensor2, We: float, beta: float) -> SymTensor2:
    if We <= 0:
        raise ValueError("We must be positive")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta out of range [0,1]")
    A = conformation_from_log(s)
    c = (1.0 - beta) / We
    return SymTensor2(c * (A.s11 - 1.0), c * A.s12, c * (A.s22 - 1.0))


def invariants(A: SymTensor2):
    return A.s11 + A.s22, A.s11 * A.s22 - A.s12 * A.s12
