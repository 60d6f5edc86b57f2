"""Batched 3x3 tensor algebra.

Every function accepts arrays with arbitrary leading batch dimensions and a
trailing (3, 3) block, so the same code serves a single material point or all
quadrature points of a mesh at once.  Plane-strain problems are embedded by
keeping the out-of-plane components of F equal to the identity.

Fourth-order tensors are stored as (..., 3, 3, 3, 3) arrays; ``to_mandel66``
gives the 6x6 matrix form for tensors with minor symmetries.
"""
from __future__ import annotations

import numpy as np

EYE = np.eye(3)

# Symmetric 6-vector ordering used for internal variables: 11, 12, 13, 22, 23, 33.
SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_SYM_ROWS = np.array([i for i, _ in SYM_INDEX])
_SYM_COLS = np.array([j for _, j in SYM_INDEX])
_FULL_TO_SYM = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])


class DegenerateDeformationError(ValueError):
    """Raised when a deformation gradient is singular or inverts the material."""


def tr(t):
    return np.trace(t, axis1=-2, axis2=-1)


def dev(t):
    """Deviatoric part ``t - tr(t)/3 I``."""
    return t - (tr(t) / 3.0)[..., None, None] * EYE


def sym(t):
    return 0.5 * (t + np.swapaxes(t, -1, -2))


def transpose(t):
    return np.swapaxes(t, -1, -2)


def ddot(a, b):
    """Double contraction a:b over the last two axes."""
    return np.einsum("...ij,...ij->...", a, b)


def norm(t):
    return np.sqrt(ddot(t, t))


def det(t):
    """Determinant by cofactor expansion (faster than LAPACK for 3x3 stacks)."""
    return (t[..., 0, 0] * (t[..., 1, 1] * t[..., 2, 2] - t[..., 1, 2] * t[..., 2, 1])
            - t[..., 0, 1] * (t[..., 1, 0] * t[..., 2, 2] - t[..., 1, 2] * t[..., 2, 0])
            + t[..., 0, 2] * (t[..., 1, 0] * t[..., 2, 1] - t[..., 1, 1] * t[..., 2, 0]))


def cofactor(t):
    """Cofactor matrix, so that inv(t) = cofactor(t).T / det(t)."""
    c = np.empty(np.shape(t))
    c[..., 0, 0] = t[..., 1, 1] * t[..., 2, 2] - t[..., 1, 2] * t[..., 2, 1]
    c[..., 0, 1] = t[..., 1, 2] * t[..., 2, 0] - t[..., 1, 0] * t[..., 2, 2]
    c[..., 0, 2] = t[..., 1, 0] * t[..., 2, 1] - t[..., 1, 1] * t[..., 2, 0]
    c[..., 1, 0] = t[..., 0, 2] * t[..., 2, 1] - t[..., 0, 1] * t[..., 2, 2]
    c[..., 1, 1] = t[..., 0, 0] * t[..., 2, 2] - t[..., 0, 2] * t[..., 2, 0]
    c[..., 1, 2] = t[..., 0, 1] * t[..., 2, 0] - t[..., 0, 0] * t[..., 2, 1]
    c[..., 2, 0] = t[..., 0, 1] * t[..., 1, 2] - t[..., 0, 2] * t[..., 1, 1]
    c[..., 2, 1] = t[..., 0, 2] * t[..., 1, 0] - t[..., 0, 0] * t[..., 1, 2]
    c[..., 2, 2] = t[..., 0, 0] * t[..., 1, 1] - t[..., 0, 1] * t[..., 1, 0]
    return c


def inv(t, check=True):
    """Inverse of a stack of 3x3 matrices.

    With ``check`` the determinant must be strictly positive, which is the
    admissibility condition for deformation gradients.
    """
    d = det(t)
    if check and not np.all(d > 0.0):
        raise DegenerateDeformationError(
            f"non-positive determinant (min {np.min(d):.3e})")
    return transpose(cofactor(t)) / d[..., None, None]


def mm(a, b):
    return np.matmul(a, b)


def pull_back(t, F):
    """F^-1 t F^-T."""
    Fi = inv(F)
    return mm(mm(Fi, t), transpose(Fi))


def push_forward(t, F):
    """F t F^T."""
    return mm(mm(F, t), transpose(F))


def to_sym6(t):
    """Pack symmetric tensors into (..., 6) vectors (11, 12, 13, 22, 23, 33)."""
    return t[..., _SYM_ROWS, _SYM_COLS]


def from_sym6(v):
    return np.asarray(v)[..., _FULL_TO_SYM]


def outer(a, b):
    """Dyadic product a (x) b of second-order tensors."""
    a, b = np.broadcast_arrays(a, b)
    return a[..., :, :, None, None] * b[..., None, None, :, :]


def sym_identity4():
    """Fourth-order symmetric identity, 1/2 (d_ik d_jl + d_il d_jk)."""
    return 0.5 * (np.einsum("ik,jl->ijkl", EYE, EYE) + np.einsum("il,jk->ijkl", EYE, EYE))


def contract4(A, C, B):
    """A : C : B for second-order A, B and fourth-order C."""
    return np.einsum("...ij,...ijkl,...kl->...", A, C, B)


def to_mandel66(C):
    """6x6 Mandel matrix of a fourth-order tensor with minor symmetries.

    Shear rows and columns carry a factor sqrt(2), so major symmetry of C is
    equivalent to symmetry of the returned matrix.
    """
    w = np.array([1.0, np.sqrt(2.0), np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0])
    M = C[..., _SYM_ROWS[:, None], _SYM_COLS[:, None], _SYM_ROWS[None, :], _SYM_COLS[None, :]]
    return M * w[:, None] * w[None, :]


def flat9(C):
    """Reshape a (..., 3, 3, 3, 3) tensor into the (..., 9, 9) matrix acting on row-major 3x3."""
    return C.reshape(C.shape[:-4] + (9, 9))
