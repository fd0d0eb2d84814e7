"""Proximal maps, projections, Moreau envelopes, and generalized-Jacobian
actions for the box ``[0, C]^n`` and the spectral-norm ball / nuclear norm.

The spectral pieces share one full SVD.  ``SpectralJacobian`` stores a
selected element of the Clarke Jacobian of the spectral-ball projection in
factored form; its action can be applied either densely or through a fast
path whose cost scales with the number of singular values above the
threshold rather than with the full matrix dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "project_box",
    "prox_support_fn",
    "env_support_fn",
    "MatrixSvd",
    "full_svd",
    "NuclearProx",
    "prox_nuclear",
    "project_spectral_ball",
    "env_nuclear",
    "jac_box_diag",
    "SpectralJacobian",
    "build_spectral_jacobian",
    "apply_spectral_jacobian",
]

# Relative tolerance for deciding that a singular value ties the threshold.
_TIE_RTOL = 1e-12


def project_box(x: np.ndarray, C: float) -> np.ndarray:
    """Componentwise projection onto [0, C]."""
    if C <= 0:
        raise ValueError("C must be positive")
    return np.clip(x, 0.0, C)


def prox_support_fn(x: np.ndarray, C: float) -> np.ndarray:
    """Proximal map of the support function of [0, C]^n.

    By the Moreau identity this is ``x - project_box(x, C)``.
    """
    return x - project_box(x, C)


def env_support_fn(x: np.ndarray, C: float) -> float:
    """Moreau envelope of the support function of [0, C]^n at x."""
    x = np.asarray(x, dtype=np.float64)
    p = prox_support_fn(x, C)
    pi = x - p  # projection onto the box
    return float(C * np.sum(np.maximum(p, 0.0)) + 0.5 * np.sum(pi * pi))


@dataclass(frozen=True)
class MatrixSvd:
    """Full SVD of a matrix, internally oriented so rows <= cols.

    ``transposed`` records whether the original matrix was transposed to
    reach that orientation; consumers undo it on output.
    """

    U: np.ndarray  # (m, m) with m = min(p, q)
    s: np.ndarray  # (m,) nonincreasing
    Vt: np.ndarray  # (k, k) full right factor, k = max(p, q)
    transposed: bool

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def k(self) -> int:
        return self.Vt.shape[0]


def full_svd(X: np.ndarray) -> MatrixSvd:
    """Full SVD with the short side as the row dimension."""
    X = np.asarray(X, dtype=np.float64)
    transposed = X.shape[0] > X.shape[1]
    if transposed:
        X = X.T
    U, s, Vt = np.linalg.svd(X, full_matrices=True)
    return MatrixSvd(U, s, Vt, transposed)


@dataclass(frozen=True)
class NuclearProx:
    """Result of the nuclear-norm proximal map: the thresholded matrix, the
    SVD it was computed from, and the count of singular values above tau."""

    Y: np.ndarray
    svd: MatrixSvd
    k_bar: int


def _reconstruct(svd: MatrixSvd, vals: np.ndarray) -> np.ndarray:
    Y = (svd.U * vals) @ svd.Vt[: svd.m, :]
    return Y.T if svd.transposed else Y


def prox_nuclear(X: np.ndarray, tau: float, svd: MatrixSvd | None = None) -> NuclearProx:
    """Soft-threshold the singular values of X by tau."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if svd is None:
        svd = full_svd(X)
    vals = np.maximum(svd.s - tau, 0.0)
    k_bar = int(np.count_nonzero(svd.s > tau))
    return NuclearProx(_reconstruct(svd, vals), svd, k_bar)


def project_spectral_ball(X: np.ndarray, tau: float, svd: MatrixSvd | None = None) -> np.ndarray:
    """Projection onto the spectral-norm ball of radius tau.

    Clips singular values at tau; for tau == 0 this is the zero map.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    X = np.asarray(X, dtype=np.float64)
    if tau == 0:
        return np.zeros_like(X)
    if svd is None:
        svd = full_svd(X)
    if svd.s.size == 0 or svd.s[0] <= tau:
        return X.copy()
    return _reconstruct(svd, np.minimum(svd.s, tau))


def env_nuclear(X: np.ndarray, tau: float, svd: MatrixSvd | None = None) -> float:
    """Moreau envelope of ``tau * ||.||_*`` at X."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if svd is None:
        svd = full_svd(X)
    s = svd.s
    return float(tau * np.sum(np.maximum(s - tau, 0.0)) + 0.5 * np.sum(np.minimum(s, tau) ** 2))


def jac_box_diag(omega: np.ndarray, C: float) -> np.ndarray:
    """Diagonal of the selected box-projection Jacobian element.

    Entry j is 1 exactly when ``0 < omega_j < C`` strictly; ties at the
    boundary take the 0 element.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    omega = np.asarray(omega, dtype=np.float64)
    return ((omega > 0.0) & (omega < C)).astype(np.float64)


@dataclass(frozen=True)
class SpectralJacobian:
    """One element of the Clarke Jacobian of the spectral-ball projection.

    Index ranges over the (internally oriented) singular values:
    ``alpha = [0, k1)`` above the threshold, ``beta1 = [k1, k2)`` at the
    threshold (within a tie tolerance), ``beta2 = [k2, m)`` below, and the
    implicit trailing block of size ``k - m``.  The scaling blocks are kept
    only where they are nonzero, which is what makes the fast action cheap
    when ``k1`` is small.
    """

    shape: tuple[int, int]  # original orientation
    tau: float
    is_interior: bool
    transposed: bool = False
    U: np.ndarray | None = None  # (m, m)
    Vt: np.ndarray | None = None  # (k, k)
    s: np.ndarray | None = None  # (m,)
    k1: int = 0
    k2: int = 0
    xi2_aa: np.ndarray | None = None  # (k1, k1)
    xi2_ab: np.ndarray | None = None  # (k1, m - k1), columns beta1 then beta2
    xi1_ab2: np.ndarray | None = None  # (k1, m - k2)
    xi3_d: np.ndarray | None = None  # (k1,)

    @property
    def alpha(self) -> np.ndarray:
        return np.arange(self.k1)

    @property
    def beta1(self) -> np.ndarray:
        return np.arange(self.k1, self.k2)

    @property
    def beta2(self) -> np.ndarray:
        m = 0 if self.s is None else self.s.size
        return np.arange(self.k2, m)


def build_spectral_jacobian(X: np.ndarray | None, tau: float, svd: MatrixSvd | None = None) -> SpectralJacobian:
    """Select and factor an element of the projection Jacobian at X.

    When ``||X||_2 <= tau`` (with tau > 0) the projection is locally the
    identity and only a flag is stored.  Otherwise the SVD-based block
    scalars are precomputed on the rows indexed by ``alpha``.  A
    precomputed ``svd`` may be passed in place of the matrix itself.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if svd is None:
        if X is None:
            raise ValueError("either X or its SVD is required")
        svd = full_svd(X)
    shape = (svd.k, svd.m) if svd.transposed else (svd.m, svd.k)
    s = svd.s
    if tau > 0 and (s.size == 0 or s[0] <= tau):
        return SpectralJacobian(shape=shape, tau=tau, is_interior=True)

    tie = _TIE_RTOL * max(1.0, s[0] if s.size else 1.0)
    k1 = int(np.count_nonzero(s > tau + tie))
    k2 = int(np.count_nonzero(s >= tau - tie))
    m = s.size

    s_a = s[:k1]
    s_b = s[k1:m]
    s_b2 = s[k2:m]
    # (1 - 2 tau / (s_i + s_j)) on alpha x alpha; (s_i - tau)/(s_i + s_j) on
    # alpha x beta; (s_i - tau)/(s_i - s_j) on alpha x beta2; 1 - tau/s_i on
    # the trailing block.
    xi2_aa = 1.0 - 2.0 * tau / (s_a[:, None] + s_a[None, :])
    xi2_ab = (s_a[:, None] - tau) / (s_a[:, None] + s_b[None, :])
    xi1_ab2 = (s_a[:, None] - tau) / (s_a[:, None] - s_b2[None, :])
    xi3_d = 1.0 - tau / s_a
    return SpectralJacobian(
        shape=shape,
        tau=tau,
        is_interior=False,
        transposed=svd.transposed,
        U=svd.U,
        Vt=svd.Vt,
        s=s,
        k1=k1,
        k2=k2,
        xi2_aa=xi2_aa,
        xi2_ab=xi2_ab,
        xi1_ab2=xi1_ab2,
        xi3_d=xi3_d,
    )


def _dense_scaling_matrices(jac: SpectralJacobian):
    """Assemble the full symmetric scaling matrices of the Jacobian."""
    m = jac.s.size
    k = jac.Vt.shape[0]
    k1, k2 = jac.k1, jac.k2
    xi1 = np.zeros((m, m))
    xi2 = np.zeros((m, m))
    xi3 = np.zeros((m, k - m))
    xi1[:k1, :k1] = 1.0
    xi1[:k1, k1:k2] = 1.0
    xi1[k1:k2, :k1] = 1.0
    xi1[:k1, k2:] = jac.xi1_ab2
    xi1[k2:, :k1] = jac.xi1_ab2.T
    xi2[:k1, :k1] = jac.xi2_aa
    xi2[:k1, k1:] = jac.xi2_ab
    xi2[k1:, :k1] = jac.xi2_ab.T
    xi3[:k1, :] = jac.xi3_d[:, None]
    return xi1, xi2, xi3


def _apply_dense(jac: SpectralJacobian, D: np.ndarray) -> np.ndarray:
    m = jac.s.size
    U, Vt = jac.U, jac.Vt
    V1t = Vt[:m, :]
    V2t = Vt[m:, :]
    H1 = U.T @ D @ V1t.T
    H2 = U.T @ D @ V2t.T
    xi1, xi2, xi3 = _dense_scaling_matrices(jac)
    S = 0.5 * (H1 + H1.T)
    T = 0.5 * (H1 - H1.T)
    G1 = U @ (xi1 * S + xi2 * T) @ V1t
    G2 = U @ (xi3 * H2) @ V2t
    return D - G1 - G2


def _apply_fast(jac: SpectralJacobian, D: np.ndarray) -> np.ndarray:
    """Same action using only alpha-indexed blocks: O(k1 m k + k1 m^2)."""
    m = jac.s.size
    k1, k2 = jac.k1, jac.k2
    if k1 == 0:
        # No singular value above the threshold: only tie blocks remain and
        # every stored scaling is empty, so the action reduces to D itself.
        return D.copy()
    U, Vt = jac.U, jac.Vt
    V1t = Vt[:m, :]  # (m, k)
    Ua = U[:, :k1]
    UaD = Ua.T @ D  # (k1, k)
    H_row = UaD @ V1t.T  # rows alpha of H1, (k1, m)
    H_col = (U.T @ (D @ V1t.T[:, :k1])).T  # transposed cols alpha, (k1, m)
    S_row = 0.5 * (H_row + H_col)
    T_row = 0.5 * (H_row - H_col)

    K_row = np.empty((k1, m))
    K_row[:, :k1] = S_row[:, :k1] + jac.xi2_aa * T_row[:, :k1]
    K_row[:, k1:k2] = S_row[:, k1:k2] + jac.xi2_ab[:, : k2 - k1] * T_row[:, k1:k2]
    K_row[:, k2:] = jac.xi1_ab2 * S_row[:, k2:] + jac.xi2_ab[:, k2 - k1 :] * T_row[:, k2:]
    # Rows beta of the scaled matrix touch columns alpha only; S is symmetric
    # and T antisymmetric, so both blocks come from the alpha rows already
    # computed.
    K_colb = np.empty((m - k1, k1))
    K_colb[: k2 - k1, :] = S_row[:, k1:k2].T - jac.xi2_ab[:, : k2 - k1].T * T_row[:, k1:k2].T
    K_colb[k2 - k1 :, :] = (
        jac.xi1_ab2.T * S_row[:, k2:].T - jac.xi2_ab[:, k2 - k1 :].T * T_row[:, k2:].T
    )
    G1 = Ua @ (K_row @ V1t) + U[:, k1:] @ (K_colb @ V1t[:k1, :])
    # Trailing block through I - V1 V1' to avoid forming V2.
    G2 = Ua @ (jac.xi3_d[:, None] * (UaD - H_row @ V1t))
    return D - G1 - G2


def apply_spectral_jacobian(jac: SpectralJacobian, d_W: np.ndarray, mode: str = "fast") -> np.ndarray:
    """Apply the selected Jacobian element to a direction matrix.

    ``mode`` is "fast" (alpha-indexed blocks only) or "dense" (full scaling
    matrices); the two agree to roundoff and the fast path is the one used
    inside the Newton solver.
    """
    d_W = np.asarray(d_W, dtype=np.float64)
    if d_W.shape != jac.shape:
        raise ValueError(f"direction has shape {d_W.shape}, expected {jac.shape}")
    if jac.is_interior:
        return d_W
    D = d_W.T if jac.transposed else d_W
    if mode == "dense":
        out = _apply_dense(jac, D)
    elif mode == "fast":
        out = _apply_fast(jac, D)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out.T if jac.transposed else out
