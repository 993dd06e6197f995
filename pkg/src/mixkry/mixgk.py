"""Mixed Golub-Kahan bidiagonalization.

Runs the generalized Golub-Kahan recurrence in the R^{-1} / Q1 inner
products and, alongside it, maintains a skinny QR factorization

    (I - Ut Ut^T) L_R A Q2 V_k = Y_k Rup_k,      Ut = L_R U_{k+1},

so the projected mixed-prior problem can be assembled for any mixing weight
gamma without touching Q2 again.  One Q2 matvec is spent per step; the QR
factors are advanced by an O(m k) rank-one update with a full recompute
fallback.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DegenerateDataError, RankError

__all__ = [
    "MixGKOptions",
    "MixGKState",
    "OpCounter",
    "mixgk_init",
    "mixgk_step",
    "qr_append_update",
    "qr_recompute",
]

logger = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


@dataclass
class OpCounter:
    """Rough floating-point operation tally for the QR maintenance paths."""

    flops: int = 0

    def add(self, n):
        self.flops += int(n)


@dataclass
class MixGKOptions:
    reorth: bool = True
    breakdown_tol: float = 1e-12
    rank_tol: float = 1e-12
    qr_mode: str = "update"

    def __post_init__(self):
        if self.qr_mode not in ("update", "recompute"):
            raise ArgumentError("qr_mode must be 'update' or 'recompute'")
        if self.breakdown_tol <= 0 or self.rank_tol <= 0:
            raise ArgumentError("tolerances must be positive")


def _givens(a, b):
    """Rotation (c, s, h) with [c s; -s c] @ [a, b] = [h, 0]."""
    h = np.hypot(a, b)
    if h == 0.0:
        return 1.0, 0.0, 0.0
    return a / h, b / h, h


def _rotate_rows(M, i, c, s):
    ri = c * M[i] + s * M[i + 1]
    M[i + 1] = -s * M[i] + c * M[i + 1]
    M[i] = ri


def _rotate_cols(M, i, c, s):
    ci = c * M[:, i] + s * M[:, i + 1]
    M[:, i + 1] = -s * M[:, i] + c * M[:, i + 1]
    M[:, i] = ci


def qr_append_update(Y, Rup, u_new, v_hat, input_norm=None, rank_tol=1e-12,
                     counter=None):
    """Advance the skinny QR factors by one step in O(m k) work.

    First deflates the factored matrix against the unit vector ``u_new``
    (computing the QR of (I - u u^T) Y Rup via plane rotations, which keeps
    the updated basis exactly orthogonal to ``u_new``), then appends the
    already-deflated column ``v_hat`` by Gram-Schmidt.  Pass ``u_new=None``
    to skip deflation.  ``input_norm`` is the norm of the raw column before
    any projection; a Gram-Schmidt remainder at or below ``rank_tol`` times
    it means the column is dependent and the basis does not grow.

    Returns the new ``(Y, Rup)``.  Raises :class:`RankError` when deflation
    hits numerical rank deficiency (``u_new`` essentially inside range(Y));
    callers should then rebuild the factors from scratch.
    """
    m = Y.shape[0] if Y.size else v_hat.shape[0]
    r, p = Rup.shape
    Y = np.array(Y)
    Rup = np.array(Rup)

    if u_new is not None and r > 0:
        d = Y.T @ u_new
        if counter is not None:
            counter.add(2 * m * r)
        delta = np.linalg.norm(d)
        if delta > 1e-14:
            # Rotate so only the leading basis column carries the u component.
            for i in range(r - 2, -1, -1):
                c, s, h = _givens(d[i], d[i + 1])
                d[i], d[i + 1] = h, 0.0
                _rotate_rows(Rup, i, c, s)
                _rotate_cols(Y, i, c, s)
            delta_s = d[0]
            xi2 = 1.0 - delta_s * delta_s
            if xi2 <= rank_tol:
                raise RankError("deflation produced a rank-deficient factor")
            lead = Y[:, 0] - delta_s * u_new
            xi = np.linalg.norm(lead)
            Y[:, 0] = lead / xi
            Rup[0] *= xi
            # Restore triangular form (exact only when pivots sit on the
            # diagonal; rank-dropped staircases stay trapezoidal, which no
            # consumer relies on).
            for i in range(r - 1):
                if Rup[i + 1, i] != 0.0:
                    c, s, _ = _givens(Rup[i, i], Rup[i + 1, i])
                    _rotate_rows(Rup, i, c, s)
                    Rup[i + 1, i] = 0.0
                    _rotate_cols(Y, i, c, s)
            if counter is not None:
                counter.add(12 * m * max(r - 1, 0) + 3 * m + 12 * r * p)

    # Gram-Schmidt append of the new column (two passes for orthogonality).
    t = np.array(v_hat, dtype=float)
    if input_norm is None:
        input_norm = np.linalg.norm(t)
    if Y.shape[1] > 0:
        coef = Y.T @ t
        t -= Y @ coef
        coef2 = Y.T @ t
        t -= Y @ coef2
        coef += coef2
        if counter is not None:
            counter.add(8 * m * Y.shape[1])
    else:
        coef = np.zeros(0)
    rho = np.linalg.norm(t)
    if rho <= rank_tol * input_norm:
        # Dependent column: record coefficients only, keep the basis.
        Rup = np.hstack([Rup, coef[:, None]])
        return Y, Rup
    Ynew = np.hstack([Y, (t / rho)[:, None]]) if Y.size else (t / rho)[:, None]
    Rnew = np.zeros((r + 1, p + 1))
    Rnew[:r, :p] = Rup
    Rnew[:r, p] = coef
    Rnew[r, p] = rho
    return Ynew, Rnew


def qr_recompute(Ut, Z, rank_tol=1e-12, counter=None):
    """Skinny QR of (I - Ut Ut^T) Z from scratch, O(m k^2).

    Columns are processed left to right with two-pass Gram-Schmidt so the
    dependent-column decisions match the incremental path.
    """
    m, k = Z.shape
    P = Z - Ut @ (Ut.T @ Z)
    P -= Ut @ (Ut.T @ P)
    if counter is not None:
        counter.add(8 * m * Ut.shape[1] * max(k, 1))
    Y = np.zeros((m, 0))
    Rup = np.zeros((0, 0))
    for j in range(k):
        t = P[:, j].copy()
        norm_in = np.linalg.norm(Z[:, j])
        r = Y.shape[1]
        if r > 0:
            c1 = Y.T @ t
            t -= Y @ c1
            c2 = Y.T @ t
            t -= Y @ c2
            coef = c1 + c2
            if counter is not None:
                counter.add(8 * m * r)
        else:
            coef = np.zeros(0)
        rho = np.linalg.norm(t)
        if rho <= rank_tol * norm_in:
            Rup = np.hstack([Rup, coef[:, None]])
        else:
            Y = np.hstack([Y, (t / rho)[:, None]]) if Y.size else (t / rho)[:, None]
            Rnew = np.zeros((r + 1, Rup.shape[1] + 1))
            Rnew[:r, :-1] = Rup
            Rnew[:r, -1] = coef
            Rnew[r, -1] = rho
            Rup = Rnew
    return Y, Rup


class MixGKState:
    """State of the process after ``k`` completed steps.

    Basis arrays grow by one column per step.  ``U`` holds the left vectors
    (R^{-1}-orthonormal), ``V`` the right vectors (Q1-orthonormal, including
    the one-step lookahead vector), ``Ut = L_R U``.  ``W = Q2 V_k`` and
    ``Z = L_R A W`` are the per-step Q2 caches, ``C = Ut^T Z`` the projected
    coupling block, ``G`` the Gram matrix V_k^T W, and ``(Y, Rup)`` the
    skinny QR factors of ``Z``'s component orthogonal to range(Ut).

    The state is single-owner: only :meth:`step` mutates it.
    """

    def __init__(self, A, Rinv, LR, Q1, Q2, b, options):
        self.A = A
        self.Rinv = Rinv
        self.LR = LR
        self.Q1 = Q1
        self.Q2 = Q2
        self.options = options
        self.m = A.rows
        self.n = A.cols
        self.k = 0
        self.terminal = False
        self.breakdown_reason = None
        self.rank_drops = 0
        self.qr_fallbacks = 0
        self._grams = None

        b = np.asarray(b, dtype=float)
        if b.shape != (self.m,):
            raise ArgumentError("right-hand side length does not match the operator")
        rinv_b = Rinv.matvec(b)
        beta1 = np.sqrt(max(b @ rinv_b, 0.0))
        if beta1 == 0.0:
            raise DegenerateDataError("zero right-hand side")
        self.beta1 = float(beta1)
        u1 = b / beta1
        self.U = u1[:, None]
        self.RinvU = (rinv_b / beta1)[:, None]
        self.Ut = LR.matvec(u1)[:, None]

        vraw = A.rmatvec(self.RinvU[:, 0])
        q1v = Q1.matvec(vraw)
        a1sq = max(vraw @ q1v, 0.0)
        alpha1 = np.sqrt(a1sq)
        scale = np.linalg.norm(vraw)
        if alpha1 <= options.breakdown_tol * max(scale, _TINY):
            # Immediate breakdown: no usable subspace exists.
            self.terminal = True
            self.breakdown_reason = "alpha"
            self.V = np.zeros((self.n, 0))
            self.Q1V = np.zeros((self.n, 0))
            self.alphas = []
        else:
            self.V = (vraw / alpha1)[:, None]
            self.Q1V = (q1v / alpha1)[:, None]
            self.alphas = [float(alpha1)]
        self.betas = []
        self.W = np.zeros((self.n, 0))
        self.Z = np.zeros((self.m, 0))
        self.C = np.zeros((1, 0))
        self.G = np.zeros((0, 0))
        self.Y = np.zeros((self.m, 0))
        self.Rup = np.zeros((0, 0))

    # -- assembled views ----------------------------------------------------

    @property
    def num_left(self):
        return self.U.shape[1]

    def bidiagonal(self):
        """B with diagonal alpha_1..alpha_k and subdiagonal beta_2.., shaped
        (k+1) x k normally and k x k after a beta breakdown."""
        k = self.k
        B = np.zeros((self.num_left, k))
        for i in range(k):
            B[i, i] = self.alphas[i]
        for i in range(len(self.betas)):
            B[i + 1, i] = self.betas[i]
        return B

    @property
    def Vk(self):
        return self.V[:, : self.k]

    @property
    def Q1Vk(self):
        return self.Q1V[:, : self.k]

    def projection_grams(self):
        """Gamma-independent k x k blocks of D^T D, memoized per step."""
        if self._grams is None or self._grams[0] != self.k:
            B = self.bidiagonal()
            BtB = B.T @ B
            BtC = B.T @ self.C
            H2 = BtC + BtC.T
            H3 = self.C.T @ self.C + self.Rup.T @ self.Rup
            self._grams = (self.k, BtB, H2, H3)
        return self._grams[1], self._grams[2], self._grams[3]

    # -- stepping -----------------------------------------------------------

    def step(self):
        if self.terminal:
            raise ArgumentError("cannot step a terminated process")
        opts = self.options
        k = self.k + 1
        v_k = self.V[:, k - 1]
        q1v_k = self.Q1V[:, k - 1]
        u_k = self.U[:, k - 1]
        alpha_k = self.alphas[k - 1]

        # Left vector: beta_{k+1} u_{k+1} = A Q1 v_k - alpha_k u_k.
        a_q1v = self.A.matvec(q1v_k)
        uhat = a_q1v - alpha_k * u_k
        t = self.Rinv.matvec(uhat)
        scale_u = np.sqrt(max(a_q1v @ (t + alpha_k * self.RinvU[:, k - 1]), 0.0))
        if opts.reorth:
            coef = self.U.T @ t
            uhat = uhat - self.U @ coef
            t = t - self.RinvU @ coef
        beta_new = np.sqrt(max(uhat @ t, 0.0))

        if beta_new <= opts.breakdown_tol * max(scale_u, _TINY):
            # The subspace closed under A Q1; finalize step k with the
            # truncated k x k bidiagonal block and the existing left basis.
            self._advance_q2(v_k, new_u=None)
            self.k = k
            self._grams = None
            self.terminal = True
            self.breakdown_reason = "beta"
            return

        u_new = uhat / beta_new
        rinv_u_new = t / beta_new
        self.U = np.hstack([self.U, u_new[:, None]])
        self.RinvU = np.hstack([self.RinvU, rinv_u_new[:, None]])
        ut_new = self.LR.matvec(u_new)
        self.Ut = np.hstack([self.Ut, ut_new[:, None]])
        self.betas.append(float(beta_new))

        # Advance the Q2 branch for column v_k (needs the new left vector).
        self._advance_q2(v_k, new_u=ut_new)

        # Right vector: alpha_{k+1} v_{k+1} = A^T R^{-1} u_{k+1} - beta v_k.
        arm = self.A.rmatvec(rinv_u_new)
        vhat = arm - beta_new * v_k
        coef_v = None
        if opts.reorth:
            coef_v = self.Q1V.T @ vhat
            vhat = vhat - self.V @ coef_v
        q1vhat = self.Q1.matvec(vhat)
        alpha_sq = max(vhat @ q1vhat, 0.0)
        alpha_new = np.sqrt(alpha_sq)
        q1_arm = q1vhat + beta_new * q1v_k
        if coef_v is not None:
            q1_arm = q1_arm + self.Q1V @ coef_v
        scale_v = np.sqrt(max(arm @ q1_arm, 0.0))

        self.k = k
        self._grams = None
        if alpha_new <= opts.breakdown_tol * max(scale_v, _TINY):
            self.terminal = True
            self.breakdown_reason = "alpha"
            return

        self.V = np.hstack([self.V, (vhat / alpha_new)[:, None]])
        self.Q1V = np.hstack([self.Q1V, (q1vhat / alpha_new)[:, None]])
        self.alphas.append(float(alpha_new))

    def _advance_q2(self, v_k, new_u):
        """Spend the step's Q2 matvec and update W, Z, C, G, Y, Rup."""
        opts = self.options
        w = self.Q2.matvec(v_k)
        z = self.LR.matvec(self.A.matvec(w))
        k_new = self.W.shape[1] + 1

        # C = Ut^T Z, updated by one row (new left vector against old Z
        # columns) and one column (all left vectors against z).
        nu = self.Ut.shape[1]
        C_new = np.zeros((nu, k_new))
        if new_u is not None:
            C_new[:-1, :-1] = self.C
            if self.Z.shape[1]:
                C_new[-1, :-1] = new_u @ self.Z
        else:
            C_new[:, :-1] = self.C
        C_new[:, -1] = self.Ut.T @ z
        self.C = C_new

        # G = V_k^T Q2 V_k grows by a symmetric row/column pair.
        g_col = self.V[:, :k_new].T @ w
        G_new = np.zeros((k_new, k_new))
        G_new[:-1, :-1] = self.G
        G_new[: k_new - 1, -1] = g_col[:-1]
        G_new[-1, : k_new - 1] = g_col[:-1]
        G_new[-1, -1] = g_col[-1]
        self.G = G_new

        self.W = np.hstack([self.W, w[:, None]])
        self.Z = np.hstack([self.Z, z[:, None]])

        rank_before = self.Y.shape[1]
        if opts.qr_mode == "recompute":
            self.Y, self.Rup = qr_recompute(self.Ut, self.Z, opts.rank_tol)
        else:
            vhat = z - self.Ut @ (self.Ut.T @ z)
            vhat -= self.Ut @ (self.Ut.T @ vhat)
            try:
                self.Y, self.Rup = qr_append_update(
                    self.Y, self.Rup, new_u, vhat,
                    input_norm=np.linalg.norm(z), rank_tol=opts.rank_tol,
                )
            except RankError:
                self.qr_fallbacks += 1
                logger.info("QR update rank-deficient at step %d; recomputing", k_new)
                self.Y, self.Rup = qr_recompute(self.Ut, self.Z, opts.rank_tol)
        if self.Rup.shape[1] != k_new:
            raise RankError("QR factors lost column consistency")
        if self.Y.shape[1] == rank_before:
            self.rank_drops += 1
            logger.info("dependent Q2 column at step %d (rank stays %d)",
                        k_new, rank_before)


def mixgk_init(A, Rinv, LR, Q1, Q2, b, options=None):
    """Initialize the process: beta_1 u_1 = b, alpha_1 v_1 = A^T R^{-1} u_1.

    Raises :class:`DegenerateDataError` for b = 0.  If alpha_1 vanishes the
    returned state is already terminal with k = 0 (no usable subspace).
    """
    if options is None:
        options = MixGKOptions()
    m, n = A.rows, A.cols
    if Rinv.shape != (m, m) or LR.shape != (m, m):
        raise ArgumentError("noise operator shapes do not match the forward map")
    if Q1.shape != (n, n) or Q2.shape != (n, n):
        raise ArgumentError("prior covariance shapes do not match the forward map")
    return MixGKState(A, Rinv, LR, Q1, Q2, b, options)


def mixgk_step(state):
    """Advance the state by one step (mutates and returns it)."""
    state.step()
    return state
