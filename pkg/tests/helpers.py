"""Shared test fixtures: random problem builders and independent oracles.

Everything here is deliberately written from the defining formulas, not by
calling back into the package, so that agreement between the two routes is
evidence and not tautology.
"""

import numpy as np

from mixkry.operators import aslinop, noise_whitener, zero_operator


def spd_matrix(rng, n, shift=0.5):
    """Random symmetric positive definite matrix."""
    B = rng.standard_normal((n, n))
    return B @ B.T + shift * np.eye(n)


def psd_matrix(rng, n, rank):
    """Random symmetric PSD matrix of the given rank."""
    B = rng.standard_normal((n, rank))
    return B @ B.T


def random_problem(seed, m=25, n=20, q2_rank=None, noise=0.05):
    """Dense test problem: A, SPD Q1, PSD Q2, data b, noise level sigma."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    Q1 = spd_matrix(rng, n)
    Q2 = psd_matrix(rng, n, q2_rank if q2_rank is not None else n)
    x = rng.standard_normal(n)
    sigma = noise * np.linalg.norm(A @ x) / np.sqrt(m)
    b = A @ x + sigma * rng.standard_normal(m)
    return A, Q1, Q2, b, sigma


def wrap_problem(A, Q1, Q2, sigma):
    """Operator views plus the (R^{-1}, L_R) pair for R = sigma^2 I."""
    m = A.shape[0]
    Rinv, LR = noise_whitener(sigma**2, m)
    q2op = zero_operator(A.shape[1]) if Q2 is None else aslinop(Q2)
    return aslinop(A), aslinop(Q1), q2op, Rinv, LR


def dense_map(A, sigma, Q, b, mu, lam):
    """MAP estimate via the dual formula mu + Q A^T (A Q A^T + lam^2 R)^{-1}
    (b - A mu), which never inverts Q and so tolerates PSD mixtures."""
    m = A.shape[0]
    R = sigma**2 * np.eye(m)
    M = A @ Q @ A.T + lam**2 * R
    return mu + Q @ (A.T @ np.linalg.solve(M, b - A @ mu))


def reference_gengk(A, sigma, Q1, b, steps):
    """Plain textbook bidiagonalization loop in the (R^{-1}, Q1) geometry.

    Returns (B, U, V) after `steps` steps with full reorthogonalization.
    Written independently of the package's state machinery.
    """
    m, n = A.shape
    Rinv = np.eye(m) / sigma**2
    beta1 = np.sqrt(b @ Rinv @ b)
    U = [b / beta1]
    alphas, betas = [], []
    vraw = A.T @ Rinv @ U[0]
    alpha = np.sqrt(vraw @ Q1 @ vraw)
    V = [vraw / alpha]
    alphas.append(alpha)
    for _ in range(steps - 1):
        uhat = A @ Q1 @ V[-1] - alphas[-1] * U[-1]
        for u in U:
            uhat = uhat - (u @ Rinv @ uhat) * u
        beta = np.sqrt(uhat @ Rinv @ uhat)
        U.append(uhat / beta)
        betas.append(beta)
        vhat = A.T @ Rinv @ U[-1] - beta * V[-1]
        for v in V:
            vhat = vhat - (v @ Q1 @ vhat) * v
        alpha = np.sqrt(vhat @ Q1 @ vhat)
        V.append(vhat / alpha)
        alphas.append(alpha)
    # Trailing left vector for the (k+1) x k shape.
    uhat = A @ Q1 @ V[-1] - alphas[-1] * U[-1]
    for u in U:
        uhat = uhat - (u @ Rinv @ uhat) * u
    beta = np.sqrt(uhat @ Rinv @ uhat)
    U.append(uhat / beta)
    betas.append(beta)
    k = steps
    B = np.zeros((k + 1, k))
    for i in range(k):
        B[i, i] = alphas[i]
        B[i + 1, i] = betas[i]
    return B, np.column_stack(U), np.column_stack(V)


def max_principal_angle(X, Y):
    """Largest principal angle (radians) between the column spaces.

    Sine-based so tiny angles are resolved; arccos of a cosine near one
    bottoms out around 1e-8.
    """
    qx, _ = np.linalg.qr(X)
    qy, _ = np.linalg.qr(Y)
    if qx.shape[1] == 0 or qy.shape[1] == 0:
        return 0.0 if qx.shape[1] == qy.shape[1] else np.pi / 2
    resid = qy - qx @ (qx.T @ qy)
    s = np.linalg.svd(resid, compute_uv=False)
    return float(np.arcsin(np.clip(s.max(), 0.0, 1.0)))


def run_steps(state, steps, step_fn):
    """Advance the process, stopping early on breakdown."""
    for _ in range(steps):
        if state.terminal:
            break
        step_fn(state)
    return state
