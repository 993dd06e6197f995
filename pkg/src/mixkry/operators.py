"""Linear operators, covariance kernels, priors, and array I/O.

Everything downstream touches matrices only through :class:`LinearOperator`,
so solvers stay matrix-free.  Covariance operators built here are dense under
the hood (guarded by a size cap); swapping in a structured application, for
example circulant embedding on regular grids, only requires constructing a
:class:`LinearOperator` with a different ``matvec``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.special import gammaln, kve

from .errors import (
    ArgumentError,
    CapacityError,
    DefinitenessError,
    DegenerateDataError,
    ParameterDomainError,
)

__all__ = [
    "LinearOperator",
    "DiagonalOperator",
    "Grid",
    "KernelSpec",
    "kernel_eval",
    "grid_distances",
    "build_kernel_operator",
    "SampleFactor",
    "sample_covariance",
    "PriorSpec",
    "mixed_apply",
    "mixed_operator",
    "noise_whitener",
    "identity_operator",
    "zero_operator",
    "aslinop",
    "load_matrix",
    "save_matrix",
    "load_vector",
    "save_vector",
    "load_samples",
    "DENSE_KERNEL_CAP",
]

# Dense covariance guard; large grids need a structured matvec instead.
DENSE_KERNEL_CAP = 16384


class LinearOperator:
    """A linear map defined by its forward (and optional transpose) action.

    Parameters
    ----------
    rows, cols : int
        Output and input dimensions.
    matvec : callable
        Maps a vector of length ``cols`` to a vector of length ``rows``.
    rmatvec : callable, optional
        Transpose action.  Required only by consumers that call
        :meth:`rmatvec` or :attr:`T`.
    mat : ndarray or sparse matrix, optional
        Explicit matrix backing the operator, kept for cheap densification.
    """

    __slots__ = ("rows", "cols", "_matvec", "_rmatvec", "mat")

    def __init__(self, rows, cols, matvec, rmatvec=None, mat=None):
        rows = int(rows)
        cols = int(cols)
        if rows <= 0 or cols <= 0:
            raise ArgumentError("operator dimensions must be positive")
        self.rows = rows
        self.cols = cols
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.mat = mat

    @property
    def shape(self):
        return (self.rows, self.cols)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.cols:
            raise ArgumentError(
                f"operator of shape {self.shape} applied to vector of shape {x.shape}"
            )
        y = np.asarray(self._matvec(x), dtype=float)
        if y.shape != (self.rows,):
            raise ArgumentError("matvec returned a vector of the wrong length")
        return y

    def rmatvec(self, y):
        if self._rmatvec is None:
            raise ArgumentError("operator has no transpose action")
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != self.rows:
            raise ArgumentError(
                f"transpose of shape {self.shape} applied to vector of shape {y.shape}"
            )
        x = np.asarray(self._rmatvec(y), dtype=float)
        if x.shape != (self.cols,):
            raise ArgumentError("rmatvec returned a vector of the wrong length")
        return x

    def __matmul__(self, x):
        return self.matvec(x)

    @property
    def T(self):
        if self._rmatvec is None:
            raise ArgumentError("operator has no transpose action")
        return LinearOperator(
            self.cols,
            self.rows,
            self._rmatvec,
            self._matvec,
            mat=None if self.mat is None else self.mat.T,
        )

    @classmethod
    def from_matrix(cls, mat):
        """Wrap a dense array or scipy sparse matrix."""
        if sp.issparse(mat):
            m = mat.tocsr()
            mt = m.T.tocsr()
            return cls(m.shape[0], m.shape[1], m.dot, mt.dot, mat=m)
        arr = np.asarray(mat, dtype=float)
        if arr.ndim != 2:
            raise ArgumentError("from_matrix expects a 2-d array")
        return cls(arr.shape[0], arr.shape[1], arr.dot, arr.T.dot, mat=arr)

    def to_dense(self, max_size=4096):
        """Materialize the operator as a dense array (oracle/export path)."""
        if self.mat is not None:
            return self.mat.toarray() if sp.issparse(self.mat) else np.array(self.mat)
        if max(self.rows, self.cols) > max_size:
            raise CapacityError(
                f"refusing to densify a {self.rows}x{self.cols} operator "
                f"(cap {max_size})"
            )
        out = np.empty((self.rows, self.cols))
        e = np.zeros(self.cols)
        for j in range(self.cols):
            e[j] = 1.0
            out[:, j] = self.matvec(e)
            e[j] = 0.0
        return out


class DiagonalOperator(LinearOperator):
    """Symmetric operator ``x -> diag * x`` with a strictly stored diagonal."""

    __slots__ = ("diag",)

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float)
        if diag.ndim != 1 or diag.size == 0:
            raise ArgumentError("diagonal must be a nonempty 1-d array")
        apply = lambda x: diag * x
        super().__init__(diag.size, diag.size, apply, apply)
        self.diag = diag


def identity_operator(n):
    ident = lambda x: np.array(x, dtype=float)
    return LinearOperator(n, n, ident, ident)


def zero_operator(n):
    zero = lambda x: np.zeros(n)
    return LinearOperator(n, n, zero, zero)


def aslinop(obj):
    """Coerce an array, sparse matrix, or operator to :class:`LinearOperator`."""
    if isinstance(obj, LinearOperator):
        return obj
    return LinearOperator.from_matrix(obj)


# ---------------------------------------------------------------------------
# grids and covariance kernels


@dataclass(frozen=True)
class Grid:
    """Regular 2-d pixel grid.

    Pixel centers are scaled so that the longer side of the physical extent
    spans the unit interval; kernel length scales are therefore relative to
    a unit-square domain.  Points are ordered row-major (y index outermost),
    matching C-order flattening of an ``(ny, nx)`` image.
    """

    nx: int
    ny: int
    spacing: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ArgumentError("grid dimensions must be at least 1")
        hx, hy = self.spacing
        if hx <= 0 or hy <= 0:
            raise ArgumentError("grid spacing must be positive")

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def scale(self):
        hx, hy = self.spacing
        return 1.0 / max(self.nx * hx, self.ny * hy)

    def points(self):
        hx, hy = self.spacing
        s = self.scale
        xs = (np.arange(self.nx) + 0.5) * hx * s
        ys = (np.arange(self.ny) + 0.5) * hy * s
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def diameter(self):
        hx, hy = self.spacing
        s = self.scale
        return float(np.hypot(self.nx * hx * s, self.ny * hy * s))


_FAMILIES = (
    "squared-exponential",
    "matern",
    "gamma-exponential",
    "rational-quadratic",
    "sinc",
)


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic covariance kernel family with its shape parameters.

    ``ell`` is the length scale (unused by ``sinc``), ``nu`` the smoothness
    or shape parameter (unused by ``squared-exponential`` and
    ``gamma-exponential``), and ``gamma_exp`` the exponent of the
    gamma-exponential family.
    """

    family: str
    ell: float = 1.0
    nu: float = 1.0
    gamma_exp: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ParameterDomainError(
                f"unknown kernel family {self.family!r}; choose from {_FAMILIES}"
            )
        if not self.ell > 0:
            raise ParameterDomainError("kernel length scale ell must be positive")
        if self.family in ("matern", "rational-quadratic", "sinc") and not self.nu > 0:
            raise ParameterDomainError(f"{self.family} kernel requires nu > 0")
        if self.family == "gamma-exponential" and not 0 < self.gamma_exp <= 2:
            raise ParameterDomainError("gamma-exponential exponent must lie in (0, 2]")


def _matern_closed(nu, x):
    """Half-integer Matern profiles in x = sqrt(2 nu) r / ell, or None."""
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    return None


def _matern_debye(nu, xp):
    """log K_nu at large order via the two-term uniform asymptotic series."""
    z = xp / nu
    s = np.sqrt(1.0 + z * z)
    eta = s + np.log(z / (1.0 + s))
    t = 1.0 / s
    u1 = (3.0 * t - 5.0 * t**3) / 24.0
    u2 = (81.0 * t**2 - 462.0 * t**4 + 385.0 * t**6) / 1152.0
    return (0.5 * np.log(np.pi / (2.0 * nu)) - 0.25 * np.log1p(z * z)
            - nu * eta + np.log1p(-u1 / nu + u2 / nu**2))


def _matern_bessel(nu, x):
    """General-nu Matern profile via the modified Bessel function.

    Evaluated in log space with the exponentially scaled ``kve`` so that
    large x does not overflow before cancelling.  kve itself overflows at
    large order or very small argument, so nu > 120 switches to the uniform
    asymptotic expansion of K_nu (relative error O(1/nu^2)), and overflowed
    small-x entries at moderate nu use the quadratic small-argument series
    (those entries satisfy x < 0.35 and nu > 25, where the series truncation
    is below 1e-10).
    """
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    pos = x > 1e-10
    xp = x[pos]
    if nu > 120.0:
        log_k = _matern_debye(nu, xp)
        vals = np.exp(nu * np.log(xp) + log_k - (nu - 1.0) * np.log(2.0)
                      - gammaln(nu))
    else:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            log_k = np.log(kve(nu, xp)) - xp
            vals = np.exp(nu * np.log(xp) + log_k - (nu - 1.0) * np.log(2.0)
                          - gammaln(nu))
        bad = ~np.isfinite(vals)
        if np.any(bad):
            xb = xp[bad]
            vals[bad] = 1.0 - xb * xb / (4.0 * (nu - 1.0))
    # log-space roundoff and the truncated asymptotic series can overshoot
    # the exact profile bound kappa <= 1 by ~1e-13 near x = 0
    np.minimum(vals, 1.0, out=vals)
    out[pos] = vals
    return out


def kernel_eval(spec, r):
    """Evaluate the kernel profile kappa(r) at nonnegative distances.

    Returns values in (0, 1] for all families except ``sinc``, whose range
    is [-1, 1]; kappa(0) = 1 for every family.
    """
    scalar = np.isscalar(r)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ArgumentError("distances must be nonnegative")
    if spec.family == "squared-exponential":
        out = np.exp(-(r * r) / (2.0 * spec.ell**2))
    elif spec.family == "gamma-exponential":
        out = np.exp(-((r / spec.ell) ** spec.gamma_exp))
    elif spec.family == "rational-quadratic":
        out = (1.0 + (r * r) / (2.0 * spec.nu * spec.ell**2)) ** (-spec.nu)
    elif spec.family == "sinc":
        # np.sinc(z) = sin(pi z) / (pi z), so sin(nu r)/(nu r) = sinc(nu r / pi)
        out = np.sinc(spec.nu * r / np.pi)
    else:
        x = np.sqrt(2.0 * spec.nu) * r / spec.ell
        closed = _matern_closed(spec.nu, x)
        out = closed if closed is not None else _matern_bessel(spec.nu, x)
    return float(out) if scalar else out


def _distance_matrix(points):
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2, out=d2)


def grid_distances(grid):
    """Pairwise distance matrix of the grid points; reusable across kernels."""
    return _distance_matrix(grid.points())


def build_kernel_operator(spec, grid, cap=DENSE_KERNEL_CAP, dists=None):
    """Build the symmetric covariance operator K[i, j] = kappa(|z_i - z_j|).

    The operator is dense-backed; grids with more than ``cap`` points raise
    :class:`CapacityError` and need a structured (for example FFT-embedded)
    application supplied as a custom :class:`LinearOperator`.  Pass ``dists``
    (from :func:`grid_distances`) to amortize the distance matrix over many
    kernel evaluations.
    """
    n = grid.n
    if n > cap:
        raise CapacityError(
            f"grid has {n} points, above the dense kernel cap {cap}; supply a "
            "structured matrix-free operator for larger grids"
        )
    if dists is None:
        dists = _distance_matrix(grid.points())
    elif dists.shape != (n, n):
        raise ArgumentError("distance matrix does not match the grid")
    K = kernel_eval(spec, dists)
    np.fill_diagonal(K, 1.0)
    return LinearOperator(n, n, K.dot, K.dot, mat=K)


# ---------------------------------------------------------------------------
# sample covariance factor


class SampleFactor:
    """Centered, 1/N-scaled sample factor S with Qhat = S S^T.

    Column j holds (s_j - mean) / sqrt(N).  The estimator uses the 1/N
    normalization throughout; callers wanting the unbiased 1/(N-1) variant
    can rescale the factor.  Applications go through the factor only, never
    through a densified Qhat; ``matvec_count`` tallies factor matvecs (two
    per application) so tests can assert that.
    """

    def __init__(self, factor, mean):
        self.factor = np.asarray(factor, dtype=float)
        self.mean = np.asarray(mean, dtype=float)
        if self.factor.ndim != 2 or self.mean.shape != (self.factor.shape[0],):
            raise ArgumentError("inconsistent factor and mean shapes")
        self.matvec_count = 0

    @property
    def dim(self):
        return self.factor.shape[0]

    @property
    def count(self):
        return self.factor.shape[1]

    def apply(self, x):
        """Apply Qhat = S S^T to a vector or to the columns of a matrix."""
        x = np.asarray(x, dtype=float)
        ncols = 1 if x.ndim == 1 else x.shape[1]
        self.matvec_count += 2 * ncols
        return self.factor @ (self.factor.T @ x)

    def operator(self):
        return LinearOperator(self.dim, self.dim, self.apply, self.apply)


def sample_covariance(samples):
    """Build the :class:`SampleFactor` of a list of equal-length sample vectors."""
    if len(samples) == 0:
        raise DegenerateDataError("empty sample set")
    cols = [np.asarray(s, dtype=float).ravel() for s in samples]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ArgumentError("samples must all have the same length")
    X = np.column_stack(cols)
    mean = X.mean(axis=1)
    S = (X - mean[:, None]) / np.sqrt(X.shape[1])
    return SampleFactor(S, mean)


# ---------------------------------------------------------------------------
# priors and noise


@dataclass
class PriorSpec:
    """Mixed Gaussian prior: mean mu and covariance gamma Q1 + (1 - gamma) Q2.

    Q1 must be symmetric positive definite (it induces the inner product of
    the bidiagonalization); Q2 only needs to be symmetric positive
    semidefinite.  ``gamma_mode`` is either ``"estimated"`` (the selection
    searches gamma) or ``"fixed"`` (``gamma`` holds the value).
    """

    mean: np.ndarray
    q1: LinearOperator
    q2: LinearOperator
    gamma_mode: str = "estimated"
    gamma: float = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        n = self.mean.size
        if self.q1.shape != (n, n) or self.q2.shape != (n, n):
            raise ArgumentError("prior covariance shapes do not match the mean")
        if self.gamma_mode not in ("estimated", "fixed"):
            raise ArgumentError("gamma_mode must be 'estimated' or 'fixed'")
        if self.gamma_mode == "fixed":
            if self.gamma is None or not 0 < self.gamma <= 1:
                raise ParameterDomainError("fixed gamma must lie in (0, 1]")

    @property
    def n(self):
        return self.mean.size


def mixed_apply(prior, gamma, x):
    """Apply gamma Q1 + (1 - gamma) Q2; gamma = 1 applies Q1 exactly."""
    if not 0 < gamma <= 1:
        raise ParameterDomainError("gamma must lie in (0, 1]")
    if gamma == 1.0:
        return prior.q1.matvec(x)
    return gamma * prior.q1.matvec(x) + (1.0 - gamma) * prior.q2.matvec(x)


def mixed_operator(prior, gamma):
    apply = lambda x: mixed_apply(prior, gamma, x)
    return LinearOperator(prior.n, prior.n, apply, apply)


def noise_whitener(r, size=None):
    """Split a diagonal noise covariance R into (Rinv, L_R) operators.

    ``r`` is a scalar variance (requires ``size``) or a 1-d array of
    diagonal entries.  L_R satisfies L_R^T L_R = R^{-1}; for diagonal R it
    is diag(1/sqrt(r)).
    """
    if np.isscalar(r):
        if size is None:
            raise ArgumentError("scalar noise variance needs an explicit size")
        diag = np.full(int(size), float(r))
    elif isinstance(r, DiagonalOperator):
        diag = r.diag
    else:
        diag = np.asarray(r, dtype=float)
        if diag.ndim != 1:
            raise ArgumentError("noise covariance must be scalar or diagonal")
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise DefinitenessError("noise covariance diagonal must be positive")
    return DiagonalOperator(1.0 / diag), DiagonalOperator(1.0 / np.sqrt(diag))


# ---------------------------------------------------------------------------
# MatrixMarket I/O (dense arrays use the array format, sparse the coordinate
# format; vectors are stored as n x 1 arrays)


def save_matrix(path, mat):
    if sp.issparse(mat):
        scipy.io.mmwrite(str(path), mat.tocoo())
    else:
        scipy.io.mmwrite(str(path), np.atleast_2d(np.asarray(mat, dtype=float)))


def load_matrix(path):
    mat = scipy.io.mmread(str(path))
    return mat.tocsr() if sp.issparse(mat) else np.asarray(mat, dtype=float)


def save_vector(path, vec):
    vec = np.asarray(vec, dtype=float).ravel()
    scipy.io.mmwrite(str(path), vec[:, None])


def load_vector(path):
    mat = load_matrix(path)
    if sp.issparse(mat):
        mat = mat.toarray()
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 2 and 1 not in arr.shape:
        raise ArgumentError(f"{path} does not hold a vector")
    return arr.ravel()


def load_samples(path):
    """Load sample vectors from a directory of *.mtx files or a single matrix.

    A directory is read in sorted filename order, one vector per file; a
    single file is read as a matrix whose columns are the samples.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.mtx"))
        if not files:
            raise DegenerateDataError(f"no .mtx sample files in {p}")
        return [load_vector(f) for f in files]
    mat = load_matrix(p)
    if sp.issparse(mat):
        mat = mat.toarray()
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ArgumentError(f"{p} does not hold a sample matrix")
    return [mat[:, j] for j in range(mat.shape[1])]
