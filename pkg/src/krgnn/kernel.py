"""Kernel-regression (KR) loss: Gram matrix, spectral projector, estimators.

``kr_loss_exact`` measures how far each target column lies from the image of
the RBF Gram matrix of the conditioning samples,

    rho(Y|X) = (1/m) * sum_i n^(-1/p) * ||(I - P) y_i||_p,

where ``P`` projects onto the numerically nonzero eigenvectors of ``K``.
``kr_loss_ridge`` replaces ``I - P`` with ``I - K (K + n*lam*I)^-1`` so the
loss is a smooth function of both sample sets; its backward pass uses
linear solves only.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .autodiff import DiffValue, as_diff, make_node
from .errors import DegenerateInputError, InvalidArgumentError, SingularSystemError

SIGMA_RULES = ("median", "median-dim")


@dataclass(frozen=True)
class KernelConfig:
    """Estimator settings.

    ``sigma`` is a positive float or a rule name: ``"median"`` (median pairwise
    distance of the conditioning samples) or ``"median-dim"`` (that median
    times sqrt of the feature dimension; identical to ``"median"`` in 1-D).
    Rule-derived bandwidths are differentiated through: the median is a
    particular pairwise distance (or the mean of two), so the ridge loss stays
    invariant to rescaling the conditioning samples in its gradient too.
    """

    sigma: object = "median"
    p: float = 2.0
    eps_rank: float = 1e-6
    lambda_ridge: float = 1e-4

    def __post_init__(self):
        if isinstance(self.sigma, str):
            if self.sigma not in SIGMA_RULES:
                raise InvalidArgumentError(
                    f"sigma must be a positive number or one of {SIGMA_RULES}, got {self.sigma!r}")
        elif not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")
        if not self.p >= 1:
            raise InvalidArgumentError(f"p must be >= 1, got {self.p}")
        if not self.eps_rank >= 0:
            raise InvalidArgumentError(f"eps_rank must be >= 0, got {self.eps_rank}")
        if not self.lambda_ridge >= 0:
            raise InvalidArgumentError(f"lambda_ridge must be >= 0, got {self.lambda_ridge}")

    def with_(self, **changes):
        return replace(self, **changes)


def as_samples(x, name="x"):
    """Coerce to an n x d float matrix (1-D input becomes one column)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must be an n x d matrix with n >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return x


def rbf_gram(x, sigma):
    """K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2)); symmetric with exact unit diagonal."""
    if isinstance(sigma, (str, bytes)) or not (np.isscalar(sigma) and np.isfinite(sigma) and sigma > 0):
        raise InvalidArgumentError(f"sigma must be a positive finite number, got {sigma!r}")
    x = as_samples(x)
    if x.shape[0] == 1:
        return np.ones((1, 1))
    sq = squareform(pdist(x, "sqeuclidean"))
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_bandwidth(x):
    """Median of the n(n-1)/2 pairwise Euclidean distances."""
    x = as_samples(x)
    if x.shape[0] < 2:
        raise DegenerateInputError("median bandwidth needs at least 2 samples")
    med = float(np.median(pdist(x)))
    if med <= 0:
        raise DegenerateInputError("median pairwise distance is zero (samples mostly identical)")
    return med


def _median_pairs(d, n, factor):
    """Median-rule bandwidth from condensed distances ``d``, with the
    (i, j, weight) pairs it is averaged from."""
    mid = d.size // 2
    kth = [mid] if d.size % 2 else [mid - 1, mid]
    order = np.argpartition(d, kth)
    picks = [order[k] for k in kth]
    rows, cols = np.triu_indices(n, k=1)
    w = factor / len(picks)
    return float(sum(d[k] for k in picks) * w), [(rows[k], cols[k], w) for k in picks]


def resolve_sigma(x, sigma):
    """Turn a bandwidth rule into a number for this sample set.

    Degenerate sets fall back gracefully: all-identical samples give 1.0 (the
    Gram matrix is all ones for any bandwidth) and a zero median with some
    distinct samples uses the median of the nonzero distances.
    """
    if not isinstance(sigma, str):
        return float(sigma)
    x = as_samples(x)
    if x.shape[0] < 2:
        return 1.0
    try:
        med = median_bandwidth(x)
    except DegenerateInputError:
        d = pdist(x)
        d = d[d > 0]
        med = float(np.median(d)) if d.size else 1.0
    if sigma == "median-dim":
        med *= np.sqrt(x.shape[1])
    return med


@dataclass(frozen=True)
class SpectralProjector:
    """Orthonormal basis of the retained eigenvectors plus the full spectrum (descending)."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def rank(self):
        return self.basis.shape[1]

    @property
    def matrix(self):
        return self.basis @ self.basis.T

    def project(self, y):
        return self.basis @ (self.basis.T @ y)

    def residual(self, y):
        y = np.asarray(y, dtype=np.float64)
        return y - self.project(y)


def spectral_projector(k_matrix, eps_rank=1e-6):
    k = np.asarray(k_matrix, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {k.shape}")
    scale = max(1.0, float(np.abs(k).max())) if k.size else 1.0
    if np.abs(k - k.T).max() > 1e-8 * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    if eps_rank < 0:
        raise InvalidArgumentError(f"eps_rank must be >= 0, got {eps_rank}")
    w, u = linalg.eigh(0.5 * (k + k.T))
    w, u = w[::-1], u[:, ::-1]
    keep = w > eps_rank * w[0] if w[0] > 0 else np.zeros_like(w, dtype=bool)
    return SpectralProjector(basis=u[:, keep].copy(), eigenvalues=w.copy())


def column_norms(r, p):
    return np.sum(np.abs(r) ** p, axis=0) ** (1.0 / p)


def kr_loss_exact(x, y, cfg=KernelConfig()):
    """Exact KR loss rho(Y|X): mean over target columns of the normalized
    L_p norm of the residual outside Im(K)."""
    x = as_samples(x, "x")
    y = as_samples(y, "y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise InvalidArgumentError(f"sample counts differ: x has {n}, y has {y.shape[0]}")
    if n == 1:
        return 0.0
    k = rbf_gram(x, resolve_sigma(x, cfg.sigma))
    proj = spectral_projector(k, cfg.eps_rank)
    norms = column_norms(proj.residual(y), cfg.p) / n ** (1.0 / cfg.p)
    return float(np.mean(norms))


def _ridge_forward(sq, yv, sigma, lam, eps_rank):
    n = yv.shape[0]
    k = np.exp(-sq / (2.0 * sigma * sigma))
    shift = n * lam
    a = k + shift * np.eye(n)
    if lam == 0:
        w = linalg.eigvalsh(k)
        if w[0] <= eps_rank * w[-1]:
            raise SingularSystemError(
                "lambda_ridge = 0 with a rank-deficient Gram matrix; use lambda_ridge > 0")
    try:
        factor = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"ridge system is not positive definite: {exc}") from exc
    beta = linalg.cho_solve(factor, yv, check_finite=False)
    resid = shift * beta if lam > 0 else yv - k @ beta
    return k, factor, beta, resid


def kr_loss_ridge(x, y, cfg=KernelConfig()):
    """Differentiable KR loss with p = 2:

        (1/m) * sum_i n^(-1/2) * ||(I - K (K + n*lam*I)^-1) y_i||_2

    ``x`` conditions (its Gram matrix), ``y`` is the target. Both may be
    DiffValues; gradients flow to each. Columns with zero residual contribute
    zero gradient.
    """
    x, y = as_diff(x), as_diff(y)
    xv = as_samples(x.value, "x")
    yv = as_samples(y.value, "y")
    n, m = yv.shape
    if xv.shape[0] != n:
        raise InvalidArgumentError(f"sample counts differ: x has {xv.shape[0]}, y has {n}")
    lam = float(cfg.lambda_ridge)
    d = pdist(xv) if n > 1 else np.zeros(0)
    sq = squareform(d * d) if n > 1 else np.zeros((1, 1))
    pairs = []
    if isinstance(cfg.sigma, str) and n > 1:
        scale = np.sqrt(xv.shape[1]) if cfg.sigma == "median-dim" else 1.0
        sigma, pairs = _median_pairs(d, n, scale)
        if sigma <= 0:
            sigma, pairs = resolve_sigma(xv, cfg.sigma), []
    else:
        sigma = resolve_sigma(xv, cfg.sigma)
    k, factor, beta, resid = _ridge_forward(sq, yv, sigma, lam, cfg.eps_rank)
    norms = np.sqrt(np.sum(resid * resid, axis=0))
    value = float(np.mean(norms)) / np.sqrt(n)
    x_shape, y_shape = x.shape, y.shape

    def vjp(g):
        g = float(g)
        safe = np.where(norms > 0, norms, 1.0)
        gr = np.where(norms > 0, resid / safe, 0.0) * (g / (m * np.sqrt(n)))
        # d resid = n*lam*A^-1 (dy - dK beta), A symmetric
        s = linalg.cho_solve(factor, gr, check_finite=False)
        if lam > 0:
            gy = n * lam * s
        else:
            gy = np.zeros_like(yv)
        gk = -(n * lam) * s @ beta.T if lam > 0 else np.zeros_like(k)
        gkk = gk * k
        gd = gkk * (-1.0 / (2.0 * sigma * sigma))
        gsym = gd + gd.T
        gx = 2.0 * (gsym.sum(axis=1)[:, None] * xv - gsym @ xv)
        if pairs:
            # K depends on sigma too: dK/dsigma = K * D / sigma^3
            g_sigma = float(np.sum(gkk * sq)) / sigma ** 3
            for i, j, w in pairs:
                diff = xv[i] - xv[j]
                dist = np.sqrt(diff @ diff)
                if dist > 0:
                    gx[i] += g_sigma * w * diff / dist
                    gx[j] -= g_sigma * w * diff / dist
        return gx.reshape(x_shape), gy.reshape(y_shape)

    return make_node(np.float64(value), (x, y), vjp, "kr_ridge")


def kr_loss_ridge_value(x, y, cfg=KernelConfig()):
    return float(kr_loss_ridge(DiffValue(x), DiffValue(y), cfg).value)
