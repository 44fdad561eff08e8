"""Sequence/matrix containers and the shared linear-algebra kernels.

An image sequence is a dense ``(rows, cols, channels, time)`` array.  All
reconstruction code works on its flattened matrix form, where every pixel is
a row and every (channel, time) pair is a column:

    row index    u = i + j * rows
    column index v = l + k * time        (time-major inside each channel block)

so each channel occupies a contiguous block of ``time`` columns.  The time
difference / second-difference stencils below act on that block structure
directly and are never materialised as dense (ct x ct) matrices.

Everything here is a pure function of its inputs (float64 throughout), so
concurrent calls are safe; results are deterministic for a fixed BLAS thread
count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageSequence",
    "DataMatrix",
    "ObservationMask",
    "reshape_to_matrix",
    "reshape_to_sequence",
    "temporal_diff",
    "temporal_laplacian",
    "soft_threshold",
    "svt",
    "economy_svd",
    "nuclear_norm",
    "spectral_norm_est",
]

# Tall/wide aspect ratio beyond which economy_svd switches to the Gram-matrix
# eigendecomposition instead of a direct LAPACK SVD.
_GRAM_RATIO = 4


@dataclass(frozen=True)
class ImageSequence:
    """A (rows, cols, channels, time) stack of frames.

    Ingested data is normalized into [0, 1]; reconstructions may exceed that
    range slightly and are clipped only on export/scoring.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(
                f"expected 4 axes (rows, cols, channels, time), got shape {arr.shape}"
            )
        if arr.size == 0:
            raise ValueError("empty image sequence")
        if not np.isfinite(arr).all():
            raise ValueError("image sequence contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def times(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class DataMatrix:
    """Matrix form of an image sequence: (rows*cols, channels*time)."""

    values: np.ndarray
    dims: tuple[int, int, int, int]

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        m, n, c, t = self.dims
        if arr.shape != (m * n, c * t):
            raise ValueError(
                f"matrix shape {arr.shape} inconsistent with dims {self.dims}"
            )
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "dims", (int(m), int(n), int(c), int(t)))

    @property
    def channels(self) -> int:
        return self.dims[2]

    @property
    def times(self) -> int:
        return self.dims[3]


@dataclass(frozen=True)
class ObservationMask:
    """Boolean (rows, cols, time) field; True marks a non-occluded entry.

    Masks are per pixel and time; occlusion is assumed to hit every channel
    of a pixel at once, so the matrix form broadcasts across channels.
    """

    observed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.observed)
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        if arr.ndim != 3:
            raise ValueError(f"expected (rows, cols, time) mask, got shape {arr.shape}")
        object.__setattr__(self, "observed", arr)

    @property
    def count(self) -> int:
        return int(self.observed.sum())

    def to_matrix(self, channels: int = 1) -> np.ndarray:
        """Broadcast to the (rows*cols, channels*time) column convention."""
        m, n, t = self.observed.shape
        rows = self.observed.transpose(1, 0, 2).reshape(m * n, t)
        return np.tile(rows, (1, channels))


def reshape_to_matrix(seq: ImageSequence) -> DataMatrix:
    """Flatten a sequence to its matrix form (bit-exact, pure reindexing)."""
    m, n, c, t = seq.dims
    values = seq.data.transpose(1, 0, 2, 3).reshape(m * n, c * t)
    return DataMatrix(np.ascontiguousarray(values), (m, n, c, t))


def reshape_to_sequence(mat: DataMatrix) -> ImageSequence:
    """Exact inverse of :func:`reshape_to_matrix`."""
    m, n, c, t = mat.dims
    data = mat.values.reshape(n, m, c, t).transpose(1, 0, 2, 3)
    return ImageSequence(np.ascontiguousarray(data))


def _matrix_and_channels(x, channels):
    if isinstance(x, DataMatrix):
        return x.values, x.channels
    return np.asarray(x, dtype=np.float64), channels


def temporal_diff(x, channels: int = 1) -> np.ndarray:
    """Columnwise forward time differences inside each channel block.

    Output column l of channel block k is x[:, k*t + l] - x[:, k*t + l - 1]
    for l >= 1 and zero for l = 0, so the squared Frobenius norm of the
    result is the sum of squared consecutive-frame differences.
    """
    values, channels = _matrix_and_channels(x, channels)
    rows, cols = values.shape
    if cols % channels:
        raise ValueError(f"{cols} columns not divisible by {channels} channels")
    t = cols // channels
    v = values.reshape(rows, channels, t)
    d = np.zeros_like(v)
    if t > 1:
        d[:, :, 1:] = v[:, :, 1:] - v[:, :, :-1]
    return d.reshape(rows, cols)


def temporal_laplacian(x, channels: int = 1):
    """Gradient of ``0.5 * ||temporal_diff(x)||_F**2`` with respect to x.

    Applies the path-graph second-difference stencil along time in each
    channel block (spectral norm < 4).  Returns a DataMatrix when given one.
    """
    values, nchan = _matrix_and_channels(x, channels)
    rows, cols = values.shape
    if cols % nchan:
        raise ValueError(f"{cols} columns not divisible by {nchan} channels")
    t = cols // nchan
    d = temporal_diff(values, nchan).reshape(rows, nchan, t)
    g = np.empty_like(d)
    g[:, :, -1] = d[:, :, -1]
    if t > 1:
        g[:, :, :-1] = d[:, :, :-1] - d[:, :, 1:]
    out = g.reshape(rows, cols)
    if isinstance(x, DataMatrix):
        return DataMatrix(out, x.dims)
    return out


def soft_threshold(x, lam: float) -> np.ndarray:
    """Elementwise shrinkage sign(x) * max(|x| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def economy_svd(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``x = U @ diag(s) @ Vt`` with min(rows, cols) triplets.

    For strongly rectangular inputs the decomposition goes through the small
    Gram matrix (eigendecomposition of X^T X), which is much faster for tall
    matrices at the cost of a squared condition number; components below
    ~1e-13 of the largest singular value come back as zero columns.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in SVD input")
    rows, cols = x.shape
    if rows >= _GRAM_RATIO * cols:
        return _gram_svd(x)
    if cols >= _GRAM_RATIO * rows:
        u, s, vt = _gram_svd(x.T)
        return vt.T, s, u.T
    return np.linalg.svd(x, full_matrices=False)


def _gram_svd(x):
    # rows >= cols; right singular vectors from the (cols x cols) Gram matrix
    w, q = np.linalg.eigh(x.T @ x)
    w = w[::-1]
    q = q[:, ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    u = np.zeros((x.shape[0], x.shape[1]))
    if s[0] > 0.0:
        keep = s > 1e-13 * s[0]
        u[:, keep] = (x @ q[:, keep]) / s[keep]
    return u, s, q.T


def svt(x, eta: float, return_singular_values: bool = False):
    """Singular value thresholding: shrink every singular value by eta.

    Minimizer of ``eta * ||Z||_* + 0.5 * ||Z - x||_F**2``.
    """
    if eta < 0:
        raise ValueError(f"threshold must be nonnegative, got {eta}")
    try:
        u, s, vt = economy_svd(x)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK hiccup
        raise np.linalg.LinAlgError(f"SVD did not converge in svt: {exc}") from exc
    s_shrunk = np.maximum(s - eta, 0.0)
    k = int(np.count_nonzero(s_shrunk))
    out = (u[:, :k] * s_shrunk[:k]) @ vt[:k]
    if return_singular_values:
        return out, s_shrunk
    return out


def nuclear_norm(x) -> float:
    """Sum of singular values."""
    return float(economy_svd(x)[1].sum())


def spectral_norm_est(x, max_iter: int = 100, tol: float = 1e-10) -> float:
    """Largest singular value estimated by power iteration (deterministic)."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(x.shape[1])
    nv = np.linalg.norm(v)
    if nv == 0.0 or x.size == 0:
        return 0.0
    v /= nv
    sigma = 0.0
    for _ in range(max_iter):
        w = x @ v
        sigma_new = np.linalg.norm(w)  # ||v|| == 1, so this is the Rayleigh estimate
        if sigma_new == 0.0:
            return 0.0
        v = x.T @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1e-30):
            return float(sigma_new)
        sigma = sigma_new
    return float(sigma)
