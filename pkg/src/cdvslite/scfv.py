"""Scalable compressed Fisher vector (SCFV) aggregation.

PCA to 32 dimensions, diagonal-GMM soft assignment, first- and second-order
Fisher gradients, per-Gaussian ranking by gradient spread and sign
binarization of the selected components.

Two interchangeable kernel families are provided: per-descriptor loops
(``*_naive``) and whole-batch matrix products (``*_matrix``). They agree to
floating point round-off; the matrix path is the fast one.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .compress import MODES, mode_index

PCA_DIM = 32
SIGMA_FLOOR = 1e-3
# fraction of Gaussians kept per mode; 512B -> 32 ... 16K -> 512 at N = 512
MODE_FRACTIONS = {"512B": 1 / 16, "1K": 1 / 8, "2K": 1 / 4, "4K": 1 / 2, "8K": 3 / 4, "16K": 1.0}
VARIANCE_BITS_FROM = "8K"
_LOG_2PI = math.log(2.0 * math.pi)


class ModelMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (PCA_DIM, D), orthonormal rows

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise ValueError("basis and mean dimensions disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)


@dataclass(frozen=True)
class GMMModel:
    weights: np.ndarray  # (N,)
    means: np.ndarray  # (N, d)
    sigmas: np.ndarray  # (N, d) diagonal standard deviations

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        sd = np.asarray(self.sigmas, dtype=np.float64)
        if mu.ndim != 2 or sd.shape != mu.shape or w.shape != (mu.shape[0],):
            raise ValueError("inconsistent GMM parameter shapes")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("GMM weights must be positive and sum to 1")
        if np.any(sd <= 0):
            raise ValueError("GMM standard deviations must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "sigmas", sd)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def fingerprint(self) -> int:
        h = zlib.crc32(self.weights.tobytes())
        h = zlib.crc32(self.means.tobytes(), h)
        return zlib.crc32(self.sigmas.tobytes(), h)


def pca_reduce(raws, pca: PCAModel) -> np.ndarray:
    R = np.asarray([getattr(r, "values", r) for r in raws], dtype=np.float64)
    if R.size == 0:
        return np.zeros((0, pca.basis.shape[0]))
    return (R - pca.mean) @ pca.basis.T


def train_pca(corpus, dim: int = PCA_DIM) -> PCAModel:
    X = np.asarray(corpus, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected an (n, D) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite training data")
    n, D = X.shape
    if n < 10 * D:
        raise ValueError(f"need at least {10 * D} samples, got {n}")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dim]
    basis = evecs[:, order].T.copy()
    # deterministic sign: largest-magnitude entry of each row positive
    idx = np.argmax(np.abs(basis), axis=1)
    basis *= np.sign(basis[np.arange(dim), idx])[:, None]
    return PCAModel(mean, basis)


def _log_gauss_constants(gmm: GMMModel) -> np.ndarray:
    return np.log(gmm.weights) - np.log(gmm.sigmas).sum(axis=1) - 0.5 * gmm.dim * _LOG_2PI


def _check_shapes(X, gmm: GMMModel):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != gmm.dim:
        raise ValueError(f"descriptor matrix {X.shape} does not match GMM dimension {gmm.dim}")
    return X


def posteriors_naive(X, gmm: GMMModel) -> np.ndarray:
    """Soft assignments, one descriptor at a time."""
    X = _check_shapes(X, gmm)
    const = _log_gauss_constants(gmm)
    gamma = np.empty((X.shape[0], gmm.n_components))
    for t in range(X.shape[0]):
        z = (X[t] - gmm.means) / gmm.sigmas
        logp = const - 0.5 * np.sum(z * z, axis=1)
        logp -= logp.max()
        e = np.exp(logp)
        gamma[t] = e / e.sum()
    return gamma


def _fv_scale(gmm: GMMModel, n: int) -> np.ndarray:
    return 1.0 / (max(n, 1) * np.sqrt(gmm.weights))


def fv_mean_naive(X, gamma, gmm: GMMModel) -> np.ndarray:
    X = _check_shapes(X, gmm)
    gm = np.zeros((gmm.n_components, gmm.dim))
    for t in range(X.shape[0]):
        gm += gamma[t][:, None] * (X[t] - gmm.means) / gmm.sigmas
    return gm * _fv_scale(gmm, X.shape[0])[:, None]


def fv_var_naive(X, gamma, gmm: GMMModel) -> np.ndarray:
    X = _check_shapes(X, gmm)
    gv = np.zeros((gmm.n_components, gmm.dim))
    for t in range(X.shape[0]):
        z = (X[t] - gmm.means) / gmm.sigmas
        gv += gamma[t][:, None] * (z * z - 1.0)
    return gv * _fv_scale(gmm, X.shape[0])[:, None]


def mahalanobis_matrix(X, gmm: GMMModel) -> np.ndarray:
    """P = (D.*D)(1./V)^T - 2 D (M./V)^T + O ((M.*M)./V)^T with V the variances."""
    D = _check_shapes(X, gmm)
    M = gmm.means
    V = gmm.sigmas**2
    O = np.ones_like(D)
    return (D * D) @ (1.0 / V).T - 2.0 * D @ (M / V).T + O @ ((M * M) / V).T


def posteriors_matrix(X, gmm: GMMModel) -> tuple[np.ndarray, np.ndarray]:
    """Returns (P, gamma)."""
    P = mahalanobis_matrix(X, gmm)
    logp = _log_gauss_constants(gmm)[None, :] - 0.5 * P
    gamma = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return P, gamma


def fv_mean_matrix(X, gamma, gmm: GMMModel) -> np.ndarray:
    """GM = (Q^T D - Q^T O .* M) ./ S, scaled by 1 / (n sqrt(w))."""
    D = _check_shapes(X, gmm)
    Q = np.asarray(gamma, dtype=np.float64)
    if Q.shape != (D.shape[0], gmm.n_components):
        raise ValueError("posterior matrix shape mismatch")
    S = gmm.sigmas
    O = np.ones_like(D)
    gm = (Q.T @ D - (Q.T @ O) * gmm.means) / S
    return gm * _fv_scale(gmm, D.shape[0])[:, None]


def fv_var_matrix(X, gamma, gmm: GMMModel) -> np.ndarray:
    """GV = (Q^T (D.*D) - Q^T D .* 2M + Q^T O .* (M.*M - S.*S)) ./ (S.*S), same scaling."""
    D = _check_shapes(X, gmm)
    Q = np.asarray(gamma, dtype=np.float64)
    if Q.shape != (D.shape[0], gmm.n_components):
        raise ValueError("posterior matrix shape mismatch")
    M, S = gmm.means, gmm.sigmas
    O = np.ones_like(D)
    QtD = Q.T @ D
    gv = (Q.T @ (D * D) - QtD * (2.0 * M) + (Q.T @ O) * (M * M - S * S)) / (S * S)
    return gv * _fv_scale(gmm, D.shape[0])[:, None]


def fisher_gradients(X, gmm: GMMModel, method: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64).reshape(-1, gmm.dim)
    if method == "matrix":
        _, gamma = posteriors_matrix(X, gmm)
        return fv_mean_matrix(X, gamma, gmm), fv_var_matrix(X, gamma, gmm)
    if method == "naive":
        gamma = posteriors_naive(X, gmm)
        return fv_mean_naive(X, gamma, gmm), fv_var_naive(X, gamma, gmm)
    raise ValueError(f"unknown method {method!r}")


def components_for_mode(mode: str, n_components: int) -> int:
    mode_index(mode)
    return max(1, min(n_components, int(round(MODE_FRACTIONS[mode] * n_components))))


def has_variance_bits(mode: str) -> bool:
    return mode_index(mode) >= mode_index(VARIANCE_BITS_FROM)


def gradient_spread(GM: np.ndarray) -> np.ndarray:
    """Population standard deviation of each Gaussian's mean-gradient vector."""
    GM = np.asarray(GM, dtype=np.float64)
    centred = GM - GM.mean(axis=1, keepdims=True)
    return np.sqrt(np.mean(centred * centred, axis=1))


@dataclass(frozen=True)
class SCFVDescriptor:
    mask: np.ndarray  # (N,) bool
    mean_bits: np.ndarray  # (K, d) bool, rows in ascending component order
    var_bits: np.ndarray | None  # (K, d) bool or None
    delta: np.ndarray | None = None  # (N,) per-Gaussian spread, in-memory only
    gmm_id: int = 0

    @property
    def n_selected(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other):
        if not isinstance(other, SCFVDescriptor):
            return NotImplemented
        if (self.var_bits is None) != (other.var_bits is None):
            return False
        return (
            self.gmm_id == other.gmm_id
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.mean_bits, other.mean_bits)
            and (self.var_bits is None or np.array_equal(self.var_bits, other.var_bits))
        )

    __hash__ = None


def scfv_encode(
    GM,
    GV,
    gmm: GMMModel | int,
    mode: str = "4K",
    n_select: int | None = None,
    with_variance: bool | None = None,
) -> SCFVDescriptor:
    """Rank Gaussians by gradient spread, keep the top ones and binarize their gradients."""
    GM = np.asarray(GM, dtype=np.float64)
    N = GM.shape[0]
    gmm_id = gmm.fingerprint() if isinstance(gmm, GMMModel) else int(gmm)
    K = n_select if n_select is not None else components_for_mode(mode, N)
    K = max(0, min(K, N))
    delta = gradient_spread(GM)
    order = np.lexsort((np.arange(N), -delta))  # spread descending, index ascending
    mask = np.zeros(N, dtype=bool)
    mask[order[:K]] = True
    sel = np.nonzero(mask)[0]
    mean_bits = GM[sel] >= 0
    if with_variance is None:
        with_variance = has_variance_bits(mode)
    var_bits = None
    if with_variance:
        var_bits = np.asarray(GV, dtype=np.float64)[sel] >= 0
    return SCFVDescriptor(mask, mean_bits, var_bits, delta, gmm_id)


def _component_bits(desc: SCFVDescriptor, with_var: bool) -> np.ndarray:
    if with_var:
        return np.concatenate([desc.mean_bits, desc.var_bits], axis=1)
    return desc.mean_bits


def scfv_similarity(a: SCFVDescriptor, b: SCFVDescriptor) -> float:
    """Mean sign agreement over Gaussians selected in both descriptors; -1 with none in common."""
    if a.gmm_id != b.gmm_id or a.mask.shape != b.mask.shape:
        raise ModelMismatch("descriptors come from different GMMs")
    common = a.mask & b.mask
    n_common = int(common.sum())
    if n_common == 0:
        return -1.0
    with_var = a.var_bits is not None and b.var_bits is not None
    ra = np.cumsum(a.mask) - 1
    rb = np.cumsum(b.mask) - 1
    idx = np.nonzero(common)[0]
    bits_a = _component_bits(a, with_var)[ra[idx]]
    bits_b = _component_bits(b, with_var)[rb[idx]]
    nbits = bits_a.shape[1]
    hamming = int(np.count_nonzero(bits_a != bits_b))
    return float(nbits * n_common - 2 * hamming) / float(nbits * n_common)


def scfv_to_bytes(desc: SCFVDescriptor) -> bytes:
    """Mask bits, then mean sign planes, then variance sign planes (if any); MSB first."""
    parts = [np.packbits(desc.mask).tobytes(), np.packbits(desc.mean_bits.reshape(-1)).tobytes()]
    if desc.var_bits is not None:
        parts.append(np.packbits(desc.var_bits.reshape(-1)).tobytes())
    return b"".join(parts)


def scfv_nbytes(n_components: int, dim: int, mode: str) -> int:
    K = components_for_mode(mode, n_components)
    planes = 2 if has_variance_bits(mode) else 1
    return (n_components + 7) // 8 + planes * ((K * dim + 7) // 8)


def scfv_from_bytes(data: bytes, n_components: int, dim: int, mode: str, gmm_id: int = 0) -> SCFVDescriptor:
    mlen = (n_components + 7) // 8
    if len(data) < mlen:
        raise ValueError("global descriptor shorter than its mask")
    mask = np.unpackbits(np.frombuffer(data[:mlen], dtype=np.uint8))[:n_components].astype(bool)
    K = int(mask.sum())
    plane = (K * dim + 7) // 8
    with_var = has_variance_bits(mode)
    if len(data) != mlen + plane * (2 if with_var else 1):
        raise ValueError("global descriptor length does not match its mask")
    bits = np.unpackbits(np.frombuffer(data[mlen:], dtype=np.uint8))
    mean_bits = bits[: K * dim].reshape(K, dim).astype(bool)
    var_bits = None
    if with_var:
        var_bits = bits[plane * 8 : plane * 8 + K * dim].reshape(K, dim).astype(bool)
    return SCFVDescriptor(mask, mean_bits, var_bits, None, gmm_id)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centres[j] = X[rng.integers(n)]
        else:
            centres[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centres[j]) ** 2, axis=1))
    return centres


def gmm_log_likelihood(X, gmm: GMMModel) -> float:
    X = _check_shapes(X, gmm)
    logp = _log_gauss_constants(gmm)[None, :] - 0.5 * mahalanobis_matrix(X, gmm)
    return float(logsumexp(logp, axis=1).sum())


def train_gmm(
    corpus,
    n_components: int,
    iters: int = 50,
    seed: int = 0,
    sigma_floor: float = SIGMA_FLOOR,
    tol: float = 0.0,
    return_history: bool = False,
):
    """Diagonal GMM by EM from a k-means++ start. Deterministic for a given seed."""
    X = np.asarray(corpus, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected an (n, d) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite training data")
    n, d = X.shape
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n < 10 * d or n < n_components:
        raise ValueError(f"need at least {max(10 * d, n_components)} samples, got {n}")
    rng = np.random.default_rng(seed)
    means = _kmeans_pp(X, n_components, rng)
    assign = np.argmin(
        np.sum(X * X, axis=1)[:, None] - 2.0 * X @ means.T + np.sum(means * means, axis=1)[None, :], axis=1
    )
    global_var = X.var(axis=0)
    weights = np.empty(n_components)
    var = np.empty((n_components, d))
    for j in range(n_components):
        members = X[assign == j]
        weights[j] = max(len(members), 1)
        var[j] = members.var(axis=0) if len(members) > 1 else global_var
    weights /= weights.sum()
    floor2 = sigma_floor**2
    gmm = GMMModel(weights, means, np.sqrt(np.maximum(var, floor2)))
    history = []
    for _ in range(iters):
        P = mahalanobis_matrix(X, gmm)
        logp = _log_gauss_constants(gmm)[None, :] - 0.5 * P
        lse = logsumexp(logp, axis=1, keepdims=True)
        history.append(float(lse.sum()))
        gamma = np.exp(logp - lse)
        nk = gamma.sum(axis=0)
        alive = nk > 1e-10
        new_means = gmm.means.copy()
        new_var = gmm.sigmas**2
        new_means[alive] = (gamma[:, alive].T @ X) / nk[alive, None]
        ex2 = (gamma[:, alive].T @ (X * X)) / nk[alive, None]
        new_var[alive] = np.maximum(ex2 - new_means[alive] ** 2, floor2)
        w = np.maximum(nk / n, 1e-300)
        gmm = GMMModel(w / w.sum(), new_means, np.sqrt(new_var))
        if tol > 0 and len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            break
    history.append(gmm_log_likelihood(X, gmm))
    return (gmm, history) if return_history else gmm
