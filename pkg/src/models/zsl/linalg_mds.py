"""
Classical MDS Module for the semantic feature expansion toolkit
Extracts the embedded manifold of seen-class centers through pairwise
distances, double centering and a symmetric eigendecomposition, and
registers that embedding onto the predefined prototypes
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from src.models.zsl.data_model import format_float
from src.models.zsl.exceptions import ConvergenceError, NonFiniteError, ShapeError, ValidationError

logger = logging.getLogger("ClassicalMDS")

SYMMETRY_TOL = 1e-12
EVD_SYMMETRY_TOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
RANK_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-9
REGISTRATION_TOL = 1e-10


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError(f"distance matrix must be square, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("distance matrix contains non-finite values")
        if np.any(values < 0):
            raise ValidationError("distances must be nonnegative")
        if np.any(np.diag(values) != 0):
            raise ValidationError("distance matrix diagonal must be zero")
        if np.max(np.abs(values - values.T), initial=0.0) > SYMMETRY_TOL:
            raise ValidationError("distance matrix is not symmetric")
        object.__setattr__(self, "values", values)

    @property
    def size(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError(f"Gram matrix must be square, got {values.shape}")
        if np.max(np.abs(values - values.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(values), initial=0.0)):
            raise ValidationError("Gram matrix is not symmetric")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class EmbeddedManifold:
    """
    Class-center embedding O

    Args:
        coords: (n+k)×m matrix, one column per seen class
        eigenvalues: descending, clamped to be nonnegative
        effective_rank: eigenvalues above the rank tolerance
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    effective_rank: int

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords))
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))

    @property
    def dim(self):
        return self.coords.shape[0]

    @property
    def n_classes(self):
        return self.coords.shape[1]


def pairwise_distance_matrix(centers):
    """
    Euclidean distance between every pair of class centers

    Args:
        centers (np.ndarray): m×d matrix

    Returns:
        DistanceMatrix
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 1:
        raise ShapeError(f"centers must be an m×d matrix with m ≥ 1, got {centers.shape}")
    if not np.all(np.isfinite(centers)):
        raise NonFiniteError("class centers contain non-finite values")
    m = centers.shape[0]
    values = np.empty((m, m))
    for i in range(m):
        values[i] = np.linalg.norm(centers - centers[i], axis=1)
    # norm(a - b) and norm(b - a) agree bit for bit, so this is exact
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(values)


def double_center(D):
    """
    Convert distances into the centered inner-product matrix
    b_ij = -1/2 (d²_ij - d²_i. - d²_.j + d²_..)

    Args:
        D (DistanceMatrix): Pairwise distances

    Returns:
        GramMatrix
    """
    squared = D.values ** 2
    row_means = squared.mean(axis=1)
    col_means = squared.mean(axis=0)
    grand_mean = squared.mean()
    B = -0.5 * (squared - row_means[:, None] - col_means[None, :] + grand_mean)
    return GramMatrix(0.5 * (B + B.T))


def _round_robin_rounds(m):
    """Pairings in which every index meets every other once per sweep."""
    players = list(range(m + (m % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < m and q < m]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_norm(A):
    return np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))


def symmetric_evd(A, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """
    Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations

    Each round applies a set of disjoint rotations at once. Eigenvalues come
    back in descending order; each eigenvector is signed so that its first
    entry of largest magnitude is nonnegative.

    Args:
        A (np.ndarray): m×m symmetric matrix
        tol (float): Stop once the off-diagonal norm is below tol·‖A‖_F
        max_sweeps (int): Sweep cap

    Returns:
        tuple: (eigenvalues, eigenvectors as columns)
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"matrix must be square, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("matrix contains non-finite values")
    scale = max(1.0, np.max(np.abs(A), initial=0.0))
    if np.max(np.abs(A - A.T), initial=0.0) > EVD_SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    m = A.shape[0]
    V = np.eye(m)
    threshold = tol * max(1.0, np.linalg.norm(A))

    rounds = _round_robin_rounds(m)
    sweeps = 0
    off = _off_diagonal_norm(A)
    while off > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi EVD did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3e})",
                residual=off,
            )
        for P, Q in rounds:
            apq = A[P, Q]
            app = A[P, P]
            aqq = A[Q, Q]
            active = apq != 0.0
            t = np.zeros_like(apq)
            tau = (aqq[active] - app[active]) / (2.0 * apq[active])
            sign = np.where(tau >= 0, 1.0, -1.0)
            t[active] = sign / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            cols_p = A[:, P].copy()
            cols_q = A[:, Q].copy()
            A[:, P] = cols_p * c - cols_q * s
            A[:, Q] = cols_p * s + cols_q * c
            rows_p = A[P, :].copy()
            rows_q = A[Q, :].copy()
            A[P, :] = c[:, None] * rows_p - s[:, None] * rows_q
            A[Q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            A[P, Q] = 0.0
            A[Q, P] = 0.0

            vec_p = V[:, P].copy()
            vec_q = V[:, Q].copy()
            V[:, P] = vec_p * c - vec_q * s
            V[:, Q] = vec_p * s + vec_q * c
        sweeps += 1
        off = _off_diagonal_norm(A)

    logger.debug("Jacobi EVD converged after %d sweeps (m=%d)", sweeps, m)
    eigenvalues = np.diag(A).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    V = V[:, order]
    for j in range(m):
        pivot = np.argmax(np.abs(V[:, j]))
        if V[pivot, j] < 0:
            V[:, j] = -V[:, j]
    return eigenvalues, V


def extract_embedding(B, target_dim):
    """
    Embed the seen-class centers in target_dim dimensions

    Rows beyond the effective rank are zero-padded; negative eigenvalues
    are clamped to zero with a warning.

    Args:
        B (GramMatrix): Double-centered inner products
        target_dim (int): n + k

    Returns:
        EmbeddedManifold
    """
    target_dim = int(target_dim)
    if target_dim < 1:
        raise ValidationError("target_dim must be ≥ 1")
    eigenvalues, vectors = symmetric_evd(B.values)
    m = eigenvalues.shape[0]
    norm_b = np.linalg.norm(B.values)
    if np.any(eigenvalues < -NEGATIVE_EIG_TOL * max(norm_b, 1e-300)):
        logger.warning(
            "Clamping %d negative eigenvalue(s) of B (min %.3e); distances are not exactly Euclidean",
            int(np.sum(eigenvalues < 0)), eigenvalues.min(),
        )
    clamped = np.clip(eigenvalues, 0.0, None)
    top = clamped[0] if m else 0.0
    if top > 0:
        effective_rank = int(np.sum(clamped > RANK_TOL * top))
    else:
        effective_rank = 0
    retained = min(target_dim, effective_rank)
    coords = np.zeros((target_dim, m))
    coords[:retained] = np.sqrt(clamped[:retained])[:, None] * vectors[:, :retained].T
    return EmbeddedManifold(coords=coords, eigenvalues=clamped, effective_rank=effective_rank)


def embed_class_centers(centers, target_dim):
    """Pairwise distances -> double centering -> embedding, in one call."""
    D = pairwise_distance_matrix(centers)
    B = double_center(D)
    return D, B, extract_embedding(B, target_dim)


def _write_matrix(path, matrix, prefix):
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="") as f:
        f.write(",".join(f"{prefix}{j}" for j in range(matrix.shape[1])) + "\n")
        for row in matrix:
            f.write(",".join(format_float(v) for v in row) + "\n")
    return path


def dump_embedding(out_dir, D, B, manifold):
    """
    Write D, B, eigenvalues and O as CSV for debugging

    Returns:
        dict: Result with success status and written files
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        files = {
            "distances": _write_matrix(os.path.join(out_dir, "distances.csv"), D.values, "c"),
            "gram": _write_matrix(os.path.join(out_dir, "gram.csv"), B.values, "c"),
            "eigenvalues": _write_matrix(
                os.path.join(out_dir, "eigenvalues.csv"), manifold.eigenvalues[:, None], "lambda"
            ),
            "embedding": _write_matrix(os.path.join(out_dir, "embedding.csv"), manifold.coords, "c"),
        }
        return {"success": True, "files": files}
    except Exception as e:
        return {"success": False, "error": str(e)}


def _sign_fixed(directions, points):
    """Flip each direction so the point with the largest |projection| lands positive."""
    projected = points @ directions
    for j in range(directions.shape[1]):
        pivot = np.argmax(np.abs(projected[:, j]))
        if projected[pivot, j] < 0:
            directions[:, j] = -directions[:, j]
    return directions


def register_embedding(coords, predefined, tol=REGISTRATION_TOL):
    """
    Rotate, scale and translate the class embedding onto the predefined prototypes

    Classical MDS fixes O only up to a rigid motion. The directions of O that
    covary with the seen predefined prototypes are rotated onto them in the
    first n rows; the remaining energy of O is laid out along the last k rows,
    largest first. Pairwise distances change by a single global factor.

    Args:
        coords (np.ndarray): (n+k)×m embedding, one column per seen class
        predefined (np.ndarray): m×n predefined prototypes of the seen classes
        tol (float): Relative cutoff on the cross-covariance singular values

    Returns:
        np.ndarray: registered (n+k)×m coordinates
    """
    points = np.asarray(coords, dtype=np.float64).T
    predefined = np.asarray(predefined, dtype=np.float64)
    if predefined.ndim != 2 or points.ndim != 2 or predefined.shape[0] != points.shape[0]:
        raise ShapeError("predefined rows must match the embedding columns")
    m, dim = points.shape
    n = predefined.shape[1]
    if dim < n:
        raise ShapeError(f"embedding dimension {dim} is smaller than n = {n}")
    offset = predefined.mean(axis=0)
    target = predefined - offset
    points = points - points.mean(axis=0)

    registered = points.copy()
    U, s, Vt = linalg.svd(points.T @ target, full_matrices=False)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    if rank > 0:
        source = U[:, :rank]
        dest = np.zeros((dim, rank))
        dest[:n] = Vt[:rank].T

        rest = linalg.null_space(source.T)
        if rest.shape[1]:
            _, _, Wt = linalg.svd(points @ rest, full_matrices=True)
            rest = _sign_fixed(rest @ Wt.T, points)
        free = np.zeros((dim, dim - rank))
        free[n:, : dim - n] = np.eye(dim - n)
        if n > rank:
            free[:n, dim - n:] = linalg.null_space(Vt[:rank])

        rotation = np.hstack([source, rest]) @ np.hstack([dest, free]).T
        scale = s[:rank].sum() / np.sum((points @ source) ** 2)
        registered = scale * points @ rotation
        logger.debug("Registered embedding: matched rank %d, scale %.4g", rank, scale)
    elif np.any(points):
        logger.warning("Embedding does not covary with the predefined prototypes; translating only")
    registered[:, :n] += offset
    return registered.T
