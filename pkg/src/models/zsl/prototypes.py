"""
Prototype Module for the semantic feature expansion toolkit
Builds combined prototypes: latent means for seen classes and a
local-linear reconstruction from the nearest seen classes for unseen ones
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.models.zsl.data_model import l2_normalize_rows
from src.models.zsl.exceptions import ShapeError, ValidationError
from src.models.zsl.expansion import encode_examples

logger = logging.getLogger("PrototypeBuilder")

DEFAULT_NEIGHBORS = 8
NEIGHBOR_METRICS = ("euclidean", "cosine")
RIDGE_TRIGGER = 1e-12
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class NeighborSolution:
    """
    Least-squares weights of one unseen class over its nearest seen classes

    Args:
        neighbor_ids: g distinct seen class ids, nearest first
        theta: g coefficients
        residual: ‖p' − Σ θ_i p_i‖ on the predefined prototypes
    """

    neighbor_ids: Tuple[str, ...]
    theta: np.ndarray
    residual: float

    def __post_init__(self):
        ids = tuple(self.neighbor_ids)
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if len(set(ids)) != len(ids):
            raise ValidationError("neighbor ids must be distinct")
        if theta.shape[0] != len(ids):
            raise ShapeError(f"{theta.shape[0]} coefficients for {len(ids)} neighbors")
        if self.residual < 0:
            raise ValidationError("residual must be nonnegative")
        theta.flags.writeable = False
        object.__setattr__(self, "neighbor_ids", ids)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "residual", float(self.residual))

    @property
    def g(self):
        return len(self.neighbor_ids)


def expand_seen_prototypes(model, ds, class_ids=None):
    """
    Expanded prototype of each seen class: the mean latent vector of its examples

    Args:
        model (ExpansionModel): Trained expansion model
        ds (LabeledDataset): Seen-class examples
        class_ids (sequence, optional): Row order; defaults to ds.seen_classes

    Returns:
        np.ndarray: m×k matrix
    """
    class_ids = tuple(ds.seen_classes if class_ids is None else class_ids)
    latents = encode_examples(model, ds.features)
    positions = ds.label_positions(class_ids)
    expanded = np.empty((len(class_ids), model.latent_dim))
    for i, class_id in enumerate(class_ids):
        members = positions == i
        if not members.any():
            raise ValidationError(f"seen class {class_id!r} has no examples to average")
        expanded[i] = latents[members].mean(axis=0)
    return expanded


def concat_prototype(predefined, expanded):
    """Predefined segment first, expanded segment second."""
    predefined = np.asarray(predefined, dtype=np.float64)
    expanded = np.asarray(expanded, dtype=np.float64)
    if predefined.ndim != expanded.ndim or predefined.shape[:-1] != expanded.shape[:-1]:
        raise ShapeError(f"cannot concatenate shapes {predefined.shape} and {expanded.shape}")
    return np.concatenate([predefined, expanded], axis=-1)


def split_prototype(combined, n):
    """Inverse of concat_prototype for a predefined dimension n."""
    combined = np.asarray(combined, dtype=np.float64)
    if not 0 < n <= combined.shape[-1]:
        raise ShapeError(f"predefined dimension {n} out of range for width {combined.shape[-1]}")
    return combined[..., :n].copy(), combined[..., n:].copy()


def neighbor_distances(unseen_proto, seen_protos, metric="euclidean", normalize=False):
    unseen_proto = np.asarray(unseen_proto, dtype=np.float64).reshape(-1)
    seen_protos = np.atleast_2d(np.asarray(seen_protos, dtype=np.float64))
    if seen_protos.shape[1] != unseen_proto.shape[0]:
        raise ShapeError("unseen and seen prototypes have different dimensions")
    if metric not in NEIGHBOR_METRICS:
        raise ValidationError(f"unknown neighbor metric {metric!r}")
    if normalize:
        unseen_proto = l2_normalize_rows(unseen_proto[None, :])[0]
        seen_protos = l2_normalize_rows(seen_protos)
    if metric == "euclidean":
        return np.linalg.norm(seen_protos - unseen_proto, axis=1)
    norms = np.linalg.norm(seen_protos, axis=1) * np.linalg.norm(unseen_proto)
    if np.any(norms == 0):
        raise ValidationError("cosine neighbor search needs nonzero prototypes")
    return 1.0 - seen_protos @ unseen_proto / norms


def nearest_seen_neighbors(unseen_proto, seen_protos, g, class_ids=None, metric="euclidean", normalize=False):
    """
    The g seen classes closest to an unseen prototype; ties go to the lower index

    Args:
        unseen_proto (np.ndarray): n-vector
        seen_protos (np.ndarray): m×n predefined seen prototypes
        g (int): Neighbor count, 1 ≤ g ≤ m
        class_ids (sequence, optional): Seen class ids; row indices are returned without them

    Returns:
        tuple: g class ids (or indices), nearest first
    """
    distances = neighbor_distances(unseen_proto, seen_protos, metric, normalize)
    m = distances.shape[0]
    if not 1 <= g <= m:
        raise ValidationError(f"g={g} must be between 1 and the number of seen classes ({m})")
    order = np.argsort(distances, kind="stable")[:g]
    if class_ids is None:
        return tuple(int(i) for i in order)
    if len(class_ids) != m:
        raise ShapeError("one class id per seen prototype")
    return tuple(class_ids[i] for i in order)


def solve_theta(unseen_proto, neighbor_protos, neighbor_ids=None):
    """
    Least-squares coefficients θ minimizing ‖p' − Σ θ_i p_i‖

    Solves the normal equations by Cholesky; a ridge of 1e-8·trace/g is
    added only when the Gram matrix is numerically singular.

    Args:
        unseen_proto (np.ndarray): n-vector p'
        neighbor_protos (np.ndarray): g×n neighbor prototypes
        neighbor_ids (sequence, optional): Ids recorded in the solution

    Returns:
        NeighborSolution
    """
    target = np.asarray(unseen_proto, dtype=np.float64).reshape(-1)
    neighbors = np.atleast_2d(np.asarray(neighbor_protos, dtype=np.float64))
    g = neighbors.shape[0]
    if g < 1:
        raise ValidationError("need at least one neighbor")
    if neighbors.shape[1] != target.shape[0]:
        raise ShapeError("neighbor prototypes and target have different dimensions")
    if neighbor_ids is None:
        neighbor_ids = tuple(str(i) for i in range(g))

    gram = neighbors @ neighbors.T
    rhs = neighbors @ target
    trace = float(np.trace(gram))
    if trace == 0.0:
        theta = np.zeros(g)
    else:
        if np.linalg.eigvalsh(gram)[0] <= RIDGE_TRIGGER * trace:
            ridge = RIDGE_SCALE * trace / g
            logger.debug("Degenerate neighbor set, adding ridge %.3e", ridge)
            gram = gram + ridge * np.eye(g)
        try:
            theta = cho_solve(cho_factor(gram), rhs)
        except LinAlgError:
            ridge = RIDGE_SCALE * trace / g
            logger.debug("Cholesky failed, retrying with ridge %.3e", ridge)
            theta = cho_solve(cho_factor(gram + ridge * np.eye(g)), rhs)

    residual = float(np.linalg.norm(target - theta @ neighbors))
    return NeighborSolution(neighbor_ids=tuple(neighbor_ids), theta=theta, residual=residual)


def expand_unseen_prototype(sol, seen_expanded, seen_ids):
    """
    Σ θ_i · e_i over the solution's neighbors

    Args:
        sol (NeighborSolution): Coefficients over seen neighbors
        seen_expanded (np.ndarray): m×k expanded seen prototypes
        seen_ids (sequence): Class id of each row of seen_expanded

    Returns:
        np.ndarray: k-vector
    """
    seen_expanded = np.atleast_2d(np.asarray(seen_expanded, dtype=np.float64))
    lookup = {cid: i for i, cid in enumerate(seen_ids)}
    missing = [cid for cid in sol.neighbor_ids if cid not in lookup]
    if missing:
        raise ValidationError(f"no expanded prototype for neighbor(s) {missing}")
    rows = seen_expanded[[lookup[cid] for cid in sol.neighbor_ids]]
    return sol.theta @ rows


def build_full_prototype_table(table, model, train_ds, g=DEFAULT_NEIGHBORS, metric="euclidean", normalize=False):
    """
    Attach expanded segments for every seen and unseen class

    Args:
        table (PrototypeTable): Predefined prototypes for all classes
        model (ExpansionModel or None): None disables expansion
        train_ds (LabeledDataset): Seen-class training examples
        g (int): Neighbors per unseen class, clamped to m
        metric (str): Neighbor search metric
        normalize (bool): Normalize prototypes before neighbor search

    Returns:
        tuple: (PrototypeTable, dict of unseen class id -> NeighborSolution)
    """
    if model is None or model.latent_dim == 0:
        return table, {}
    seen_ids = table.seen_ids
    seen_predefined = table.rows_for(seen_ids, "P")
    seen_expanded = expand_seen_prototypes(model, train_ds, seen_ids)
    g = min(int(g), len(seen_ids))

    expanded = np.zeros((len(table.class_ids), model.latent_dim))
    for row, class_id in enumerate(seen_ids):
        expanded[table.index_of(class_id)] = seen_expanded[row]

    solutions = {}
    for class_id in table.unseen_ids:
        index = table.index_of(class_id)
        target = table.predefined[index]
        neighbor_ids = nearest_seen_neighbors(target, seen_predefined, g, seen_ids, metric, normalize)
        neighbor_rows = seen_predefined[[seen_ids.index(cid) for cid in neighbor_ids]]
        solution = solve_theta(target, neighbor_rows, neighbor_ids)
        expanded[index] = expand_unseen_prototype(solution, seen_expanded, seen_ids)
        solutions[class_id] = solution
        logger.debug("Unseen class %s: residual %.3e over %d neighbors", class_id, solution.residual, g)

    logger.info("Built expanded prototypes for %d seen and %d unseen classes", len(seen_ids), len(solutions))
    return table.with_expanded(expanded), solutions
