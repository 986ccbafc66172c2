"""
Recognition Module for the semantic feature expansion toolkit
Trains the linear visual→semantic projection, classifies unseen examples
by nearest prototype and scores the results
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import solve_sylvester

from src.models.zsl.exceptions import NonFiniteError, ShapeError, ValidationError
from src.models.zsl.nn_core import (
    NetworkGrads,
    NetworkParams,
    backward,
    forward,
    init_network,
    init_optimizer,
    layer_specs,
    optimizer_step,
)

logger = logging.getLogger("ProjectionTrainer")

METRICS = ("cosine", "euclidean")
SOLVERS = ("gradient", "sylvester")


@dataclass(frozen=True)
class ProjectionModel:
    """
    Linear autoencoder between visual and semantic spaces

    Args:
        encoder: affine d→s map (the forward projection)
        decoder: affine s→d map
        lam: weight of the latent penalty towards the class prototype
        tied: decoder weights are the encoder weights transposed
    """

    encoder: NetworkParams
    decoder: NetworkParams
    lam: float = 1.0
    tied: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")
        if len(self.encoder.specs) != 1 or len(self.decoder.specs) != 1:
            raise ShapeError("projection maps are single affine layers")
        if self.encoder.out_dim != self.decoder.in_dim or self.decoder.out_dim != self.encoder.in_dim:
            raise ShapeError("encoder and decoder shapes do not chain")

    @property
    def semantic_dim(self):
        return self.encoder.out_dim

    def project(self, features):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.encoder.in_dim:
            raise ShapeError(f"features have {features.shape[1]} dims, projection expects {self.encoder.in_dim}")
        return forward(self.encoder, features)[-1]


@dataclass(frozen=True)
class ProjectionConfig:
    lam: float = 1.0
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    solver: str = "gradient"
    tied: bool = False
    seed: int = 7


@dataclass(frozen=True)
class EvaluationReport:
    """
    Scores of one recognition run

    Args:
        class_ids: candidate classes, the row/column order of confusion
        hit_at_k: accuracies for k = 1..K
        confusion: v×v counts, rows are truth and columns prediction
        per_class_accuracy: diagonal over row sums (0 for a class with no test examples)
        mode: prototype segment used, 'P', 'E' or 'P+E'
    """

    class_ids: Tuple[str, ...]
    hit_at_k: np.ndarray
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    mode: str = "P+E"

    def __post_init__(self):
        hits = np.asarray(self.hit_at_k, dtype=np.float64)
        if np.any(np.diff(hits) < 0):
            raise ValidationError("hit_at_k must be nondecreasing")
        if self.confusion.shape != (len(self.class_ids), len(self.class_ids)):
            raise ShapeError("confusion matrix must be v×v")

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def top1(self):
        return float(self.hit_at_k[0])


def _linear_pair(visual_dim, semantic_dim, seed):
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    enc_seed, dec_seed = seed.spawn(2)
    encoder = init_network(layer_specs((visual_dim, semantic_dim)), enc_seed)
    decoder = init_network(layer_specs((semantic_dim, visual_dim)), dec_seed)
    return encoder, decoder


def tie_decoder(encoder, decoder):
    return NetworkParams(decoder.specs, (encoder.weights[0].T,), decoder.biases)


def init_projection(visual_dim, semantic_dim, lam=1.0, tied=False, seed=7):
    encoder, decoder = _linear_pair(visual_dim, semantic_dim, seed)
    if tied:
        decoder = tie_decoder(encoder, decoder)
    return ProjectionModel(encoder, decoder, lam, tied)


def projection_loss(model, features, targets):
    """
    mean ‖x − f_d(f_e(x))‖² + λ·mean ‖f_e(x) − t‖²

    Args:
        model (ProjectionModel): Current maps
        features (np.ndarray): batch×d
        targets (np.ndarray): batch×s prototype of each example's class

    Returns:
        tuple: (loss, encoder NetworkGrads, decoder NetworkGrads)
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    count = x.shape[0]
    if targets.shape != (count, model.semantic_dim):
        raise ShapeError(f"targets must be {count}×{model.semantic_dim}, got {targets.shape}")
    enc_acts = forward(model.encoder, x)
    z = enc_acts[-1]
    dec_acts = forward(model.decoder, z)
    xhat = dec_acts[-1]
    loss = float((np.sum((xhat - x) ** 2) + model.lam * np.sum((z - targets) ** 2)) / count)
    dec_grads = backward(model.decoder, dec_acts, 2.0 * (xhat - x) / count)
    grad_z = dec_grads.input_grad + model.lam * 2.0 * (z - targets) / count
    enc_grads = backward(model.encoder, enc_acts, grad_z)
    if model.tied:
        enc_grads = NetworkGrads(
            (enc_grads.weights[0] + dec_grads.weights[0].T,), enc_grads.biases, enc_grads.input_grad
        )
        dec_grads = NetworkGrads((np.zeros_like(dec_grads.weights[0]),), dec_grads.biases, dec_grads.input_grad)
    return loss, enc_grads, dec_grads


def class_targets(ds, table, mode="P+E"):
    """Prototype row of each example's class from the requested segment."""
    positions = ds.label_positions(table.class_ids)
    if np.any(positions < 0):
        raise ValidationError("some examples belong to classes missing from the prototype table")
    return table.segment(mode)[positions]


def _solve_closed_form(features, targets, lam):
    # tied linear autoencoder: (PᵀP)W + W(λXᵀX) = (1+λ)PᵀX
    a = targets.T @ targets
    b = lam * (features.T @ features)
    c = (1.0 + lam) * (targets.T @ features)
    weights = solve_sylvester(a, b, c)
    if not np.all(np.isfinite(weights)):
        raise NonFiniteError("closed-form projection is not finite", block="projection weights")
    return weights


def train_projection(ds, table, config, mode="P+E"):
    """
    Fit the projection on seen-class examples

    Args:
        ds (LabeledDataset): Training partition
        table (PrototypeTable): Prototypes of at least the seen classes
        config (ProjectionConfig): Solver and optimizer settings
        mode (str): Prototype segment the projection targets

    Returns:
        ProjectionModel
    """
    if config.solver not in SOLVERS:
        raise ValidationError(f"unknown projection solver {config.solver!r}")
    targets = class_targets(ds, table, mode)
    features = ds.features
    semantic_dim = targets.shape[1]

    if config.solver == "sylvester":
        weights = _solve_closed_form(features, targets, config.lam)
        encoder = NetworkParams(layer_specs((ds.dim, semantic_dim)), (weights.T,), (np.zeros(semantic_dim),))
        decoder = NetworkParams(layer_specs((semantic_dim, ds.dim)), (weights,), (np.zeros(ds.dim),))
        logger.info("Solved closed-form projection (%d→%d)", ds.dim, semantic_dim)
        return ProjectionModel(encoder, decoder, config.lam, tied=True)

    streams = np.random.SeedSequence(int(config.seed)).spawn(2)
    model = init_projection(ds.dim, semantic_dim, config.lam, config.tied, streams[0])
    shuffle_rng = np.random.default_rng(streams[1])
    state = init_optimizer(
        (model.encoder, model.decoder),
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    count = features.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(count)
        epoch_loss = 0.0
        for start in range(0, count, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, enc_grads, dec_grads = projection_loss(model, features[idx], targets[idx])
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite projection loss at epoch {epoch}")
            (encoder, decoder), state = optimizer_step(state, (model.encoder, model.decoder), (enc_grads, dec_grads))
            if config.tied:
                decoder = tie_decoder(encoder, decoder)
            model = ProjectionModel(encoder, decoder, config.lam, config.tied)
            epoch_loss += loss * idx.shape[0]
        logger.debug("projection epoch %d: loss=%.6f", epoch, epoch_loss / count)
    return model


def prototype_distances(embeddings, prototypes, metric="cosine"):
    """
    Distance from every embedding to every prototype

    Args:
        embeddings (np.ndarray): N×s
        prototypes (np.ndarray): v×s
        metric (str): 'cosine' (1 − cosine similarity) or 'euclidean'

    Returns:
        np.ndarray: N×v
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    prototypes = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if embeddings.shape[1] != prototypes.shape[1]:
        raise ShapeError(f"embedding dim {embeddings.shape[1]} differs from prototype dim {prototypes.shape[1]}")
    if prototypes.shape[0] == 0:
        raise ValidationError("no candidate prototypes")
    if metric == "euclidean":
        diff = embeddings[:, None, :] - prototypes[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    if metric != "cosine":
        raise ValidationError(f"unknown metric {metric!r}")
    e_norm = np.linalg.norm(embeddings, axis=1)
    p_norm = np.linalg.norm(prototypes, axis=1)
    if np.any(e_norm == 0):
        raise ValidationError("zero-norm embedding under the cosine metric")
    if np.any(p_norm == 0):
        raise ValidationError("zero-norm prototype under the cosine metric")
    return 1.0 - (embeddings @ prototypes.T) / np.outer(e_norm, p_norm)


def rank_predictions(distances):
    """Candidate indices ordered nearest first; ties keep the lower index."""
    return np.argsort(np.atleast_2d(distances), axis=1, kind="stable")


def classify(model, x, table, metric="cosine", mode="P+E"):
    """Nearest prototype in the table for a single visual feature vector."""
    distances = prototype_distances(model.project(x), table.segment(mode), metric)
    return table.class_ids[int(rank_predictions(distances)[0, 0])]


def _truth_ranks(model, test_ds, table, metric, mode):
    if test_ds is None or test_ds.n_examples == 0:
        raise ValidationError("empty test set")
    truth = test_ds.label_positions(table.class_ids)
    if np.any(truth < 0):
        raise ValidationError("test examples belong to classes outside the candidate prototypes")
    ranking = rank_predictions(prototype_distances(model.project(test_ds.features), table.segment(mode), metric))
    return truth, ranking


def _hits(truth, ranking, top_k):
    rank_of_truth = np.argmax(ranking == truth[:, None], axis=1)
    return np.array([np.sum(rank_of_truth < k) / truth.shape[0] for k in range(1, top_k + 1)])


def _confusion(truth, ranking, v):
    confusion = np.zeros((v, v), dtype=np.int64)
    np.add.at(confusion, (truth, ranking[:, 0]), 1)
    return confusion


def _resolve_k(top_k, v):
    top_k = v if top_k is None else int(top_k)
    if not 1 <= top_k <= v:
        raise ValidationError(f"K={top_k} must be between 1 and the number of candidate classes ({v})")
    return top_k


def hit_at_k(model, test_ds, table, top_k=None, metric="cosine", mode="P+E"):
    """
    Fraction of test examples whose class is among the k nearest prototypes

    Returns:
        np.ndarray: accuracies for k = 1..K (K defaults to v)
    """
    top_k = _resolve_k(top_k, len(table.class_ids))
    truth, ranking = _truth_ranks(model, test_ds, table, metric, mode)
    return _hits(truth, ranking, top_k)


def confusion_matrix(model, test_ds, table, metric="cosine", mode="P+E"):
    truth, ranking = _truth_ranks(model, test_ds, table, metric, mode)
    return _confusion(truth, ranking, len(table.class_ids))


def per_class_accuracy(confusion):
    row_sums = confusion.sum(axis=1)
    diagonal = np.diag(confusion).astype(np.float64)
    out = np.zeros(confusion.shape[0])
    present = row_sums > 0
    out[present] = diagonal[present] / row_sums[present]
    return out


def evaluate(model, test_ds, table, top_k=None, metric="cosine", mode="P+E"):
    """
    Hit@k curve, confusion matrix and per-class accuracy from one ranking

    Args:
        model (ProjectionModel): Trained projection
        test_ds (LabeledDataset): Unseen-class examples
        table (PrototypeTable): Candidate (unseen) prototypes
        top_k (int, optional): Largest k; defaults to the number of candidates
        metric (str): Distance metric
        mode (str): Prototype segment

    Returns:
        EvaluationReport
    """
    top_k = _resolve_k(top_k, len(table.class_ids))
    truth, ranking = _truth_ranks(model, test_ds, table, metric, mode)
    confusion = _confusion(truth, ranking, len(table.class_ids))
    report = EvaluationReport(
        class_ids=table.class_ids,
        hit_at_k=_hits(truth, ranking, top_k),
        confusion=confusion,
        per_class_accuracy=per_class_accuracy(confusion),
        mode=mode,
    )
    logger.info("Evaluation (%s, %s): Hit@1 = %.4f over %d examples", mode, metric, report.top1, report.total)
    return report
