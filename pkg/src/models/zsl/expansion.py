"""
Expansion Module for the semantic feature expansion toolkit
Trains the AE/VAE that generates auxiliary semantic features under the
joint reconstruction + manifold alignment objective
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.models.zsl.exceptions import NonFiniteError, ShapeError, ValidationError
from src.models.zsl.nn_core import (
    NetworkParams,
    backward,
    forward,
    init_network,
    init_optimizer,
    layer_specs,
    optimizer_step,
)

logger = logging.getLogger("ExpansionTrainer")

VARIANTS = ("ae", "vae")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 9.0
    beta: float = 77.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be nonnegative")
        if self.alpha == 0 and self.beta == 0:
            raise ValidationError("alpha and beta cannot both be zero")


@dataclass(frozen=True)
class ExpansionModel:
    """
    Encoder/decoder pair of the expansion network

    The VAE encoder emits 2k values: the mean μ followed by the diagonal
    log-variance.
    """

    variant: str
    encoder: NetworkParams
    decoder: NetworkParams
    latent_dim: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        heads = 2 if self.variant == "vae" else 1
        if self.encoder.out_dim != heads * self.latent_dim:
            raise ShapeError(f"{self.variant} encoder must emit {heads * self.latent_dim} values")
        if self.decoder.in_dim != self.latent_dim:
            raise ShapeError("decoder input must equal latent_dim")
        if self.decoder.out_dim != self.encoder.in_dim:
            raise ShapeError("decoder must reconstruct the encoder input dimension")

    @property
    def visual_dim(self):
        return self.encoder.in_dim


@dataclass(frozen=True)
class AlignmentContext:
    """
    Everything the alignment term needs about the seen classes

    Args:
        predefined: m×n predefined prototypes of the seen classes
        manifold: (n+k)×m embedded manifold coordinates O
        class_ids: seen class ids; column j of O and row j of predefined
    """

    predefined: np.ndarray
    manifold: np.ndarray
    class_ids: Tuple[str, ...]

    def __post_init__(self):
        predefined = np.array(self.predefined, dtype=np.float64)
        manifold = np.array(self.manifold, dtype=np.float64)
        class_ids = tuple(self.class_ids)
        if predefined.ndim != 2 or manifold.ndim != 2:
            raise ShapeError("predefined and manifold must be matrices")
        if manifold.shape[1] != len(class_ids) or predefined.shape[0] != len(class_ids):
            raise ShapeError("manifold columns and predefined rows must match the seen class count")
        if manifold.shape[0] < predefined.shape[1]:
            raise ShapeError("manifold dimension must be at least n")
        predefined.flags.writeable = False
        manifold.flags.writeable = False
        object.__setattr__(self, "predefined", predefined)
        object.__setattr__(self, "manifold", manifold)
        object.__setattr__(self, "class_ids", class_ids)

    @property
    def n(self):
        return self.predefined.shape[1]

    @property
    def k(self):
        return self.manifold.shape[0] - self.n


@dataclass(frozen=True)
class ExpansionConfig:
    latent_dim: int
    variant: str = "vae"
    hidden_units: Tuple[int, ...] = (256,)
    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 7


@dataclass
class LossTrace:
    """Per-epoch means of each loss component (unweighted) and the weighted total."""

    epoch: List[int] = field(default_factory=list)
    reconstruction: List[float] = field(default_factory=list)
    kl: List[float] = field(default_factory=list)
    alignment: List[float] = field(default_factory=list)
    total: List[float] = field(default_factory=list)

    def append(self, epoch, reconstruction, kl, alignment, total):
        self.epoch.append(epoch)
        self.reconstruction.append(float(reconstruction))
        self.kl.append(float(kl))
        self.alignment.append(float(alignment))
        self.total.append(float(total))

    def __len__(self):
        return len(self.epoch)

    def rows(self):
        return list(zip(self.epoch, self.reconstruction, self.kl, self.alignment, self.total))


class UnifiedLoss:
    """Value, components and gradients of the joint objective for one batch."""

    def __init__(self, total, reconstruction, kl, alignment, encoder_grads, decoder_grads):
        self.total = total
        self.reconstruction = reconstruction
        self.kl = kl
        self.alignment = alignment
        self.encoder_grads = encoder_grads
        self.decoder_grads = decoder_grads

    @property
    def grads(self):
        return (self.encoder_grads, self.decoder_grads)


def default_latent_dim(n, d, rate=0.6):
    """
    Latent size from an expansion rate: round(rate·n), clamped so that
    n + k ≤ d − 1

    Returns:
        int: k (0 means expansion is disabled)
    """
    # capped before rounding so a huge rate cannot overflow
    k = int(math.floor(min(rate * n, d) + 0.5))
    return max(0, min(k, d - 1 - n))


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def reconstruction_loss(x_batch, xhat_batch):
    """Mean over the batch of the squared Euclidean reconstruction error."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    xhat = np.atleast_2d(np.asarray(xhat_batch, dtype=np.float64))
    _check_pair(x, xhat, "reconstruction_loss")
    return float(np.sum((x - xhat) ** 2) / x.shape[0])


def kl_to_standard_normal(mu, logvar):
    """
    KL(N(μ, diag exp(logvar)) ‖ N(0, I)), averaged over the batch

    Args:
        mu (np.ndarray): batch×k means
        logvar (np.ndarray): batch×k log-variances

    Returns:
        float
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    logvar = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    _check_pair(mu, logvar, "kl_to_standard_normal")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise NonFiniteError("KL inputs are not finite")
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar) / mu.shape[0])


def reparameterize(mu, logvar, eps):
    """z = μ + exp(logvar / 2) ⊙ ε"""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_pair(mu, logvar, "reparameterize")
    _check_pair(mu, eps, "reparameterize")
    return mu + np.exp(0.5 * logvar) * eps


def _label_indices(labels, ctx):
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        indices = labels.astype(np.int64)
    else:
        lookup = {cid: i for i, cid in enumerate(ctx.class_ids)}
        try:
            indices = np.array([lookup[str(label)] for label in labels], dtype=np.int64)
        except KeyError as e:
            raise ValidationError(f"label {e.args[0]!r} is not a seen class") from None
    if indices.size and (indices.min() < 0 or indices.max() >= len(ctx.class_ids)):
        raise ValidationError("label index outside the seen classes")
    return indices


def _alignment_terms(z_batch, labels, ctx):
    z = np.atleast_2d(np.asarray(z_batch, dtype=np.float64))
    if z.shape[1] != ctx.k:
        raise ShapeError(f"latent dim {z.shape[1]} does not match alignment context k={ctx.k}")
    indices = _label_indices(labels, ctx)
    if indices.shape[0] != z.shape[0]:
        raise ShapeError("one label per latent vector")
    s = np.hstack([ctx.predefined[indices], z])
    o = ctx.manifold[:, indices].T
    s_norm = np.linalg.norm(s, axis=1)
    o_norm = np.linalg.norm(o, axis=1)
    if np.any(s_norm == 0) or np.any(o_norm == 0):
        raise ValidationError("cosine alignment is undefined for a zero-norm vector")
    cos = np.sum(s * o, axis=1) / (s_norm * o_norm)
    count = z.shape[0]
    loss = float(np.sum(1.0 - cos) / count)
    dcos_ds = o / (s_norm * o_norm)[:, None] - (cos / (s_norm * s_norm))[:, None] * s
    grad_z = -dcos_ds[:, ctx.n:] / count
    return loss, grad_z


def alignment_loss(z_batch, labels, ctx):
    """
    Mean of 1 − cos(concat(predefined prototype of y_i, z_i), o_{y_i})

    Args:
        z_batch (np.ndarray): batch×k latent vectors
        labels: seen-class positions (ints) or seen class ids
        ctx (AlignmentContext): Prototypes and embedded manifold

    Returns:
        float in [0, 2]
    """
    return _alignment_terms(z_batch, labels, ctx)[0]


def init_expansion_model(visual_dim, latent_dim, variant="vae", hidden_units=(256,), seed=7):
    """
    Glorot-initialized encoder (d→hidden→k or 2k) and decoder (k→hidden→d)

    Args:
        seed: int or SeedSequence; encoder and decoder draw from separate children
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    if latent_dim < 1:
        raise ValidationError("latent_dim must be ≥ 1")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    enc_seed, dec_seed = seed.spawn(2)
    heads = 2 if variant == "vae" else 1
    hidden = tuple(int(h) for h in hidden_units)
    encoder = init_network(layer_specs((visual_dim,) + hidden + (heads * latent_dim,)), enc_seed)
    decoder = init_network(layer_specs((latent_dim,) + hidden + (visual_dim,)), dec_seed)
    return ExpansionModel(variant=variant, encoder=encoder, decoder=decoder, latent_dim=latent_dim)


def unified_loss(batch, model, ctx, weights, eps=None):
    """
    α·(reconstruction [+ KL]) + β·alignment with gradients for both networks

    Args:
        batch (tuple): (x batch×d, labels)
        model (ExpansionModel): Current parameters
        ctx (AlignmentContext): Alignment targets
        weights (LossWeights): α and β
        eps (np.ndarray, optional): batch×k standard-normal draw; required for VAE

    Returns:
        UnifiedLoss
    """
    x, labels = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    count = x.shape[0]
    k = model.latent_dim
    if ctx.k != k:
        raise ShapeError(f"model latent_dim {k} does not match alignment context k={ctx.k}")
    alpha, beta = weights.alpha, weights.beta

    enc_acts = forward(model.encoder, x)
    head = enc_acts[-1]
    if model.variant == "vae":
        if eps is None:
            raise ValidationError("the VAE loss needs a frozen noise draw eps")
        eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
        mu, logvar = head[:, :k], head[:, k:]
        z = reparameterize(mu, logvar, eps)
        kl = kl_to_standard_normal(mu, logvar)
    else:
        z = head
        kl = 0.0

    dec_acts = forward(model.decoder, z)
    xhat = dec_acts[-1]
    rec = reconstruction_loss(x, xhat)
    align, align_grad = _alignment_terms(z, labels, ctx)
    total = alpha * (rec + kl) + beta * align

    dec_grads = backward(model.decoder, dec_acts, alpha * 2.0 * (xhat - x) / count)
    grad_z = dec_grads.input_grad + beta * align_grad
    if model.variant == "vae":
        std = np.exp(0.5 * logvar)
        grad_mu = grad_z + alpha * mu / count
        grad_logvar = grad_z * 0.5 * std * eps + alpha * 0.5 * (np.exp(logvar) - 1.0) / count
        grad_head = np.hstack([grad_mu, grad_logvar])
    else:
        grad_head = grad_z
    enc_grads = backward(model.encoder, enc_acts, grad_head)
    return UnifiedLoss(total, rec, kl, align, enc_grads, dec_grads)


def encode_examples(model, features):
    """
    Latent vectors for inference: z for AE, μ for VAE

    Returns:
        np.ndarray: l×k
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.visual_dim:
        raise ShapeError(f"features have {features.shape[1]} dims, model expects {model.visual_dim}")
    head = forward(model.encoder, features)[-1]
    return head[:, : model.latent_dim].copy()


def training_streams(seed):
    """Independent generators for encoder init, decoder init, shuffling and noise."""
    init_seq, shuffle_seq, noise_seq = np.random.SeedSequence(int(seed)).spawn(3)
    return init_seq, np.random.default_rng(shuffle_seq), np.random.default_rng(noise_seq)


def train_expansion(ds, ctx, config):
    """
    Epoch/batch loop over the seen-class examples

    Args:
        ds (LabeledDataset): Training partition, features already preprocessed
        ctx (AlignmentContext): Built from the same seen-class ordering as ds
        config (ExpansionConfig): Architecture and optimizer settings

    Returns:
        tuple: (ExpansionModel, LossTrace)
    """
    if config.batch_size < 1:
        raise ValidationError("batch_size must be ≥ 1")
    if config.epochs < 0:
        raise ValidationError("epochs must be ≥ 0")
    labels = ds.label_positions(ctx.class_ids)
    if np.any(labels < 0):
        raise ValidationError("training examples must belong to the alignment context's seen classes")

    init_seq, shuffle_rng, noise_rng = training_streams(config.seed)
    model = init_expansion_model(ds.dim, config.latent_dim, config.variant, config.hidden_units, init_seq)
    state = init_optimizer(
        (model.encoder, model.decoder),
        learning_rate=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    trace = LossTrace()
    features = ds.features
    count = features.shape[0]
    encoder, decoder = model.encoder, model.decoder
    started = time.time()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(count)
        sums = np.zeros(4)
        for start in range(0, count, config.batch_size):
            idx = order[start:start + config.batch_size]
            eps = None
            if config.variant == "vae":
                eps = noise_rng.standard_normal((idx.shape[0], config.latent_dim))
            current = ExpansionModel(config.variant, encoder, decoder, config.latent_dim)
            result = unified_loss((features[idx], labels[idx]), current, ctx, config.weights, eps)
            if not math.isfinite(result.total):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: "
                    f"reconstruction={result.reconstruction}, kl={result.kl}, alignment={result.alignment}"
                )
            (encoder, decoder), state = optimizer_step(state, (encoder, decoder), result.grads)
            sums += idx.shape[0] * np.array([result.reconstruction, result.kl, result.alignment, result.total])
        means = sums / count
        trace.append(epoch, *means)
        logger.debug(
            "epoch %d: reconstruction=%.6f kl=%.6f alignment=%.6f total=%.6f", epoch, *means
        )
        if epoch % 10 == 0 or epoch == config.epochs:
            logger.info("Expansion epoch %d/%d total loss %.6f", epoch, config.epochs, means[3])

    if config.epochs:
        logger.info("Expansion training finished in %.2fs", time.time() - started)
    return ExpansionModel(config.variant, encoder, decoder, config.latent_dim), trace


def evaluate_expansion_losses(model, ds, ctx):
    """
    Unweighted loss components over one deterministic full pass (μ for VAE)

    Returns:
        dict: reconstruction, kl, alignment
    """
    head = forward(model.encoder, ds.features)[-1]
    k = model.latent_dim
    z = head[:, :k]
    kl = 0.0
    if model.variant == "vae":
        kl = kl_to_standard_normal(z, head[:, k:])
    xhat = forward(model.decoder, z)[-1]
    labels = ds.label_positions(ctx.class_ids)
    return {
        "reconstruction": reconstruction_loss(ds.features, xhat),
        "kl": kl,
        "alignment": alignment_loss(z, labels, ctx),
    }


def build_alignment_context(seen_predefined, manifold, class_ids):
    """Wrap the seen predefined prototypes and the manifold coordinates."""
    coords = manifold.coords if hasattr(manifold, "coords") else manifold
    return AlignmentContext(predefined=seen_predefined, manifold=coords, class_ids=tuple(class_ids))
