"""
Neural Network Core Module for the semantic feature expansion toolkit
Feedforward layers, reverse-mode gradients, the adaptive-moment optimizer,
finite-difference gradient checking and checkpoint files
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np

from src.models.zsl.exceptions import NonFiniteError, ShapeError, ValidationError

logger = logging.getLogger("NetworkCore")

ACTIVATIONS = ("linear", "relu", "tanh")
_ACTIVATION_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError(f"layer dims must be ≥ 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkParams:
    """
    Weights and biases of a feedforward stack

    Weights use the row convention: layer output = input @ W + b, so W is
    in_dim×out_dim and batches are rows.
    """

    specs: Tuple[LayerSpec, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        specs = tuple(self.specs)
        if not specs:
            raise ValidationError("a network needs at least one layer")
        if len(self.weights) != len(specs) or len(self.biases) != len(specs):
            raise ShapeError("one weight matrix and one bias vector per layer")
        for i, (a, b) in enumerate(zip(specs, specs[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        weights, biases = [], []
        for i, (spec, W, b) in enumerate(zip(specs, self.weights, self.biases)):
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if W.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
                raise ShapeError(f"layer {i} parameters have shapes {W.shape}, {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i} parameters are not finite", block=f"layer {i}")
            W.flags.writeable = False
            b.flags.writeable = False
            weights.append(W)
            biases.append(b)
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def in_dim(self):
        return self.specs[0].in_dim

    @property
    def out_dim(self):
        return self.specs[-1].out_dim

    def blocks(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def block_names(self):
        names = []
        for i in range(len(self.specs)):
            names.extend([f"layer {i} weights", f"layer {i} bias"])
        return names

    @classmethod
    def from_blocks(cls, specs, blocks):
        blocks = list(blocks)
        return cls(specs=tuple(specs), weights=tuple(blocks[0::2]), biases=tuple(blocks[1::2]))


@dataclass(frozen=True)
class NetworkGrads:
    """Gradients shaped like NetworkParams plus the gradient at the input."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    input_grad: np.ndarray

    def blocks(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def scaled(self, factor):
        return NetworkGrads(
            weights=tuple(factor * W for W in self.weights),
            biases=tuple(factor * b for b in self.biases),
            input_grad=factor * self.input_grad,
        )


@dataclass
class OptimizerState:
    """Adaptive-moment optimizer state; moments line up with parameter blocks."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("moment decay rates must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if self.step < 0:
            raise ValidationError("step must be ≥ 0")


def layer_specs(dims, hidden_activation="relu", output_activation="linear"):
    """
    Build a LayerSpec chain from a dimension list

    Args:
        dims (sequence): e.g. (d, 256, k) for one hidden layer

    Returns:
        tuple: LayerSpec per layer
    """
    dims = [int(x) for x in dims]
    if len(dims) < 2:
        raise ValidationError("need at least input and output dims")
    specs = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        specs.append(LayerSpec(dims[i], dims[i + 1], output_activation if last else hidden_activation))
    return tuple(specs)


def init_network(specs, seed):
    """
    Glorot-uniform weights and zero biases, a pure function of (seed, shapes)

    Args:
        specs (sequence): LayerSpec chain
        seed (int or np.random.SeedSequence): Generator seed

    Returns:
        NetworkParams
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        limit = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim)))
        biases.append(np.zeros(spec.out_dim))
    return NetworkParams(specs=tuple(specs), weights=tuple(weights), biases=tuple(biases))


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(a, grad, activation):
    # derivative expressed through the layer output; relu'(0) = 0
    if activation == "relu":
        return grad * (a > 0)
    if activation == "tanh":
        return grad * (1.0 - a * a)
    return grad


def forward(net, x):
    """
    Run a batch through the network

    Args:
        net (NetworkParams): Parameters
        x (np.ndarray): vector of length in_dim or batch×in_dim

    Returns:
        list: [input, layer 1 output, ..., final output], all 2-D
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"input has {x.shape[1]} features, network expects {net.in_dim}")
    activations = [x]
    for spec, W, b in zip(net.specs, net.weights, net.biases):
        activations.append(_activate(activations[-1] @ W + b, spec.activation))
    if not np.all(np.isfinite(activations[-1])):
        raise NonFiniteError("network output is not finite")
    return activations


def backward(net, activations, loss_grad):
    """
    Reverse-mode gradients of a scalar loss

    Args:
        net (NetworkParams): Parameters used in the forward pass
        activations (list): Output of ``forward``
        loss_grad (np.ndarray): dLoss/dOutput, same shape as the output

    Returns:
        NetworkGrads
    """
    if len(activations) != len(net.specs) + 1:
        raise ShapeError("activations do not come from this network")
    grad = np.atleast_2d(np.asarray(loss_grad, dtype=np.float64))
    if grad.shape != activations[-1].shape:
        raise ShapeError(f"loss gradient shape {grad.shape} does not match output {activations[-1].shape}")
    weight_grads = [None] * len(net.specs)
    bias_grads = [None] * len(net.specs)
    for i in range(len(net.specs) - 1, -1, -1):
        grad = _activation_grad(activations[i + 1], grad, net.specs[i].activation)
        weight_grads[i] = activations[i].T @ grad
        bias_grads[i] = grad.sum(axis=0)
        grad = grad @ net.weights[i].T
    return NetworkGrads(weights=tuple(weight_grads), biases=tuple(bias_grads), input_grad=grad)


def _as_sequence(params):
    if isinstance(params, (NetworkParams, NetworkGrads)):
        return (params,), True
    return tuple(params), False


def init_optimizer(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Fresh optimizer state with zero moments for one network or a tuple of them."""
    nets, _ = _as_sequence(params)
    blocks = [block for net in nets for block in net.blocks()]
    return OptimizerState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step=0,
        first_moments=[np.zeros_like(b) for b in blocks],
        second_moments=[np.zeros_like(b) for b in blocks],
    )


def optimizer_step(state, params, grads):
    """
    One adaptive-moment update

    Args:
        state (OptimizerState): Current state (left untouched)
        params: NetworkParams or a tuple of them
        grads: NetworkGrads or a tuple matching ``params``

    Returns:
        tuple: (updated params with the same structure, new OptimizerState)
    """
    nets, single = _as_sequence(params)
    grad_sets, _ = _as_sequence(grads)
    if len(nets) != len(grad_sets):
        raise ShapeError("one gradient set per network")
    param_blocks, grad_blocks, names = [], [], []
    for index, (net, g) in enumerate(zip(nets, grad_sets)):
        prefix = f"network {index} " if len(nets) > 1 else ""
        param_blocks.extend(net.blocks())
        grad_blocks.extend(g.blocks())
        names.extend(prefix + name for name in net.block_names())
    if len(param_blocks) != len(grad_blocks):
        raise ShapeError("gradient blocks do not match parameter blocks")
    first = state.first_moments or [np.zeros_like(b) for b in param_blocks]
    second = state.second_moments or [np.zeros_like(b) for b in param_blocks]
    if len(first) != len(param_blocks):
        raise ShapeError("optimizer moments do not match parameter blocks")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_blocks, new_first, new_second = [], [], []
    for name, p, g, m, v in zip(names, param_blocks, grad_blocks, first, second):
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} differs from parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}", block=name)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        new_blocks.append(p - update)
        new_first.append(m)
        new_second.append(v)

    updated, offset = [], 0
    for net in nets:
        count = 2 * len(net.specs)
        updated.append(NetworkParams.from_blocks(net.specs, new_blocks[offset:offset + count]))
        offset += count
    new_state = replace(state, step=step, first_moments=new_first, second_moments=new_second)
    return (updated[0] if single else tuple(updated)), new_state


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    worst_block: str
    worst_index: int
    checked: int
    tolerance: float

    @property
    def passed(self):
        return self.max_relative_error <= self.tolerance


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def gradient_check(loss_fn, params, tolerance=1e-4, step=1e-5, max_per_block=None, seed=0):
    """
    Compare analytic gradients with central finite differences

    Args:
        loss_fn (callable): blocks -> (loss, grad blocks); must be deterministic
        params (list): Parameter arrays to perturb
        tolerance (float): Pass threshold recorded in the report
        step (float): Finite-difference step h
        max_per_block (int, optional): Sample this many entries per block
        seed (int): Sampling seed

    Returns:
        GradientCheckReport
    """
    blocks = [np.array(p, dtype=np.float64) for p in params]
    _, analytic = loss_fn(blocks)
    analytic = [np.asarray(g, dtype=np.float64) for g in analytic]
    rng = np.random.default_rng(seed)
    worst = (0.0, "", -1)
    checked = 0
    for b, block in enumerate(blocks):
        flat = block.reshape(-1)
        indices = np.arange(flat.size)
        if max_per_block is not None and flat.size > max_per_block:
            indices = np.sort(rng.choice(flat.size, size=max_per_block, replace=False))
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            plus, _ = loss_fn(blocks)
            flat[idx] = original - step
            minus, _ = loss_fn(blocks)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(analytic[b].reshape(-1)[idx], numeric)
            checked += 1
            if err > worst[0]:
                worst = (err, f"block {b}", int(idx))
    report = GradientCheckReport(worst[0], worst[1], worst[2], checked, tolerance)
    logger.debug("Gradient check: max relative error %.3e over %d entries", report.max_relative_error, checked)
    return report


def save_network(net, path):
    """
    Checkpoint as .npz: a (layers×3) spec table plus W{i}/b{i} arrays

    Returns:
        str: Path written
    """
    spec_table = np.array(
        [[s.in_dim, s.out_dim, _ACTIVATION_CODES[s.activation]] for s in net.specs], dtype=np.int64
    )
    arrays = {"specs": spec_table}
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return str(path)


def load_network(path):
    with np.load(path, allow_pickle=False) as data:
        specs = tuple(
            LayerSpec(int(row[0]), int(row[1]), ACTIVATIONS[int(row[2])]) for row in data["specs"]
        )
        weights = tuple(data[f"W{i}"] for i in range(len(specs)))
        biases = tuple(data[f"b{i}"] for i in range(len(specs)))
    return NetworkParams(specs=specs, weights=weights, biases=biases)
