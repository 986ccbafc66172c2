"""
Pipeline Module for the semantic feature expansion toolkit
Runs the staged experiment: data → embed → expand → prototypes → project →
evaluate, plus the ablation, sweep, grid search and gradient checks
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.models.zsl.artifact_storage import ArtifactStorage, stage_key
from src.models.zsl.data_model import (
    FeatureSchema,
    class_centers,
    dims_from_files,
    generate_synthetic,
    load_features,
    load_prototypes,
    normalize_dataset,
    split_partitions,
)
from src.models.zsl.exceptions import ConfigError, StageError, ValidationError
from src.models.zsl.expansion import (
    AlignmentContext,
    ExpansionModel,
    LossWeights,
    build_alignment_context,
    evaluate_expansion_losses,
    init_expansion_model,
    train_expansion,
    unified_loss,
)
from src.models.zsl.linalg_mds import dump_embedding, embed_class_centers, register_embedding
from src.models.zsl.nn_core import NetworkParams, gradient_check
from src.models.zsl.output_generator import MODE_SUFFIX, OutputGenerator, file_sha256
from src.models.zsl.prototypes import build_full_prototype_table
from src.models.zsl.recognition import (
    evaluate,
    init_projection,
    projection_loss,
    tie_decoder,
    train_projection,
)

logger = logging.getLogger("PipelineRunner")

# settings the trained expansion model depends on
_EXPANSION_KEYS = (
    "data_source", "features_path", "prototypes_path", "preset", "m_seen", "v_unseen",
    "visual_dim", "semantic_dim", "factor_dim", "hidden_dim", "hidden_scale", "cluster_spread",
    "examples_per_class", "normalize_features", "register_manifold", "variant", "hidden_units",
    "epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon",
)

GRAD_CHECK_TOLERANCE = 1e-4
GRAD_CHECK_STEP = 1e-5


@dataclass
class PreparedData:
    train: object
    test: object
    table: object


@dataclass
class SeedRun:
    """Everything one seed of the pipeline produced."""

    seed: int
    latent_dim: int
    data: PreparedData
    model: Optional[ExpansionModel] = None
    trace: object = None
    context: Optional[AlignmentContext] = None
    table: object = None
    reports: Dict[str, object] = field(default_factory=dict)


class StageRecorder:
    """
    Runs named stages, times them and wraps failures in StageError
    """

    def __init__(self):
        self.stages: List[dict] = []

    def run(self, name, fn, *args, **kwargs):
        started = time.time()
        logger.info("Stage %s started", name)
        try:
            result = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as e:
            seconds = round(time.time() - started, 3)
            self.stages.append({"name": name, "status": "failed", "seconds": seconds})
            logger.error("Stage %s failed: %s", name, e)
            raise StageError(name, e) from e
        seconds = round(time.time() - started, 3)
        self.stages.append({"name": name, "status": "ok", "seconds": seconds})
        logger.info("Stage %s finished in %.2fs", name, seconds)
        return result


def resolve_dims(config):
    """(d, n, m, v) without running any stage"""
    if config.data_source == "csv":
        try:
            return dims_from_files(config.features_path, config.prototypes_path)
        except Exception as e:
            raise ConfigError(f"cannot read dataset files: {e}", key="features_path") from e
    return config.synthetic_spec(config.seeds[0]).dims


def validate_config(config, sweep=False):
    """Both validation phases; returns the latent dimension a run will use."""
    dims = resolve_dims(config)
    return config.validate_against(dims, sweep=sweep)


def load_data(config, seed):
    """
    Generate or ingest the dataset and split it into train/test partitions

    Returns:
        PreparedData
    """
    if config.data_source == "csv":
        table = load_prototypes(config.prototypes_path)
        ds = load_features(config.features_path, FeatureSchema.from_prototypes(table))
    else:
        ds, table = generate_synthetic(config.synthetic_spec(seed))
    train, test = split_partitions(ds)
    if test is None:
        raise ValidationError("no unseen-class examples to evaluate on")
    if config.normalize_features:
        train, test = normalize_dataset(train), normalize_dataset(test)
    logger.info(
        "Loaded %d training and %d test examples (d=%d, n=%d)",
        train.n_examples, test.n_examples, train.dim, table.n,
    )
    return PreparedData(train=train, test=test, table=table)


def build_context(data, latent_dim, register=True):
    """
    Embed the seen-class centers in n + k dimensions

    With register, the embedding is first rotated, scaled and translated
    onto the seen predefined prototypes.
    """
    seen_ids = data.table.seen_ids
    predefined = data.table.rows_for(seen_ids, "P")
    centers = class_centers(data.train)
    _, _, manifold = embed_class_centers(centers, data.table.n + latent_dim)
    logger.info("Embedded %d class centers, effective rank %d", len(seen_ids), manifold.effective_rank)
    coords = manifold.coords
    if register:
        coords = register_embedding(coords, predefined)
    return build_alignment_context(predefined, coords, seen_ids)


def _expansion_cache_key(config, seed, latent_dim, weights):
    settings = config.to_dict()
    payload = {key: settings[key] for key in _EXPANSION_KEYS}
    if config.data_source == "csv":
        # paths alone miss files rewritten in place
        payload["features_sha256"] = file_sha256(config.features_path)
        payload["prototypes_sha256"] = file_sha256(config.prototypes_path)
    payload.update({"seed": seed, "latent_dim": latent_dim, "alpha": weights.alpha, "beta": weights.beta})
    return stage_key("expand", payload)


def train_or_load_expansion(config, data, context, seed, latent_dim, storage=None, alpha=None, beta=None):
    expansion_config = config.expansion_config(seed, latent_dim, alpha, beta)
    key = None
    if storage is not None:
        key = _expansion_cache_key(config, seed, latent_dim, expansion_config.weights)
        cached = storage.load_expansion(key)
        if cached["success"]:
            logger.info("Cache hit for expansion model %s", key[:12])
            return cached["model"], cached["trace"]
        logger.info("Cache miss for expansion model %s", key[:12])
    model, trace = train_expansion(data.train, context, expansion_config)
    if storage is not None:
        saved = storage.save_expansion(key, model, trace, {"seed": seed})
        if not saved["success"]:
            logger.warning("Could not cache expansion model: %s", saved["error"])
    return model, trace


def _storage(config):
    return ArtifactStorage(config.resolved_cache_dir) if config.cache else None


def run_seed(config, seed, latent_dim, recorder, storage=None, modes=None):
    """
    One seed through every stage

    Args:
        modes (sequence, optional): Prototype segments to evaluate; defaults
            to 'P+E', or 'P' when expansion is disabled

    Returns:
        SeedRun
    """
    data = recorder.run("data", load_data, config, seed)
    run = SeedRun(seed=seed, latent_dim=latent_dim, data=data, table=data.table)
    if latent_dim > 0:
        run.context = recorder.run("embed", build_context, data, latent_dim, config.register_manifold)
        run.model, run.trace = recorder.run(
            "expand", train_or_load_expansion, config, data, run.context, seed, latent_dim, storage
        )
        run.table, _ = recorder.run(
            "prototypes", build_full_prototype_table, data.table, run.model, data.train,
            config.g, config.neighbor_metric, config.normalize_neighbors,
        )
        modes = modes or ("P+E",)
    else:
        modes = ("P",)

    candidates = run.table.restrict(False)
    for mode in modes:
        projection = recorder.run(
            f"project[{mode}]", train_projection, data.train, run.table, config.projection_config(seed), mode
        )
        run.reports[mode] = recorder.run(
            f"evaluate[{mode}]", evaluate, projection, data.test, candidates, config.top_k, config.metric, mode
        )
    return run


def _seed_folder(root, seed, many):
    return os.path.join(root, f"seed_{seed}") if many else root


def _merge_written(top, child):
    if child is top:
        return
    prefix = os.path.relpath(child.output_folder, top.output_folder)
    for name, path in child.written.items():
        top.written[f"{prefix}/{name}"] = path


class _Session:
    """Output folder, recorder and manifest bookkeeping for one command."""

    def __init__(self, config, command):
        self.config = config
        self.command = command
        self.recorder = StageRecorder()
        self.outputs = OutputGenerator(config.output_dir)

    def child(self, seed):
        folder = _seed_folder(self.config.output_dir, seed, len(self.config.seeds) > 1)
        if folder == self.config.output_dir:
            return self.outputs
        return OutputGenerator(folder)

    def emit(self, stage, result):
        if not result["success"]:
            raise StageError(stage, OSError(result.get("error", "write failed")))

    def finish(self, status="ok", failed_stage=None):
        self.outputs.generate_manifest(
            self.command, self.config, self.config.seeds, self.recorder.stages, status, failed_stage
        )

    def execute(self, body):
        try:
            result = body()
        except StageError as e:
            self.finish("failed", e.stage)
            raise
        except Exception as e:
            self.finish("failed", "emit")
            raise StageError("emit", e) from e
        self.finish()
        return result


def write_embedding(data, latent_dim, folder):
    """D, B, eigenvalues and O of the seen-class centers as CSV."""
    D, B, manifold = embed_class_centers(class_centers(data.train), data.table.n + latent_dim)
    result = dump_embedding(folder, D, B, manifold)
    if not result["success"]:
        raise OSError(result["error"])
    return result["files"]


def run_pipeline(config, command="run", embedding=False):
    """
    Full pipeline for every configured seed

    Args:
        embedding (bool): Also write the embedding matrices of the first
            seed under embedding/; skipped when expansion is disabled

    Returns:
        dict: seed -> SeedRun
    """
    latent_dim = validate_config(config)
    session = _Session(config, command)
    storage = _storage(config)

    def body():
        runs = {}
        for seed in config.seeds:
            logger.info("Running seed %d (k=%d)", seed, latent_dim)
            run = run_seed(config, seed, latent_dim, session.recorder, storage)
            outputs = session.child(seed)
            mode = "P+E" if latent_dim > 0 else "P"
            session.emit("emit", outputs.generate_all_outputs(run.reports[mode], run.trace, run.table))
            _merge_written(session.outputs, outputs)
            if embedding and latent_dim > 0 and not runs:
                folder = os.path.join(config.output_dir, "embedding")
                files = session.recorder.run("dump", write_embedding, run.data, latent_dim, folder)
                for name, path in files.items():
                    session.outputs.written[f"embedding/{name}"] = path
            runs[seed] = run
        if len(config.seeds) > 1:
            mode = "P+E" if latent_dim > 0 else "P"
            session.emit("emit", session.outputs.generate_summary_csv(
                {"hit_at_1": [runs[s].reports[mode].top1 for s in config.seeds]}
            ))
        return runs

    return session.execute(body)


def run_ablation(config):
    """
    Evaluate P, E and P+E prototypes from one shared expansion model per seed

    Returns:
        dict: seed -> {mode: EvaluationReport}
    """
    latent_dim = validate_config(config)
    session = _Session(config, "ablate")
    storage = _storage(config)
    modes = ("P", "E", "P+E") if latent_dim > 0 else ("P",)

    def body():
        results = {}
        rows = []
        for seed in config.seeds:
            run = run_seed(config, seed, latent_dim, session.recorder, storage, modes=modes)
            outputs = session.child(seed)
            for mode in modes:
                report = run.reports[mode]
                session.emit("emit", outputs.generate_evaluation_outputs(report, MODE_SUFFIX[mode]))
                dim = run.table.segment(mode).shape[1]
                rows.append((seed, mode, dim, report.top1))
            if run.trace is not None:
                session.emit("emit", outputs.generate_loss_trace_csv(run.trace))
            _merge_written(session.outputs, outputs)
            results[seed] = run.reports
        session.emit("emit", session.outputs.generate_rows_csv(
            "ablation.csv", ("seed", "mode", "dim", "hit_at_1"), rows
        ))
        session.emit("emit", session.outputs.generate_summary_csv(
            {f"hit_at_1_{MODE_SUFFIX[m]}": [results[s][m].top1 for s in config.seeds] for m in modes}
        ))
        return results

    return session.execute(body)


def run_expansion_sweep(config, k_values=None):
    """
    Final alignment loss and Hit@1 for each latent dimension

    Alignment is measured on a full deterministic pass after training.

    Returns:
        list: rows (k, mean final_alignment_loss, mean hit_at_1)
    """
    k_values = tuple(config.sweep_k if k_values is None else k_values)
    if not k_values:
        raise ConfigError("no k values to sweep", key="sweep_k")
    if any(k < 1 for k in k_values):
        raise ConfigError("every swept k must be ≥ 1", key="sweep_k")
    validate_config(config, sweep=False)
    dims = resolve_dims(config)
    for k in k_values:
        if dims.n + k > dims.d - 1:
            raise ConfigError(f"sweep k={k} gives n + k > d - 1 = {dims.d - 1}", key="sweep_k")
    session = _Session(config, "sweep")
    storage = _storage(config)

    def body():
        per_seed = []
        alignment = {k: [] for k in k_values}
        hits = {k: [] for k in k_values}
        for seed in config.seeds:
            for k in k_values:
                run = run_seed(config, seed, k, session.recorder, storage)
                losses = session.recorder.run(
                    f"sweep[k={k}]", evaluate_expansion_losses, run.model, run.data.train, run.context
                )
                alignment[k].append(losses["alignment"])
                hits[k].append(run.reports["P+E"].top1)
                per_seed.append((seed, k, losses["alignment"], run.reports["P+E"].top1))
        rows = [(k, float(np.mean(alignment[k])), float(np.mean(hits[k]))) for k in k_values]
        session.emit("emit", session.outputs.generate_rows_csv(
            "sweep.csv", ("k", "final_alignment_loss", "hit_at_1"), rows
        ))
        if len(config.seeds) > 1:
            session.emit("emit", session.outputs.generate_rows_csv(
                "sweep_by_seed.csv", ("seed", "k", "final_alignment_loss", "hit_at_1"), per_seed
            ))
            metrics = {}
            for k in k_values:
                metrics[f"final_alignment_loss_k{k}"] = alignment[k]
                metrics[f"hit_at_1_k{k}"] = hits[k]
            session.emit("emit", session.outputs.generate_summary_csv(metrics))
        return rows

    return session.execute(body)


def run_grid_search(config):
    """
    Train the expansion model on every (alpha, beta) of the configured grid

    Returns:
        list: rows (alpha, beta, reconstruction, alignment, total), seed means
    """
    latent_dim = validate_config(config)
    if latent_dim == 0:
        raise ConfigError("grid search needs expansion enabled", key="latent_dim")
    session = _Session(config, "grid-search")
    storage = _storage(config)
    grid = [(a, b) for a in config.grid_alpha for b in config.grid_beta]

    def body():
        sums = {pair: np.zeros(3) for pair in grid}
        for seed in config.seeds:
            data = session.recorder.run("data", load_data, config, seed)
            context = session.recorder.run("embed", build_context, data, latent_dim, config.register_manifold)
            for alpha, beta in grid:
                model, _ = session.recorder.run(
                    f"expand[alpha={alpha:g},beta={beta:g}]", train_or_load_expansion,
                    config, data, context, seed, latent_dim, storage, alpha, beta,
                )
                losses = evaluate_expansion_losses(model, data.train, context)
                total = alpha * (losses["reconstruction"] + losses["kl"]) + beta * losses["alignment"]
                sums[(alpha, beta)] += (losses["reconstruction"], losses["alignment"], total)
        count = len(config.seeds)
        rows = [(a, b) + tuple(sums[(a, b)] / count) for a, b in grid]
        session.emit("emit", session.outputs.generate_rows_csv(
            "grid.csv", ("alpha", "beta", "reconstruction", "alignment", "total"), rows
        ))
        return rows

    return session.execute(body)


def _toy_problem(seed, visual_dim=6, semantic_dim=2, latent_dim=3, classes=4, batch=5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, visual_dim))
    labels = rng.integers(0, classes, size=batch)
    context = AlignmentContext(
        predefined=rng.standard_normal((classes, semantic_dim)),
        manifold=rng.standard_normal((semantic_dim + latent_dim, classes)),
        class_ids=tuple(f"c{i}" for i in range(classes)),
    )
    return rng, x, labels, context


def check_expansion_gradients(variant, seed=7, hidden_units=(5, 4), weights=None):
    """Finite-difference check of the unified loss on a three-layer toy network."""
    weights = weights or LossWeights()
    rng, x, labels, context = _toy_problem(seed)
    k = context.k
    model = init_expansion_model(x.shape[1], k, variant, hidden_units, seed)
    eps = rng.standard_normal((x.shape[0], k)) if variant == "vae" else None
    split = len(model.encoder.blocks())

    def loss_fn(blocks):
        encoder = NetworkParams.from_blocks(model.encoder.specs, blocks[:split])
        decoder = NetworkParams.from_blocks(model.decoder.specs, blocks[split:])
        result = unified_loss((x, labels), ExpansionModel(variant, encoder, decoder, k), context, weights, eps)
        return result.total, result.encoder_grads.blocks() + result.decoder_grads.blocks()

    return gradient_check(
        loss_fn, model.encoder.blocks() + model.decoder.blocks(), GRAD_CHECK_TOLERANCE, GRAD_CHECK_STEP, seed=seed
    )


def check_projection_gradients(tied=False, seed=7, lam=1.0):
    """Finite-difference check of the projection loss."""
    rng, x, _, _ = _toy_problem(seed)
    targets = rng.standard_normal((x.shape[0], 4))
    model = init_projection(x.shape[1], targets.shape[1], lam, tied, seed)

    def rebuild(blocks):
        encoder = NetworkParams.from_blocks(model.encoder.specs, blocks[:2])
        if tied:
            decoder = tie_decoder(encoder, NetworkParams(model.decoder.specs, model.decoder.weights, (blocks[2],)))
        else:
            decoder = NetworkParams.from_blocks(model.decoder.specs, blocks[2:])
        return type(model)(encoder, decoder, lam, tied)

    def loss_fn(blocks):
        loss, enc_grads, dec_grads = projection_loss(rebuild(blocks), x, targets)
        grads = enc_grads.blocks() + (dec_grads.blocks()[1:] if tied else dec_grads.blocks())
        return loss, grads

    params = model.encoder.blocks() + (model.decoder.blocks()[1:] if tied else model.decoder.blocks())
    return gradient_check(loss_fn, params, GRAD_CHECK_TOLERANCE, GRAD_CHECK_STEP, seed=seed)


def run_gradient_checks(config):
    """
    Gradient integrity of every trainable loss

    Returns:
        dict: check name -> GradientCheckReport
    """
    session = _Session(config, "grad-check")
    seed = config.seeds[0]
    checks = {
        "unified_loss[ae]": lambda: check_expansion_gradients("ae", seed),
        "unified_loss[vae]": lambda: check_expansion_gradients("vae", seed),
        "projection_loss": lambda: check_projection_gradients(False, seed, config.lam),
        "projection_loss[tied]": lambda: check_projection_gradients(True, seed, config.lam),
    }

    def body():
        reports = {name: session.recorder.run(name, fn) for name, fn in checks.items()}
        rows = [
            (name, r.max_relative_error, r.worst_block, r.worst_index, r.checked, str(r.passed).lower())
            for name, r in reports.items()
        ]
        session.emit("emit", session.outputs.generate_rows_csv(
            "grad_check.csv",
            ("check", "max_relative_error", "worst_block", "worst_index", "checked", "passed"),
            rows,
        ))
        return reports

    return session.execute(body)
