"""
Parameter Controls Module for the semantic feature expansion toolkit
Handles experiment settings: parsing, validation and the immutable
ExperimentConfig handed to the pipeline
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

from src.models.zsl.data_model import DATASET_PRESETS, SyntheticSpec
from src.models.zsl.exceptions import ConfigError
from src.models.zsl.expansion import VARIANTS, ExpansionConfig, LossWeights, default_latent_dim
from src.models.zsl.prototypes import NEIGHBOR_METRICS
from src.models.zsl.recognition import METRICS, SOLVERS, ProjectionConfig

DATA_SOURCES = ("synthetic", "csv", "preset")
_TRUE = ("true", "yes", "1", "on")
_FALSE = ("false", "no", "0", "off")
_UNSET = ("", "none", "unset")


def _to_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_int(value):
    if isinstance(value, bool):
        raise ValueError("booleans are not integers")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    return int(str(value).strip())


def _to_float(value):
    result = float(str(value).strip()) if not isinstance(value, (int, float)) else float(value)
    if not math.isfinite(result):
        raise ValueError("must be finite")
    return result


def _to_str(value):
    return str(value).strip()


def _list_of(coerce):
    def parse(value):
        if isinstance(value, (list, tuple)):
            items = list(value)
        else:
            items = [item for item in str(value).split(",") if item.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(coerce(item) for item in items)
    return parse


def _optional(coerce):
    def parse(value):
        if value is None or (isinstance(value, str) and value.strip().lower() in _UNSET):
            return None
        return coerce(value)
    return parse


# key -> coercer; defaults live on ExperimentConfig
_COERCERS = {
    "data_source": _to_str,
    "features_path": _optional(_to_str),
    "prototypes_path": _optional(_to_str),
    "preset": _to_str,
    "m_seen": _to_int,
    "v_unseen": _to_int,
    "visual_dim": _to_int,
    "semantic_dim": _to_int,
    "factor_dim": _to_int,
    "hidden_dim": _to_int,
    "hidden_scale": _to_float,
    "cluster_spread": _to_float,
    "examples_per_class": _to_int,
    "normalize_features": _to_bool,
    "register_manifold": _to_bool,
    "latent_dim": _optional(_to_int),
    "expansion_rate": _to_float,
    "variant": _to_str,
    "hidden_units": _list_of(_to_int),
    "alpha": _to_float,
    "beta": _to_float,
    "lam": _to_float,
    "g": _to_int,
    "epochs": _to_int,
    "batch_size": _to_int,
    "learning_rate": _to_float,
    "adam_beta1": _to_float,
    "adam_beta2": _to_float,
    "adam_epsilon": _to_float,
    "projection_solver": _to_str,
    "projection_epochs": _to_int,
    "projection_learning_rate": _to_float,
    "tied_projection": _to_bool,
    "metric": _to_str,
    "neighbor_metric": _to_str,
    "normalize_neighbors": _to_bool,
    "top_k": _optional(_to_int),
    "seeds": _list_of(_to_int),
    "sweep_k": _list_of(_to_int),
    "grid_alpha": _list_of(_to_float),
    "grid_beta": _list_of(_to_float),
    "output_dir": _to_str,
    "cache": _to_bool,
    "cache_dir": _optional(_to_str),
}

# keys that never change what gets computed
_NON_SEMANTIC_KEYS = ("output_dir", "cache", "cache_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Resolved experiment settings

    Build through ParameterControls so that every value is coerced and
    statically validated; call validate_against once the dataset shape is
    known.
    """

    data_source: str = "synthetic"
    features_path: Optional[str] = None
    prototypes_path: Optional[str] = None
    preset: str = "awa"
    m_seen: int = 40
    v_unseen: int = 10
    visual_dim: int = 64
    semantic_dim: int = 24
    factor_dim: int = 2
    hidden_dim: int = 6
    hidden_scale: float = 0.35
    cluster_spread: float = 0.1
    examples_per_class: int = 20
    normalize_features: bool = True
    register_manifold: bool = True
    latent_dim: Optional[int] = None
    expansion_rate: float = 0.6
    variant: str = "vae"
    hidden_units: Tuple[int, ...] = (256,)
    alpha: float = 9.0
    beta: float = 77.0
    lam: float = 1.0
    g: int = 8
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    projection_solver: str = "gradient"
    projection_epochs: int = 200
    projection_learning_rate: float = 1e-3
    tied_projection: bool = False
    metric: str = "cosine"
    neighbor_metric: str = "euclidean"
    normalize_neighbors: bool = False
    top_k: Optional[int] = None
    seeds: Tuple[int, ...] = (7,)
    sweep_k: Tuple[int, ...] = (4, 8, 16, 32)
    grid_alpha: Tuple[float, ...] = (1.0, 5.0, 9.0, 10.0)
    grid_beta: Tuple[float, ...] = (1.0, 11.0, 44.0, 77.0, 110.0)
    output_dir: str = "runs"
    cache: bool = True
    cache_dir: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    def semantic_dict(self):
        """Settings that affect results (output location and caching excluded)."""
        return {k: v for k, v in self.to_dict().items() if k not in _NON_SEMANTIC_KEYS}

    def config_hash(self):
        payload = json.dumps(self.semantic_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @property
    def resolved_cache_dir(self):
        return self.cache_dir or f"{self.output_dir}/.cache"

    @property
    def expansion_enabled(self):
        return self.latent_dim != 0

    def synthetic_spec(self, seed):
        if self.data_source == "preset":
            return SyntheticSpec.from_preset(
                self.preset, seed, self.examples_per_class, self.cluster_spread,
                self.hidden_dim, self.factor_dim, self.hidden_scale,
            )
        return SyntheticSpec(
            seed=seed,
            m_seen=self.m_seen,
            v_unseen=self.v_unseen,
            d=self.visual_dim,
            n=self.semantic_dim,
            cluster_spread=self.cluster_spread,
            examples_per_class=self.examples_per_class,
            hidden_dim=self.hidden_dim,
            factor_dim=self.factor_dim,
            hidden_scale=self.hidden_scale,
        )

    def latent_dim_for(self, dims):
        """Explicit latent_dim, the preset's published k, or the expansion-rate default."""
        if self.latent_dim is not None:
            return self.latent_dim
        if self.data_source == "preset":
            return DATASET_PRESETS[self.preset].expanded_dim
        return default_latent_dim(dims.n, dims.d, self.expansion_rate)

    def expansion_config(self, seed, latent_dim, alpha=None, beta=None):
        return ExpansionConfig(
            latent_dim=latent_dim,
            variant=self.variant,
            hidden_units=self.hidden_units,
            weights=LossWeights(self.alpha if alpha is None else alpha, self.beta if beta is None else beta),
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_epsilon=self.adam_epsilon,
            seed=seed,
        )

    def projection_config(self, seed):
        return ProjectionConfig(
            lam=self.lam,
            epochs=self.projection_epochs,
            batch_size=self.batch_size,
            learning_rate=self.projection_learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_epsilon=self.adam_epsilon,
            solver=self.projection_solver,
            tied=self.tied_projection,
            seed=seed,
        )

    def validate_against(self, dims, sweep=False):
        """
        Dimensional checks once (d, n, m, v) are known

        Args:
            dims (DatasetDims): Resolved dataset shape
            sweep (bool): Also check every sweep_k

        Returns:
            int: The latent dimension k a run will use
        """
        if self.g > dims.m:
            raise ConfigError(f"g={self.g} exceeds the number of seen classes ({dims.m})", key="g")
        if self.top_k is not None and self.top_k > dims.v:
            raise ConfigError(f"top_k={self.top_k} exceeds the number of unseen classes ({dims.v})", key="top_k")
        if dims.v < 1:
            raise ConfigError("the dataset has no unseen classes", key="data_source")
        k = self.latent_dim_for(dims)
        if dims.n + k > dims.d - 1:
            raise ConfigError(f"n + k = {dims.n + k} must be at most d - 1 = {dims.d - 1}", key="latent_dim")
        if k > 0 and self.beta > 0 and dims.m < 2:
            raise ConfigError("alignment needs at least two seen classes", key="m_seen")
        if sweep:
            for value in self.sweep_k:
                if dims.n + value > dims.d - 1:
                    raise ConfigError(f"sweep k={value} gives n + k > d - 1 = {dims.d - 1}", key="sweep_k")
                if value > 0 and self.beta > 0 and dims.m < 2:
                    raise ConfigError("alignment needs at least two seen classes", key="m_seen")
        return k


def _validate_generator(config, require):
    if config.data_source == "preset":
        preset = DATASET_PRESETS[config.preset]
        d, n = preset.visual_dim, preset.semantic_dim
    else:
        d, n = config.visual_dim, config.semantic_dim
    require(config.factor_dim < n, "factor_dim", f"must be below the semantic dimension ({n})")
    require(n + config.hidden_dim <= d, "hidden_dim", f"semantic_dim + hidden_dim must be at most d = {d}")


def _validate(config):
    def require(condition, key, message):
        if not condition:
            raise ConfigError(message, key=key)

    require(config.data_source in DATA_SOURCES, "data_source", f"must be one of {DATA_SOURCES}")
    if config.data_source == "csv":
        require(config.features_path is not None, "features_path", "required when data_source = csv")
        require(config.prototypes_path is not None, "prototypes_path", "required when data_source = csv")
    require(config.preset in DATASET_PRESETS, "preset", f"must be one of {tuple(DATASET_PRESETS)}")
    for key in ("m_seen", "v_unseen", "visual_dim", "semantic_dim", "examples_per_class"):
        require(getattr(config, key) >= 1, key, "must be ≥ 1")
    require(config.hidden_dim >= 0, "hidden_dim", "must be ≥ 0")
    require(config.factor_dim >= 0, "factor_dim", "must be ≥ 0")
    require(config.hidden_scale >= 0, "hidden_scale", "must be ≥ 0")
    if config.data_source != "csv":
        _validate_generator(config, require)
    require(config.cluster_spread >= 0, "cluster_spread", "must be ≥ 0")
    require(config.latent_dim is None or config.latent_dim >= 0, "latent_dim", "must be ≥ 0")
    require(0 <= config.expansion_rate, "expansion_rate", "must be ≥ 0")
    require(config.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
    require(all(h >= 1 for h in config.hidden_units), "hidden_units", "every layer needs ≥ 1 unit")
    require(config.alpha >= 0 and config.beta >= 0, "alpha", "alpha and beta must be ≥ 0")
    require(config.alpha > 0 or config.beta > 0, "beta", "alpha and beta cannot both be 0")
    require(config.lam >= 0, "lam", "must be ≥ 0")
    require(config.g >= 1, "g", "must be ≥ 1")
    require(config.epochs >= 0, "epochs", "must be ≥ 0")
    require(config.projection_epochs >= 0, "projection_epochs", "must be ≥ 0")
    require(config.batch_size >= 1, "batch_size", "must be ≥ 1")
    require(config.learning_rate > 0, "learning_rate", "must be > 0")
    require(config.projection_learning_rate > 0, "projection_learning_rate", "must be > 0")
    require(0 <= config.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)")
    require(0 <= config.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)")
    require(config.adam_epsilon > 0, "adam_epsilon", "must be > 0")
    require(config.projection_solver in SOLVERS, "projection_solver", f"must be one of {SOLVERS}")
    require(
        config.projection_solver != "sylvester" or config.lam > 0,
        "lam", "the closed-form projection needs lam > 0",
    )
    require(config.metric in METRICS, "metric", f"must be one of {METRICS}")
    require(config.neighbor_metric in NEIGHBOR_METRICS, "neighbor_metric", f"must be one of {NEIGHBOR_METRICS}")
    require(config.top_k is None or config.top_k >= 1, "top_k", "must be ≥ 1")
    require(len(config.seeds) >= 1, "seeds", "at least one seed")
    require(all(s >= 0 for s in config.seeds), "seeds", "seeds must be ≥ 0")
    require(all(k >= 1 for k in config.sweep_k), "sweep_k", "every k must be ≥ 1")
    require(all(a >= 0 for a in config.grid_alpha), "grid_alpha", "must be ≥ 0")
    require(all(b >= 0 for b in config.grid_beta), "grid_beta", "must be ≥ 0")
    require(
        not (0.0 in config.grid_alpha and 0.0 in config.grid_beta),
        "grid_beta", "the grid cannot contain alpha = beta = 0",
    )
    require(bool(config.output_dir), "output_dir", "must not be empty")


class ParameterControls:
    """
    Collects experiment settings from files, CLI overrides and dicts and
    builds a validated ExperimentConfig
    """

    def __init__(self):
        self.parameters = ExperimentConfig().to_dict()

    def get_parameters(self):
        return dict(self.parameters)

    def set_parameters(self, params):
        """
        Set several values at once

        Args:
            params (dict): key -> raw value (strings are coerced)

        Returns:
            dict: Updated parameter values
        """
        for key, value in params.items():
            self.set_parameter(key, value)
        return self.get_parameters()

    def set_parameter(self, key, value):
        try:
            coerce = _COERCERS[key]
        except KeyError:
            raise ConfigError("unknown configuration key", key=key) from None
        try:
            self.parameters[key] = coerce(value)
        except (ValueError, TypeError, OverflowError) as e:
            raise ConfigError(f"invalid value {value!r} ({e})", key=key) from None
        return self.parameters[key]

    def from_text(self, text, source="<config>"):
        """
        Parse flat ``key = value`` lines; '#' starts a comment

        Returns:
            dict: Updated parameter values
        """
        seen = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in seen:
                raise ConfigError(f"{source}:{number}: duplicate key (first set on line {seen[key]})", key=key)
            seen[key] = number
            self.set_parameter(key, value)
        return self.get_parameters()

    def from_file(self, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        return self.from_text(text, source=str(path))

    def apply_overrides(self, seed=None, out=None):
        if seed is not None:
            self.set_parameter("seeds", (seed,))
        if out is not None:
            self.set_parameter("output_dir", out)
        return self.get_parameters()

    def to_json(self):
        return json.dumps(self.parameters, sort_keys=True, default=list)

    def from_json(self, json_str):
        try:
            params = json.loads(json_str)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from None
        return self.set_parameters(params)

    def build(self):
        config = ExperimentConfig(**self.parameters)
        _validate(config)
        return config


def load_config(path=None, seed=None, out=None, overrides=None):
    """Defaults, then the config file, then explicit overrides, then --seed/--out."""
    controls = ParameterControls()
    if path is not None:
        controls.from_file(path)
    if overrides:
        controls.set_parameters(overrides)
    controls.apply_overrides(seed=seed, out=out)
    return controls.build()
