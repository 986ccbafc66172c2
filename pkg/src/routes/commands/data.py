"""
Commands for datasets and the stage cache
"""

import os

import click

from src.models.zsl.artifact_storage import ArtifactStorage
from src.models.zsl.data_model import DATASET_PRESETS, generate_synthetic, save_features, save_prototypes
from src.models.zsl.exceptions import ConfigError
from src.models.zsl.pipeline import resolve_dims
from src.routes.commands.options import EXIT_STAGE, config_options, fail, handle_errors, resolve_config


@click.command("gen-data")
@config_options
@handle_errors
def gen_data(config_path, out, seed):
    """
    Write a seeded synthetic benchmark as features.csv and prototypes.csv
    """
    config = resolve_config(config_path, seed, out)
    if config.data_source == "csv":
        raise ConfigError("gen-data needs data_source = synthetic or preset", key="data_source")
    data_seed = config.seeds[0]
    try:
        ds, table = generate_synthetic(config.synthetic_spec(data_seed))
        os.makedirs(config.output_dir, exist_ok=True)
        features_path = save_features(ds, os.path.join(config.output_dir, "features.csv"))
        prototypes_path = save_prototypes(table, os.path.join(config.output_dir, "prototypes.csv"))
    except OSError as e:
        fail("gen-data", str(e), EXIT_STAGE)
    click.echo(f"Wrote {ds.n_examples} examples ({len(table.seen_ids)} seen, {len(table.unseen_ids)} unseen classes)")
    click.echo(features_path)
    click.echo(prototypes_path)


@click.command("describe")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@handle_errors
def describe(config_path):
    """
    Print benchmark shapes and the dimensions of the active config
    """
    click.echo("dataset,visual_dim,n,k,n+k,expansion_rate,seen,unseen,examples")
    for preset in DATASET_PRESETS.values():
        total = preset.semantic_dim + preset.expanded_dim
        rate = preset.expanded_dim / preset.semantic_dim
        click.echo(
            f"{preset.name},{preset.visual_dim},{preset.semantic_dim},{preset.expanded_dim},{total},"
            f"{rate:.3f},{preset.seen},{preset.unseen},{preset.examples}"
        )
    if config_path is not None:
        config = resolve_config(config_path, None, None)
        dims = resolve_dims(config)
        k = config.validate_against(dims)
        click.echo(f"active config: d={dims.d} n={dims.n} k={k} m={dims.m} v={dims.v}")


@click.command("cache-list")
@config_options
@handle_errors
def cache_list(config_path, out, seed):
    """
    List cached expansion models
    """
    config = resolve_config(config_path, seed, out)
    result = ArtifactStorage(config.resolved_cache_dir).get_all_entries()
    if not result["success"]:
        fail("cache", result["error"], EXIT_STAGE)
    for entry in result["entries"]:
        click.echo(f"{entry['id'][:12]} {entry['variant']} k={entry['latent_dim']} seed={entry.get('seed')}")
    click.echo(f"{len(result['entries'])} cached model(s)")


@click.command("cache-clear")
@config_options
@handle_errors
def cache_clear(config_path, out, seed):
    """
    Delete every cached expansion model
    """
    config = resolve_config(config_path, seed, out)
    storage = ArtifactStorage(config.resolved_cache_dir)
    listing = storage.get_all_entries()
    if not listing["success"]:
        fail("cache", listing["error"], EXIT_STAGE)
    for entry in listing["entries"]:
        result = storage.delete_entry(entry["id"])
        if not result["success"]:
            fail("cache", result["error"], EXIT_STAGE)
    click.echo(f"Removed {len(listing['entries'])} cached model(s)")
