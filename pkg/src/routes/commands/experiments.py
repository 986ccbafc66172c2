"""
Commands for running experiments
"""

import click

from src.models.zsl.output_generator import MODE_SUFFIX
from src.models.zsl.pipeline import (
    run_ablation,
    run_expansion_sweep,
    run_gradient_checks,
    run_grid_search,
    run_pipeline,
)
from src.routes.commands.options import (
    EXIT_GRAD_CHECK,
    config_options,
    fail,
    handle_errors,
    resolve_config,
)


def _format_hits(report, limit=5):
    return ", ".join(f"Hit@{k}={hit:.4f}" for k, hit in enumerate(report.hit_at_k[:limit], start=1))


@click.command("run")
@config_options
@click.option("--dump-embedding", "dump", is_flag=True, help="Also write D, B, eigenvalues and O for the first seed.")
@handle_errors
def run(config_path, out, seed, dump):
    """
    Train, expand and evaluate on the configured dataset
    """
    config = resolve_config(config_path, seed, out)
    runs = run_pipeline(config, embedding=dump)
    for run_seed, result in runs.items():
        report = next(iter(result.reports.values()))
        click.echo(f"seed {run_seed} [{report.mode}] {_format_hits(report)}")
    click.echo(f"Artifacts written to {config.output_dir}")


@click.command("ablate")
@config_options
@handle_errors
def ablate(config_path, out, seed):
    """
    Compare predefined, expanded and combined prototypes
    """
    config = resolve_config(config_path, seed, out)
    results = run_ablation(config)
    for run_seed, reports in results.items():
        parts = [f"{mode}: Hit@1={report.top1:.4f}" for mode, report in reports.items()]
        click.echo(f"seed {run_seed} " + "  ".join(parts))
    click.echo(f"Artifacts written to {config.output_dir} (suffixes {', '.join(MODE_SUFFIX.values())})")


@click.command("sweep")
@config_options
@click.option("--k", "k_values", type=int, multiple=True, help="Latent dimension to sweep; repeatable.")
@handle_errors
def sweep(config_path, out, seed, k_values):
    """
    Alignment loss and accuracy as the expanded dimension grows
    """
    config = resolve_config(config_path, seed, out)
    rows = run_expansion_sweep(config, k_values or None)
    click.echo("k,final_alignment_loss,hit_at_1")
    for k, alignment, hit in rows:
        click.echo(f"{k},{alignment:.6f},{hit:.4f}")


@click.command("grid-search")
@config_options
@handle_errors
def grid_search(config_path, out, seed):
    """
    Final losses over the alpha × beta grid
    """
    config = resolve_config(config_path, seed, out)
    rows = run_grid_search(config)
    click.echo("alpha,beta,reconstruction,alignment,total")
    for alpha, beta, rec, align, total in rows:
        click.echo(f"{alpha:g},{beta:g},{rec:.6f},{align:.6f},{total:.6f}")


@click.command("grad-check")
@config_options
@handle_errors
def grad_check(config_path, out, seed):
    """
    Compare analytic gradients with finite differences
    """
    config = resolve_config(config_path, seed, out)
    reports = run_gradient_checks(config)
    failed = []
    for name, report in reports.items():
        status = "ok" if report.passed else "FAILED"
        click.echo(f"{name}: max relative error {report.max_relative_error:.3e} over {report.checked} entries [{status}]")
        if not report.passed:
            failed.append(name)
    if failed:
        fail("grad-check", f"above tolerance: {', '.join(failed)}", EXIT_GRAD_CHECK)
