"""stochpool CLI - Click-based command line interface."""

import sys
from functools import wraps
from pathlib import Path
from typing import List, Optional, Tuple

import click
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn, TimeElapsedColumn

from . import __version__
from .core import COMBO_COLUMNS, REDUCED_COLUMNS, SWEEP_COLUMNS, ExperimentRunner
from .core.kernels.pooling import model_count as count_models
from .data import convert_svhn as convert_svhn_file
from .data import load_dataset
from .exceptions import ConfigError, StochPoolError
from .models.experiment import ExperimentConfig, load_config
from .models.pooling_modes import PoolingMode
from .utils import write_csv
from .utils.console import console, rows_table
from .utils.logging_config import setup_cli_logging
from .utils.serialization import load_checkpoint, read_netpbm


class CLIContext:
    """Settings shared between commands."""

    def __init__(self):
        self.enable_logging = True
        self.log_dir = "logs"


def _modes(text: str) -> List[PoolingMode]:
    try:
        return [PoolingMode.parse(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _sizes(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"sizes must be comma-separated integers: {text!r}") from e


def _handle_errors(fn):
    """Map stochpool errors to their exit codes with a one-line message."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StochPoolError as e:
            console.print(f"[bold red]❌ {type(e).__name__}: {e}[/bold red]")
            sys.exit(e.exit_code)
        except KeyboardInterrupt:
            console.print("\n[bold red]⚠️ Interrupted by user[/bold red]")
            sys.exit(130)

    return wrapper


def _load(config_path: str, seed: Optional[int], out: Optional[str],
          epochs: Optional[int] = None) -> ExperimentConfig:
    config = load_config(config_path)
    return config.with_overrides(seed=seed, output_dir=out, epochs=epochs)


def _runner(ctx: CLIContext, threads: int) -> ExperimentRunner:
    setup_cli_logging(console, ctx.enable_logging, ctx.log_dir)
    return ExperimentRunner(threads=threads, enable_logging=ctx.enable_logging,
                            cli_mode=True, log_dir=ctx.log_dir)


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        TimeElapsedColumn(),
        console=console,
    )


config_option = click.option("--config", "config_path", required=True,
                             type=click.Path(exists=True, dir_okay=False),
                             help="Experiment config (JSON)")
seed_option = click.option("--seed", type=int, default=None, help="Override the master seed")
out_option = click.option("--out", default=None, help="Override the output directory")
threads_option = click.option("--threads", default=1, type=click.IntRange(1, 64),
                              help="Worker threads for evaluation batches")
epochs_option = click.option("--epochs", type=click.IntRange(1), default=None,
                             help="Override the epoch count")


@click.group(invoke_without_command=True)
@click.option("--version", is_flag=True, help="Show version information")
@click.option("--no-logging", is_flag=True, default=False, help="Disable log files")
@click.option("--log-dir", default="logs", help="Directory for log files")
@click.pass_context
def cli(ctx, version, no_logging, log_dir):
    """stochpool - convolutional networks with stochastic pooling.

    Train, evaluate and visualize networks whose pooling layers sample
    from the activations at train time and average over them at test time.
    """
    if version:
        console.print(f"[bold blue]stochpool[/bold blue] v{__version__}")
        sys.exit(0)
    ctx.ensure_object(CLIContext)
    ctx.obj.enable_logging = not no_logging
    ctx.obj.log_dir = log_dir
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@config_option
@seed_option
@out_option
@threads_option
@epochs_option
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None,
              help="Resume from this checkpoint directory")
@click.pass_obj
@_handle_errors
def train(ctx: CLIContext, config_path: str, seed: Optional[int], out: Optional[str],
          threads: int, epochs: Optional[int], checkpoint: Optional[str]):
    """Train a network and write metrics.csv plus checkpoints.

    Examples:
      stochpool train --config configs/mnist-desk.json
      stochpool train --config configs/mnist-desk.json --checkpoint runs/mnist-desk/checkpoints/epoch-0010
    """
    config = _load(config_path, seed, out, epochs)
    runner = _runner(ctx, threads)
    _display_config(config)

    with _progress() as progress:
        task = progress.add_task(f"Training {config.name}", total=config.epochs)
        if checkpoint:
            progress.update(task, completed=load_checkpoint(checkpoint).epoch)

        def progress_callback(stage: str, message: str):
            if stage == "epoch":
                progress.update(task, advance=1, description=message)
            else:
                progress.update(task, description=message)

        result = runner.train(config, resume_from=checkpoint, progress_callback=progress_callback)

    final = result.final if result.metrics else None
    lines = [f"📁 Output: {config.output_dir}", f"💾 Checkpoint: {result.checkpoint}"]
    if final is not None:
        lines.insert(0, f"📊 Final epoch {final.epoch}: train {final.train_error:.2f}%, "
                        f"test {final.test_error:.2f}%, loss {final.train_loss:.4f}")
    console.print(Panel("\n".join(lines), title="Training complete", style="green"))


@cli.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False),
              help="Checkpoint directory")
@click.option("--mode", default=None, help="Test pooling mode (avg, max, stochastic, prob_weight)")
@click.option("--n", "samples", type=click.IntRange(1), default=None,
              help="Average N stochastic passes (Stochastic-N)")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Evaluate on this config's test split instead")
@seed_option
@out_option
@threads_option
@click.pass_obj
@_handle_errors
def evaluate(ctx: CLIContext, checkpoint: str, mode: Optional[str], samples: Optional[int],
             config_path: Optional[str], seed: Optional[int], out: Optional[str], threads: int):
    """Evaluate a checkpoint: error rate and per-class confusion."""
    runner = _runner(ctx, threads)
    test_mode = _modes(mode)[0] if mode else None
    dataset = load_dataset(load_config(config_path).dataset).test if config_path else None
    with console.status("[bold green]Evaluating..."):
        result = runner.evaluate(checkpoint, test_mode=test_mode, n=samples, dataset=dataset, seed=seed)

    classes = result.confusion.shape[0]
    columns = ["true"] + [str(k) for k in range(classes)] + ["count"]
    rows = [dict({"true": str(k), "count": int(result.confusion[k].sum())},
                 **{str(j): int(result.confusion[k, j]) for j in range(classes)})
            for k in range(classes)]
    if classes <= 20:
        console.print(rows_table("Confusion (rows true, columns predicted)", columns, rows))
    console.print(Panel(f"🎯 Mode: {result.mode}\n📊 Error: {result.error:.2f}% of {result.count}",
                        title="Evaluation", style="green"))
    if out:
        write_csv(Path(out) / "confusion.csv", columns, rows)
        write_csv(Path(out) / "eval.csv", ("mode", "error", "count"),
                  [{"mode": str(result.mode), "error": result.error, "count": result.count}])


@cli.command(name="combo-matrix")
@config_option
@click.option("--train-modes", default="avg,max,stochastic,prob_weight", help="Comma-separated train modes")
@click.option("--test-modes", default="avg,max,stochastic,prob_weight", help="Comma-separated test modes")
@seed_option
@out_option
@threads_option
@epochs_option
@click.pass_obj
@_handle_errors
def combo_matrix(ctx: CLIContext, config_path: str, train_modes: str, test_modes: str,
                 seed: Optional[int], out: Optional[str], threads: int, epochs: Optional[int]):
    """Train under each train mode and evaluate under every test mode."""
    config = _load(config_path, seed, out, epochs)
    train_list, test_list = _modes(train_modes), _modes(test_modes)
    runner = _runner(ctx, threads)
    rows = _run_cells(runner.combo_matrix, config, len(train_list) * len(test_list),
                      train_list, test_list)
    console.print(rows_table("Train / test pooling combinations", COMBO_COLUMNS, rows))


@cli.command(name="sweep-pool-size")
@config_option
@click.option("--sizes", default="2,3,4,5", help="Comma-separated pooling window sizes")
@click.option("--modes", default="avg,max,stochastic", help="Comma-separated train modes")
@seed_option
@out_option
@threads_option
@epochs_option
@click.pass_obj
@_handle_errors
def sweep_pool_size(ctx: CLIContext, config_path: str, sizes: str, modes: str, seed: Optional[int],
                    out: Optional[str], threads: int, epochs: Optional[int]):
    """Train and evaluate every (pool size, mode) pair."""
    config = _load(config_path, seed, out, epochs)
    size_list, mode_list = _sizes(sizes), _modes(modes)
    runner = _runner(ctx, threads)
    rows = _run_cells(runner.sweep_pool_size, config, len(size_list) * len(mode_list),
                      size_list, mode_list)
    console.print(rows_table("Pooling size sweep", SWEEP_COLUMNS, rows))


@cli.command(name="reduced-set")
@config_option
@click.option("--sizes", default="1000,2000,3000,5000,10000", help="Comma-separated training set sizes")
@click.option("--modes", default="avg,max,stochastic", help="Comma-separated train modes")
@seed_option
@out_option
@threads_option
@epochs_option
@click.pass_obj
@_handle_errors
def reduced_set(ctx: CLIContext, config_path: str, sizes: str, modes: str, seed: Optional[int],
                out: Optional[str], threads: int, epochs: Optional[int]):
    """Train on reduced training sets of each size."""
    config = _load(config_path, seed, out, epochs)
    size_list, mode_list = _sizes(sizes), _modes(modes)
    runner = _runner(ctx, threads)
    rows = _run_cells(runner.reduced_set, config, len(set(size_list)) * len(mode_list),
                      size_list, mode_list)
    console.print(rows_table("Reduced training sets", REDUCED_COLUMNS, rows))


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False),
              help="Checkpoint directory")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Binary PGM/PPM input image")
@click.option("--index", type=click.IntRange(0), default=None,
              help="Use this test-set image instead of --image")
@click.option("--sources", default="ff", help="Switch source per pool layer, bottom up (rec, ff, un, max, avg)")
@click.option("--grid", default=4, type=click.IntRange(1, 16), help="Samples per montage side")
@click.option("--layer", type=int, default=None, help="Layer index to project (default: top)")
@click.option("--no-rectify", is_flag=True, default=False, help="Do not clamp negatives on the way down")
@click.option("--switches", "switch_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="SPSW switch map for a rec pool layer; repeat bottom up")
@seed_option
@out_option
@threads_option
@click.pass_obj
@_handle_errors
def visualize(ctx: CLIContext, checkpoint: str, image_path: Optional[str], index: Optional[int],
              sources: str, grid: int, layer: Optional[int], no_rectify: bool,
              switch_paths: Tuple[str, ...],
              seed: Optional[int], out: Optional[str], threads: int):
    """Reconstruct top-layer features in pixel space, grid x grid times."""
    if (image_path is None) == (index is None):
        raise click.UsageError("pass exactly one of --image or --index")
    runner = _runner(ctx, threads)
    if image_path is not None:
        image, preprocessed = read_netpbm(image_path), False
    else:
        ckpt = load_checkpoint(checkpoint)
        if ckpt.config is None:
            raise click.UsageError(f"{checkpoint} has no config.json; use --image")
        test = load_dataset(ExperimentConfig.from_dict(ckpt.config).dataset).test
        if index >= len(test):
            raise click.UsageError(f"--index {index} outside test set of {len(test)}")
        image, preprocessed = test.images[index], True

    out_dir = Path(out or Path(checkpoint) / "visualize")
    with console.status(f"[bold green]Reconstructing {grid * grid} sample(s)..."):
        result = runner.visualize(checkpoint, image, [s for s in sources.split(",") if s.strip()],
                                  grid, out_dir, from_layer=layer, rectify=not no_rectify,
                                  seed=seed, preprocessed=preprocessed, switch_files=switch_paths)

    lines = [f"🖼️ {len(result.files)} sample image(s) in {out_dir}"]
    if result.montage:
        lines.append(f"🧩 Montage: {result.montage}")
    if result.similarity:
        lines.append(f"📈 Mean correlation FF-FF {result.similarity['ff_ff']:.4f}, "
                     f"FF-UN {result.similarity['ff_un']:.4f}")
    for pool_index, stats in result.layer_similarity.items():
        lines.append(f"   uniform at layer {pool_index} only: FF-UN {stats['ff_un']:.4f}")
    if result.switch_files:
        lines.append(f"🔀 {len(result.switch_files)} switch map(s) recorded")
    console.print(Panel("\n".join(lines), title="Visualization", style="green"))


@cli.command(name="convert-svhn")
@click.argument("npz_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.pass_obj
@_handle_errors
def convert_svhn(ctx: CLIContext, npz_path: str, out_path: str):
    """Convert an SVHN .npz archive (X, y) to CIFAR-10 style records."""
    count = convert_svhn_file(npz_path, out_path)
    console.print(f"[green]✅ Wrote {count} records to {out_path}[/green]")


@cli.command(name="model-count")
@click.argument("region_size", type=click.IntRange(1))
@click.argument("region_count", type=click.IntRange(0))
def model_count(region_size: int, region_count: int):
    """Number of networks stochastic pooling selects from: N^D."""
    exact, log10 = count_models(region_size, region_count)
    if exact is not None:
        console.print(f"{region_size}^{region_count} = {exact}")
    console.print(f"log10({region_size}^{region_count}) = {log10:.6f}")


def _run_cells(method, config: ExperimentConfig, total: int, *args):
    with _progress() as progress:
        task = progress.add_task(f"Running {config.name}", total=total)

        def progress_callback(stage: str, message: str):
            if stage == "cell":
                progress.update(task, advance=1, description=message)

        return method(config, *args, progress_callback=progress_callback)


def _display_config(config: ExperimentConfig):
    table_rows = [
        {"setting": "dataset", "value": config.dataset.name},
        {"setting": "network", "value": config.network if isinstance(config.network, str) else "inline"},
        {"setting": "pooling", "value": f"{config.pooling.train_mode} / {config.pooling.test_mode} "
                                        f"({config.pooling.window}x{config.pooling.window}, "
                                        f"stride {config.pooling.stride})"},
        {"setting": "epochs", "value": config.epochs},
        {"setting": "batch size", "value": config.optimizer.batch_size},
        {"setting": "seed", "value": config.seed},
        {"setting": "output", "value": config.output_dir},
    ]
    console.print(rows_table(f"⚙️ {config.name}", ("setting", "value"), table_rows))


def main():
    """Main CLI entry point."""
    cli()


if __name__ == "__main__":
    main()
