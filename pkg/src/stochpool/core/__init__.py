"""
Experiment runner: training, evaluation, the train/test mode matrix,
pooling-size and reduced-set sweeps, and visualization batches.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..data import DataBundle, Dataset, load_dataset, local_contrast_normalize
from ..exceptions import ConfigError, ConsistencyError, DataFormatError, DimensionError, NumericalError
from ..models.experiment import (
    ExperimentConfig, METRICS_COLUMNS, MetricsRow, TIMING_COLUMNS, check_rectified_pooling,
)
from ..models.network_spec import NetworkSpec, PoolLayer
from ..models.pooling_modes import AVERAGE, MAX, PROB_WEIGHT, STOCHASTIC, Phase, PoolingMode
from ..utils import make_rng, read_csv, write_csv
from ..utils.logging_config import get_quiet_logger, setup_logging
from ..utils.serialization import (
    Checkpoint, load_checkpoint, read_switches, save_checkpoint, write_netpbm, write_switches,
    write_tensor,
)
from .kernels.deconviz import (
    RecordedSource, montage, parse_source, reconstruct, similarity_statistic, to_uint8_image,
)
from .kernels.network import (
    Params, init_params, network_backward, network_forward, plan_network, predict,
)
from .kernels.optim import SgdState, momentum_step
from .kernels.pooling import SwitchMap

ProgressCallback = Optional[Callable[[str, str], None]]

COMBO_COLUMNS = ("train_mode", "test_mode", "train_error", "test_error")
SWEEP_COLUMNS = ("size", "mode", "status", "regions", "train_error", "test_error")
REDUCED_COLUMNS = ("n", "mode", "train_error", "test_error")
SIMILARITY_COLUMNS = ("uniform_layer", "samples", "ff_ff", "ff_un")


def default_test_mode(train_mode: PoolingMode) -> PoolingMode:
    """Stochastic training pairs with probabilistic weighting at test time."""
    return PROB_WEIGHT if train_mode.is_stochastic else train_mode


def checkpoint_dir(output_dir: Union[str, Path], epoch: int) -> Path:
    return Path(output_dir) / "checkpoints" / f"epoch-{epoch:04d}"


def latest_checkpoint(output_dir: Union[str, Path]) -> Optional[Path]:
    root = Path(output_dir) / "checkpoints"
    if not root.is_dir():
        return None
    found = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("epoch-")
                   and not p.name.endswith(".tmp"))
    return found[-1] if found else None


@dataclass
class TrainResult:
    config: ExperimentConfig
    spec: NetworkSpec
    params: Params
    metrics: List[MetricsRow]
    checkpoint: Optional[Path]
    bundle: DataBundle

    @property
    def final(self) -> MetricsRow:
        return self.metrics[-1]


@dataclass
class EvalResult:
    error: float
    confusion: np.ndarray
    mode: PoolingMode
    count: int

    @property
    def per_class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)


@dataclass
class VisualizeResult:
    files: List[Path] = field(default_factory=list)
    montage: Optional[Path] = None
    similarity: Optional[Dict[str, float]] = None
    layer_similarity: Dict[int, Dict[str, float]] = field(default_factory=dict)
    switch_files: Dict[int, Path] = field(default_factory=dict)


class ExperimentRunner:
    """
    Runs experiments described by an ExperimentConfig.

    Every random draw comes from a counter-addressed substream of the
    config's master seed, so results do not depend on thread count.
    """

    def __init__(self, threads: int = 1, enable_logging: bool = True, cli_mode: bool = False,
                 log_dir: str = "logs"):
        """
        Args:
            threads: Worker threads for evaluation and visualization batches
            enable_logging: Flag to enable/disable logging
            cli_mode: Log to file only so Rich progress output stays clean
            log_dir: Directory for log files
        """
        if threads < 1:
            raise ConfigError(f"threads must be positive, got {threads}")
        self.threads = threads
        if cli_mode and enable_logging:
            self.logger = get_quiet_logger("StochPool.Runner", log_dir)
        else:
            self.logger = setup_logging(enable_logging, log_dir)

    def _map(self, fn, items: Sequence) -> list:
        """Ordered map, threaded when more than one worker is configured."""
        if self.threads == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(fn, items))

    # evaluation

    def evaluate_dataset(self, spec: NetworkSpec, params: Params, dataset: Dataset, seed: int,
                         tag: int, batch_size: int = 500) -> EvalResult:
        """
        Test-phase error (%) and confusion matrix (rows true, columns predicted).

        Batch b draws stochastic pooling from make_rng(seed, "eval", tag, b).
        """
        n = len(dataset)
        starts = list(range(0, n, batch_size))

        def run(b: int) -> np.ndarray:
            s = starts[b]
            rng = make_rng(seed, "eval", tag, b)
            probs = predict(spec, params, dataset.images[s:s + batch_size], rng)
            return np.argmax(probs, axis=1)

        predictions = np.concatenate(self._map(run, list(range(len(starts))))) if n else np.zeros(0, int)
        classes = spec.classes
        confusion = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(confusion, (dataset.labels, predictions), 1)
        error = 100.0 * float(np.mean(predictions != dataset.labels)) if n else 0.0
        test_mode = spec.layers[spec.pool_layer_indices[0]].test_mode if spec.pool_layer_indices else PROB_WEIGHT
        return EvalResult(error=error, confusion=confusion, mode=test_mode, count=n)

    # training

    def train(self, config: ExperimentConfig, resume_from: Optional[Union[str, Path]] = None,
              progress_callback: ProgressCallback = None,
              bundle: Optional[DataBundle] = None) -> TrainResult:
        """
        Train a network and write metrics.csv, timings.csv and checkpoints
        under config.output_dir.

        Args:
            config: Experiment to run
            resume_from: Checkpoint directory to continue from
            progress_callback: Called with (stage, message)
            bundle: Preloaded data, otherwise loaded from config.dataset

        Raises:
            NumericalError: loss or gradients became non-finite; the message
                names the last good checkpoint
        """
        spec = config.network_spec()
        dtype = np.dtype(config.dtype)
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(config.to_json(), encoding="utf-8")

        if bundle is None:
            if progress_callback:
                progress_callback("loading", f"Loading dataset {config.dataset.name}")
            bundle = load_dataset(config.dataset)
        train, test = bundle.train, bundle.test
        opt = config.optimizer

        if resume_from is not None:
            ckpt = load_checkpoint(resume_from)
            if ckpt.spec_hash != spec.spec_hash():
                raise ConsistencyError(f"{resume_from} was trained with a different network")
            if ckpt.seed != config.seed:
                raise ConfigError(f"{resume_from} used seed {ckpt.seed}, config has {config.seed}")
            params = {name: value.astype(dtype) for name, value in ckpt.params.items()}
            missing = [name for name in params if name not in ckpt.velocities]
            if missing:
                raise DataFormatError(f"{resume_from} has no optimizer velocity for {', '.join(missing)}")
            velocities = {name: ckpt.velocities[name].astype(dtype) for name in params}
            start_epoch = ckpt.epoch
            steps = int(ckpt.hyper.get("sgd_steps", 0))
            self.logger.info(f"Resuming {config.name} from {resume_from} at epoch {start_epoch}")
        else:
            params = init_params(spec, make_rng(config.seed, "init"), opt.filter_std, dtype)
            velocities = {name: np.zeros_like(value) for name, value in params.items()}
            start_epoch, steps = 0, 0

        state = SgdState(velocities=velocities, momentum=opt.momentum, weight_decay=opt.weight_decay,
                         base_rates=opt.base_rates, total_epochs=config.epochs, steps=steps)

        metrics_path, timings_path = out_dir / "metrics.csv", out_dir / "timings.csv"
        metrics: List[MetricsRow] = []
        for path, columns in ((metrics_path, METRICS_COLUMNS), (timings_path, TIMING_COLUMNS)):
            kept = []
            if resume_from is not None and path.exists():
                kept = [row for row in read_csv(path) if int(row["epoch"]) <= start_epoch]
            write_csv(path, columns, kept)

        last_good = Path(resume_from) if resume_from is not None else None
        self.logger.info(f"Training {config.name}: {spec.name}, {len(train)} images, "
                         f"epochs {start_epoch + 1}..{config.epochs}, seed {config.seed}")

        for epoch in range(start_epoch, config.epochs):
            started = time.perf_counter()
            try:
                loss, train_error = self._train_epoch(config, spec, params, state, train, epoch)
            except NumericalError as e:
                self.logger.error(f"Epoch {epoch + 1}: {e}; last good checkpoint: {last_good}")
                raise NumericalError(f"{e} (last good checkpoint: {last_good})") from e

            result = self.evaluate_dataset(spec, params, test, config.seed, epoch, config.eval_batch_size)
            rates = state.rates_at(epoch)
            row = MetricsRow(epoch=epoch + 1, train_error=train_error, test_error=result.error,
                             train_loss=loss, lr_conv=rates["conv"], lr_softmax=rates["softmax"],
                             wall_clock_seconds=time.perf_counter() - started)
            metrics.append(row)
            write_csv(metrics_path, METRICS_COLUMNS, [dict(zip(METRICS_COLUMNS, row.metrics_values()))],
                      append=True)
            write_csv(timings_path, TIMING_COLUMNS, [dict(zip(TIMING_COLUMNS, row.timing_values()))],
                      append=True)
            self.logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {loss:.4f}, "
                             f"train {train_error:.2f}%, test {result.error:.2f}%")

            if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                last_good = self._save(config, spec, params, state, bundle, epoch + 1)
            if progress_callback:
                progress_callback("epoch", f"Epoch {epoch + 1}/{config.epochs}: "
                                  f"train {train_error:.2f}% test {result.error:.2f}%")

        return TrainResult(config=config, spec=spec, params=params, metrics=metrics,
                           checkpoint=last_good, bundle=bundle)

    def _train_epoch(self, config: ExperimentConfig, spec: NetworkSpec, params: Params,
                     state: SgdState, train: Dataset, epoch: int) -> Tuple[float, float]:
        """One pass over the shuffled training set; returns (mean loss, train error %)."""
        batch_size = config.optimizer.batch_size
        order = make_rng(config.seed, "shuffle", epoch).permutation(len(train))
        total_loss, wrong = 0.0, 0
        for step, start in enumerate(range(0, len(train), batch_size)):
            idx = order[start:start + batch_size]
            images, labels = train.images[idx], train.labels[idx]
            rng = make_rng(config.seed, "pool", epoch, step)
            trace = network_forward(spec, params, images, Phase.TRAIN, rng,
                                    stream_label=f"pool:{epoch}:{step}")
            loss, grads = network_backward(spec, params, trace, labels)
            if not np.isfinite(loss):
                raise NumericalError(f"loss is {loss} at epoch {epoch + 1}, step {step}")
            momentum_step(state, params, grads, epoch)
            total_loss += loss * len(idx)
            wrong += int(np.count_nonzero(np.argmax(trace.logits, axis=1) != labels))
        return total_loss / len(train), 100.0 * wrong / len(train)

    def _save(self, config: ExperimentConfig, spec: NetworkSpec, params: Params, state: SgdState,
              bundle: DataBundle, epoch: int) -> Path:
        checkpoint = Checkpoint(
            spec=spec,
            params=params,
            epoch=epoch,
            seed=config.seed,
            velocities=state.velocities,
            hyper={
                "momentum": repr(state.momentum),
                "weight_decay": repr(state.weight_decay),
                "lr_conv": repr(state.base_rates["conv"]),
                "lr_softmax": repr(state.base_rates["softmax"]),
                "total_epochs": str(state.total_epochs),
                "sgd_steps": str(state.steps),
                "dtype": config.dtype,
            },
            config=config.to_dict(),
            mean_image=bundle.mean_image,
            preprocessing=bundle.provenance,
        )
        return save_checkpoint(checkpoint_dir(config.output_dir, epoch), checkpoint)

    # evaluation of saved models

    def evaluate(self, checkpoint: Union[str, Path], test_mode: Optional[PoolingMode] = None,
                 n: Optional[int] = None, dataset: Optional[Dataset] = None,
                 seed: Optional[int] = None) -> EvalResult:
        """
        Evaluate a checkpoint on its config's test split (or on dataset).

        Args:
            checkpoint: Checkpoint directory
            test_mode: Pooling mode at test time; defaults to the trained one
            n: Sample count, turns test_mode into Stochastic-N
            dataset: Evaluate on this instead of the configured test split
            seed: Evaluation seed; defaults to the run's master seed
        """
        ckpt = load_checkpoint(checkpoint)
        spec = ckpt.spec
        if n is not None:
            test_mode = PoolingMode.stochastic_n(n)
        if test_mode is not None:
            spec = spec.with_pooling(test_mode=test_mode)
            check_rectified_pooling(spec)
        if dataset is None:
            if ckpt.config is None:
                raise ConfigError(f"{checkpoint} has no config.json; pass a dataset")
            config = ExperimentConfig.from_dict(ckpt.config)
            dataset = load_dataset(config.dataset).test
        if dataset.image_shape != tuple(spec.input_shape):
            raise DimensionError(f"dataset images {dataset.image_shape} do not fit network {spec.input_shape}")
        batch_size = int(ckpt.config.get("eval_batch_size", 500)) if ckpt.config else 500
        params = {name: value.astype(ckpt.hyper.get("dtype", "float64")) for name, value in ckpt.params.items()}
        result = self.evaluate_dataset(spec, params, dataset, ckpt.seed if seed is None else seed,
                                       ckpt.epoch - 1, batch_size)
        self.logger.info(f"Evaluated {checkpoint} with {result.mode}: {result.error:.2f}% error")
        return result

    # sweeps

    def combo_matrix(self, config: ExperimentConfig, train_modes: Sequence[PoolingMode],
                     test_modes: Sequence[PoolingMode],
                     progress_callback: ProgressCallback = None) -> List[Dict[str, object]]:
        """Train once per train mode and evaluate under every test mode."""
        if not train_modes or not test_modes:
            raise ConfigError("combo matrix needs at least one train and one test mode")
        bundle = load_dataset(config.dataset)
        rows = []
        for train_mode in train_modes:
            cell = config.with_overrides(
                output_dir=str(Path(config.output_dir) / f"train-{train_mode}"),
                pooling={"train_mode": train_mode, "test_mode": default_test_mode(train_mode)},
            )
            result = self.train(cell, bundle=bundle)
            for test_mode in test_modes:
                spec = result.spec.with_pooling(test_mode=test_mode)
                check_rectified_pooling(spec)
                evaluation = self.evaluate_dataset(spec, result.params, bundle.test, config.seed,
                                                   config.epochs - 1, config.eval_batch_size)
                rows.append({"train_mode": str(train_mode), "test_mode": str(test_mode),
                             "train_error": result.final.train_error, "test_error": evaluation.error})
                if progress_callback:
                    progress_callback("cell", f"train {train_mode} / test {test_mode}: "
                                      f"{evaluation.error:.2f}%")
        write_csv(Path(config.output_dir) / "combo_matrix.csv", COMBO_COLUMNS, rows)
        return rows

    def sweep_pool_size(self, config: ExperimentConfig, sizes: Sequence[int],
                        modes: Sequence[PoolingMode] = (AVERAGE, MAX, STOCHASTIC),
                        progress_callback: ProgressCallback = None) -> List[Dict[str, object]]:
        """One train+eval per (size, mode); sizes the network cannot hold are marked skipped."""
        bundle = load_dataset(config.dataset)
        rows = []
        for size in sizes:
            for mode in modes:
                row: Dict[str, object] = {"size": size, "mode": str(mode)}
                cell = config.with_overrides(
                    output_dir=str(Path(config.output_dir) / f"size-{size}-{mode}"),
                    pooling={"window": size, "train_mode": mode, "test_mode": default_test_mode(mode)},
                )
                try:
                    spec = cell.network_spec()
                    plans = plan_network(spec)
                except (ConfigError, DimensionError) as e:
                    self.logger.warning(f"Pool size {size} skipped: {e}")
                    row.update(status="skipped", regions="")
                    rows.append(row)
                    continue
                row["regions"] = ";".join(str(p.geometry.region_count) for p in plans
                                          if isinstance(p.layer, PoolLayer))
                result = self.train(cell, bundle=bundle)
                row.update(status="ok", train_error=result.final.train_error,
                           test_error=result.final.test_error)
                rows.append(row)
                if progress_callback:
                    progress_callback("cell", f"size {size} {mode}: {result.final.test_error:.2f}%")
        write_csv(Path(config.output_dir) / "sweep_pool_size.csv", SWEEP_COLUMNS, rows)
        return rows

    def reduced_set(self, config: ExperimentConfig, sizes: Sequence[int],
                    modes: Sequence[PoolingMode] = (AVERAGE, MAX, STOCHASTIC),
                    progress_callback: ProgressCallback = None) -> List[Dict[str, object]]:
        """Train on subsamples of n training images; rows ascend in n."""
        rows = []
        for n in sorted(set(sizes)):
            dataset = replace(config.dataset, subsample_n=n)
            bundle = load_dataset(dataset)
            for mode in modes:
                cell = config.with_overrides(
                    dataset=dataset,
                    output_dir=str(Path(config.output_dir) / f"n-{n}-{mode}"),
                    pooling={"train_mode": mode, "test_mode": default_test_mode(mode)},
                )
                result = self.train(cell, bundle=bundle)
                rows.append({"n": n, "mode": str(mode), "train_error": result.final.train_error,
                             "test_error": result.final.test_error})
                if progress_callback:
                    progress_callback("cell", f"n={n} {mode}: {result.final.test_error:.2f}%")
        write_csv(Path(config.output_dir) / "reduced_set.csv", REDUCED_COLUMNS, rows)
        return rows

    # visualization

    def prepare_image(self, checkpoint: Checkpoint, image: np.ndarray) -> np.ndarray:
        """Apply a checkpoint's preprocessing to one raw uint8 (c, h, w) image."""
        x = np.asarray(image, dtype=np.float64)[None]
        config = ExperimentConfig.from_dict(checkpoint.config) if checkpoint.config else None
        if config is not None and config.dataset.scale and config.dataset.name != "blobs":
            x = x / 255.0
        if config is not None and config.dataset.lcn:
            single = Dataset(x, np.zeros(1, dtype=np.int64), checkpoint.spec.classes)
            x = local_contrast_normalize(single, config.dataset.lcn_radius, config.dataset.lcn_floor).images
        if checkpoint.mean_image is not None:
            x = x - checkpoint.mean_image.reshape((1,) + x.shape[1:])
        return x

    def visualize(self, checkpoint: Union[str, Path], image: np.ndarray, sources: Sequence[str],
                  grid: int, out_dir: Union[str, Path], from_layer: Optional[int] = None,
                  rectify: bool = True, seed: Optional[int] = None,
                  preprocessed: bool = False,
                  switch_files: Sequence[Union[str, Path]] = ()) -> VisualizeResult:
        """
        Reconstruct one image's top features grid*grid times.

        Args:
            checkpoint: Trained checkpoint directory
            image: Raw uint8 (c, h, w) image, or an already preprocessed one
            sources: One source name (rec, ff, un, max, avg) for every pool
                layer, or one per pool layer from the bottom up
            grid: Samples per side of the montage
            out_dir: Where sample files, switch maps, montage and similarity.csv go
            from_layer: Layer to project; defaults to the last layer below softmax
            rectify: Clamp negatives at ReLU layers on the way down
            seed: Resampling seed; defaults to the run's master seed
            preprocessed: image is already in network input space
            switch_files: SPSW files replacing the trace's switches for the
                pool layers whose source is rec, bottom up
        """
        if grid < 1:
            raise ConfigError(f"grid must be positive, got {grid}")
        ckpt = load_checkpoint(checkpoint)
        spec, params = ckpt.spec, ckpt.params
        seed = ckpt.seed if seed is None else seed
        pools = spec.pool_layer_indices
        if len(sources) == 1:
            sources = list(sources) * len(pools)
        if len(sources) != len(pools):
            raise ConfigError(f"need 1 or {len(pools)} switch sources, got {len(sources)}")
        from_layer = len(spec.layers) - 2 if from_layer is None else from_layer

        replayed: Dict[int, SwitchMap] = {}
        if switch_files:
            recorded = [i for i, name in zip(pools, sources)
                        if isinstance(parse_source(name), RecordedSource)]
            if len(switch_files) != len(recorded):
                raise ConfigError(f"{len(switch_files)} switch file(s) for {len(recorded)} rec pool layer(s)")
            replayed = {i: read_switches(path) for i, path in zip(recorded, switch_files)}

        x = np.asarray(image, dtype=np.float64)
        x = x[None] if preprocessed else self.prepare_image(ckpt, image)
        if x.shape[1:] != tuple(spec.input_shape):
            raise DimensionError(f"image {x.shape[1:]} does not fit network {spec.input_shape}")
        trace = network_forward(spec, params, x, Phase.TRAIN, make_rng(seed, "visualize"))

        def sample(k: int, names: Sequence[str]) -> np.ndarray:
            chosen = {i: parse_source(name, seed, k) for i, name in zip(pools, names)}
            for i, source in chosen.items():
                if isinstance(source, RecordedSource) and i in replayed:
                    chosen[i] = RecordedSource(replayed[i])
            return reconstruct(spec, params, trace, from_layer, chosen, rectify)[0]

        out_dir = Path(out_dir)
        suffix = "pgm" if spec.input_shape[0] == 1 else "ppm"
        result = VisualizeResult()
        maps = self._map(lambda k: sample(k, sources), list(range(grid * grid)))
        images = [to_uint8_image(m) for m in maps]
        for k, (raw, pixels) in enumerate(zip(maps, images)):
            result.files.append(write_netpbm(out_dir / f"sample-{k:02d}.{suffix}", pixels))
            write_tensor(out_dir / f"sample-{k:02d}.sp4t", raw)
        if grid > 1:
            result.montage = write_netpbm(out_dir / f"montage.{suffix}", montage(images, grid))
        for index, switches in sorted(trace.switches.items()):
            result.switch_files[index] = write_switches(out_dir / f"switches-layer{index:02d}.spsw", switches)

        # Uniform draws use sample numbers past the feed-forward set so no
        # pair of compared reconstructions shares a feed-forward draw.
        count = max(grid * grid, 2)
        ff = self._map(lambda k: sample(k, ["ff"] * len(pools)), list(range(count)))
        swapped = list(range(count, 2 * count))
        un = self._map(lambda k: sample(k, ["un"] * len(pools)), swapped)
        result.similarity = similarity_statistic(ff, un)
        rows = [{"uniform_layer": "all", "samples": count, **result.similarity}]
        for index in pools:
            names = ["un" if i == index else "ff" for i in pools]
            one = self._map(lambda k, names=names: sample(k, names), swapped)
            result.layer_similarity[index] = similarity_statistic(ff, one)
            rows.append({"uniform_layer": index, "samples": count, **result.layer_similarity[index]})
        write_csv(out_dir / "similarity.csv", SIMILARITY_COLUMNS, rows)
        self.logger.info(f"Visualized {checkpoint} into {out_dir}: "
                         f"ff_ff {result.similarity['ff_ff']:.4f}, ff_un {result.similarity['ff_un']:.4f}")
        for index, stats in result.layer_similarity.items():
            self.logger.debug(f"Uniform switches at layer {index} only: ff_un {stats['ff_un']:.4f}")
        return result
