"""Noisy-label-robust image segmentation on synthetic head phantoms.

A numpy/scipy toolkit: a beta-cross-entropy loss family with analytic
gradients, a small encoder-decoder segmenter with explicit backprop, a
9-class head-phantom corpus with controllable structured label noise,
Dice-based evaluation, and a deterministic training/comparison harness.
"""

from .errors import BetasegError, ConfigError, FormatError, ShapeError
from .harness import (AdamState, DEFAULT_BETA_GRID, DEFAULT_SUITE_SEEDS, EpochRecord,
                      NOISE_PRESETS, OptimizerConfig, SuiteConfig, TrainConfig,
                      TrainLog, average_reports, class_frequencies, evaluate,
                      parse_suite_config, predict_labels, run_suite, suite_row_tags,
                      train, tune_beta, tune_table_csv)
from .losses import (LossConfig, LossKind, LossResult, bce_loss, ce_loss,
                     compute_loss, hybrid_loss)
from .metrics import (DiceReport, confusion_matrix, dice_per_class,
                      parse_comparison_csv, render_comparison_table)
from .network import (NetworkSpec, ParameterSet, backward, backward_cached,
                      build_and_init, forward, forward_cached, load_checkpoint,
                      parameter_shapes, save_checkpoint)
from .phantom import (BACKGROUND, BONE, CAVITIES, CLASS_NAMES, CSF, Dataset,
                      DEFAULT_CLASS_MEANS, EYES, GM, NUM_CLASSES, NoiseSpec,
                      PhantomSpec, SKIN, SPLIT_TAGS, VENTRICLES, WM, build_dataset,
                      corrupt_labels, generate_phantom, intensity_overlap,
                      read_dataset, split_sizes, write_dataset)

__version__ = "0.1.0"
