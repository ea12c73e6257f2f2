"""Run a scaled-down version of the three-way comparison suite.

Trains clean-label CE, noisy-label CE, noisy-label robust, and noisy-label
hybrid models on two seeds and prints the seed-averaged comparison table.
The full-size experiment is one command:

    betaseg suite --data-config suite.cfg --seeds 2,3,4 --out suite-out

with an empty suite.cfg (all defaults). This demo shrinks every knob so it
finishes in a couple of minutes; expect noisier numbers than the defaults.
"""

import tempfile
from pathlib import Path

from betaseg.harness import SuiteConfig, run_suite

config = SuiteConfig(count=40, resolution=32, epochs=25, warmup_epochs=2,
                     batch_size=8, base_width=8, depth=2, include_hybrid=True)

with tempfile.TemporaryDirectory() as tmp:
    result = run_suite(config, seeds=(0, 1), out_dir=Path(tmp) / "suite")
    print((Path(tmp) / "suite" / "comparison.txt").read_text())

print("rows: noisy-labels scores the corrupted annotations themselves, the")
print("rest are trained models scored on clean test labels.")
