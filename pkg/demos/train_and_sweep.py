"""Train a small model on a few synthetic stacks, then evaluate it with fewer frames.

The same weights run on stacks of any length because the fusion is recurrent.
A short run is enough to see the loss move; the acceptance suite uses 500 steps.

Run:  python demos/train_and_sweep.py [steps]
"""
import sys

from depthfocus.config import RunConfig
from depthfocus.data import stack_seed, synthesize
from depthfocus.metrics import METRIC_COLUMNS
from depthfocus.train import Trainer, frame_sweep

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 40
train = [synthesize(stack_seed(7, i)) for i in range(4)]
val = [synthesize(stack_seed(2024, i)) for i in range(4)]

trainer = Trainer.create(RunConfig(steps=steps))
print(f"{trainer.model.num_parameters():,} parameters")
losses = trainer.fit(train)
shown = sorted(set(range(0, len(losses), max(1, len(losses) // 8))) | {len(losses) - 1})
for step in shown:
    print(f"step {step:4d}  loss {losses[step]:.4f}")

print("\nframes  " + "  ".join(f"{c:>8}" for c in METRIC_COLUMNS))
for k, report in frame_sweep(trainer.model, val, [2, 4, 6, 8, 10]).items():
    print(f"{k:6d}  " + "  ".join(f"{v:8.4f}" for v in report.as_row()))
