"""
A small cross-validated experiment
==================================

The full protocol (60 subjects, 50 + 30 epochs, 5 folds, three regularizer
settings) takes hours on one core. This script runs the same pipeline on
15 subjects with a handful of epochs so that the moving parts can be seen
in a few minutes: two-step training, subject-disjoint folds, the metrics
table and the per-epoch logs. Six epochs are far from enough to learn the
phase (expect errors near the all-diastole rate), so read the numbers as a
smoke test only.
"""
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from lvquant.data import generate_dataset
from lvquant.metrics import render_report
from lvquant.training import TrainConfig, prepare_dataset, run_ablation

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="lvq_"))
data = prepare_dataset(generate_dataset(15, seed=1, frames_per_cycle=12))
cfg = replace(TrainConfig(), epochs_step1=6, epochs_step2=4, fold_count=3)

results = run_ablation(data, cfg, out_dir=out)
text, csv = render_report([r.report for r in results.values()])
print(text)
(out / "report.csv").write_text(csv)
print("logs and checkpoints in", out)
for f in sorted(out.iterdir())[:6]:
    print("  ", f.name)
