"""
The attention ablation over seeds
=================================

Train every cell of the ablation grid on the default benchmark for several
seeds and report mean and spread of CMC-1, plus the paired per-seed
differences that matter: does the full method beat each single component,
and does confidence-peaked fusion beat the medium-hard variant?

Usage: ``python demos/04_ablation.py [num_seeds]`` (default 5, about three
minutes on one core).
"""

import sys

from idembed.config import ExperimentConfig
from idembed.experiments import CELL_LABELS, paired_difference, run_ablation, summarize

num_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
cfg = ExperimentConfig()
results = run_ablation(cfg, seeds=range(num_seeds))

print(f"{'cell':12s} {'CMC-1':>15s} {'mAP':>7s} {'cross CMC-1':>12s}")
for cell, s in summarize(results).items():
    print(f"{CELL_LABELS[cell]:12s} {s['cmc1_mean']:7.3f} ± {s['cmc1_std']:.3f} "
          f"{s['map_mean']:7.3f} {s['cross_cmc1_mean']:12.3f}")

print("\npaired CMC-1 differences (mean ± std over seeds)")
for a, b in [("fla_ffa", "baseline"), ("fla_ffa", "fla"), ("fla_ffa", "ffa"),
             ("fla_ffa", "fla_ffa_mh"), ("fla", "baseline"), ("ffa", "baseline")]:
    m, sd = paired_difference(results, a, b)
    print(f"  {CELL_LABELS[a]:>10s} - {CELL_LABELS[b]:<10s} {m:+.3f} ± {sd:.3f}")
