"""
Recovery from sampled sequences
===============================

The analysis gives a sequence length that makes recovery succeed with
probability at least 1 - delta.  For eight leaves that length runs to
billions of sites, so instead of writing the sequences out we draw the
counts of each joint leaf pattern directly.  The pairwise agreement
counts, and hence the estimates, have the same distribution either way.
"""

from fasthgt import EvoModel, default_delta_min, sample_length_terms
from fasthgt.cli import aggregate, run_trial, trial_seed

model = EvoModel(m=4, f=0.05, g=0.05)
delta = 0.2
delta_min = default_delta_min(4, model.f)

terms = sample_length_terms(8, delta, 4, model.f, model.g, 3, delta_min)
print(f"for g-depth 3: ell_g={terms.ell_g:.3e}, ell_c={terms.ell_c:.3e}, ell={terms.ell}")

rows = [run_trial(8, model, "uniform", trial_seed(1, i), delta_min, patterns=True, delta=delta)
        for i in range(20)]
summary = aggregate(rows)
print(f"recovered {summary['recovered']} of {summary['trials']} trees, "
      f"95% interval {summary['ci95'][0]:.2f}..{summary['ci95'][1]:.2f}")

# The bound is conservative; short alignments often work too, but without a guarantee.
for ell in (150, 1500):
    short = [run_trial(8, model, "uniform", trial_seed(1, i), delta_min, ell=ell) for i in range(20)]
    print(f"with {ell} sites:", aggregate(short)["recovered"], "of 20 recovered")
