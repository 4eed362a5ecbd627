"""
Quadratic work, linear space
============================

The candidate array keeps one splitting tuple per outside leaf and only
the three edges created by an insertion are rescanned, so the number of
split evaluations grows with n squared.  We fit the log-log slope.
"""

from fasthgt.cli import run_bench

res = run_bench([100, 200, 400, 800], seed=0)
for row in res["rows"]:
    print(f"n={row['n']:>4}  splits={row['split_edge_calls']:>9}  "
          f"peak tuples={row['peak_live_tuples']:>4}  nodes={row['peak_nodes']:>5}  {row['seconds']:.3f}s")
print(f"slope of split count: {res['count_slope']:.3f}")
print(f"slope of wall time:   {res['time_slope']:.3f}")
