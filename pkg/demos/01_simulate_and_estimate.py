"""
Simulating sequences and estimating closeness
=============================================

Draw a random rooted tree, evolve sequences down it, and compare the
estimated pairwise closeness with the exact value computed from the
tree.
"""

import numpy as np

from fasthgt import EvoModel, gen_tree, evolve_sequences
from fasthgt import exact_distance_matrix, distance_matrix_from_sequences

# Every edge changes a site with probability between f and g.
model = EvoModel(m=4, f=0.05, g=0.1)
tree = gen_tree(8, "yule_harding", model, seed=7)

# Sites are independent, so longer sequences give tighter estimates.
exact = exact_distance_matrix(tree).closeness
for ell in (1_000, 10_000, 100_000):
    seqs = evolve_sequences(tree, ell, seed=1)
    est = distance_matrix_from_sequences(seqs).closeness
    err = np.abs(est - exact).max()
    print(f"ell={ell:>7}: largest closeness error {err:.4f}  (1/sqrt(ell) = {ell ** -0.5:.4f})")

# Closeness is multiplicative along paths, so distance -ln(c) is additive.
d = exact_distance_matrix(tree).distances
print("exact distances (first 4 leaves):")
print(np.round(d[:4, :4], 4))
