"""
Reconstruction from exact distances
===================================

With noiseless distances the greedy triplet method returns the true
unrooted topology and edge lengths.  An observer callback lets us
watch the tree grow one leaf at a time.
"""

from fasthgt import EvoModel, gen_tree, exact_distance_matrix, fast_hgt
from fasthgt import default_delta_min, suppress_root, rf_distance, max_length_error
from fasthgt import serialize_newick

model = EvoModel(m=4, f=0.05, g=0.1)
tree = gen_tree(12, "uniform", model, seed=3)
dm = exact_distance_matrix(tree)

# Two centers closer than delta_min count as the same node.
delta_min = default_delta_min(4, model.f)


def observer(partial, S, k):
    print(f"{k:>2} leaves in tree, {S.live():>2} leaves have a splitting candidate")


recon = fast_hgt(dm, delta_min, observer=observer)
truth = suppress_root(tree)
topo = recon.to_topology()

print("RF distance to the truth:", rf_distance(truth, topo))
print("largest edge-length error:", max_length_error(truth, topo))
print("split_edge evaluations:", recon.stats.split_edge_calls)
print(serialize_newick(topo))
