"""The hitting-set construction: a zero objective with K plans exists iff K items hit every set.

For each query the exact best value over a rich plan pool is compared with
a brute-force hitting-set check.
"""

from kadapt import HittingSetSpec, generate_hitting_set_instance, hitting_set_oracle
from kadapt.heuristics import enriched_pool, exact_worst_case
from kadapt.instgen import proof_plans

sets = (frozenset({1, 2}), frozenset({2, 3}), frozenset({4}))
base = HittingSetSpec(4, sets, 1)
inst = generate_hitting_set_instance(base)
pool = enriched_pool(inst, extra_plans=proof_plans(base))
print(f"sets {[sorted(s) for s in sets]} over items 1..4; pool of {len(pool)} plans")
for K in range(1, 5):
    value = exact_worst_case(pool, K)
    answer = hitting_set_oracle(HittingSetSpec(4, sets, K))
    print(f"K={K}: best worst-case objective {value:.4f}, hitting set of size <= {K}: {answer}")
