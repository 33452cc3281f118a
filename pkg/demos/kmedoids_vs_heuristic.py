"""Why clustering scenarios by their dose matrices can pick the wrong groups.

Scenarios 0 and 1 are the closest pair in dose-matrix distance, but the plan
that protects scenario 1 is the one built for 0 and 2 together.
"""

import scipy.sparse as sp

from kadapt import (
    ConstraintKind, ConstraintSpec, Instance, ObjectiveSpec, Scenario, run_kmedoids_pipeline, run_main,
)
from kadapt.heuristics import enriched_pool, exact_worst_case

pairs = [(1.9, 2.3), (1.1, 1.4), (3.0, 2.9)]  # (target dose, OAR dose) per unit weight
scenarios = tuple(Scenario(i, sp.csr_matrix([[a], [b]])) for i, (a, b) in enumerate(pairs))
inst = Instance(scenarios, {"target": [0], "oar": [1]}, ObjectiveSpec("target"),
                (ConstraintSpec("oar", ConstraintKind.MAX_DOSE, 12.0),))

km, main = run_kmedoids_pipeline(inst), run_main(inst)
pool = enriched_pool(inst)
for K in (1, 2, 3):
    print(f"K={K}: k-medoids {-km.record(K).w_star:.3f} (clusters {km.partition_history[K][0]}), "
          f"heuristic {-main.record(K).w_star:.3f}, exact {-exact_worst_case(pool, K):.3f}")
