"""Hand-derived reference values and random fixture builders for the tests."""
import math

import numpy as np

from anneal_decode.models import tabular_from_spec

# Joint masses of the two canonical tables, multiplied out by hand.
M2_JOINT = {(0, 0): 0.75 * 0.5, (0, 1): 0.75 * 0.5, (1, 0): 0.25 * 0.9, (1, 1): 0.25 * 0.1}
M2P_JOINT = {(0, 0): 0.75 * 0.6, (0, 1): 0.75 * 0.4, (1, 0): 0.25 * 0.9, (1, 1): 0.25 * 0.1}


def power_of(joint, alpha):
    z = sum(p**alpha for p in joint.values())
    return {s: p**alpha / z for s, p in joint.items()}


def dirichlet_rows(seed, V, count):
    g = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p = g.dirichlet(np.ones(V))
        p[-1] = 1.0 - math.fsum(p[:-1])
        out.append(p.tolist())
    return out


def random_table(seed, V, L):
    """Full table of depth L with Dirichlet(1) rows."""
    n_rows = sum(V**d for d in range(L))
    rows = dirichlet_rows(seed, V, n_rows)
    spec = {}

    def fill(prefix):
        if len(prefix) >= L:
            return
        spec[",".join(map(str, prefix))] = rows.pop()
        for t in range(V):
            fill(prefix + (t,))

    fill(())
    return tabular_from_spec({"vocab_size": V, "length": L, "rows": spec}, name=f"rand{seed}")
