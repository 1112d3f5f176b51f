"""Pointwise versus resolvent convergence on the projection family.

``f_n(theta) = <pi_n theta, theta>`` converges to ``<theta, theta>`` at every
point but not uniformly on the unit sphere. Resolvents still converge, and
the graph distance shrinks to zero once ``n`` reaches the dimension.

Run with ``python3 demos/mosco_fixture.py``.
"""

import numpy as np

from moscolan import default_family, mosco_distance, projection_family, resolvent_convergence_probe

dim = 12
seq, limit = projection_family(dim)
rng = np.random.default_rng(0)
probes = np.vstack([0.5 ** np.arange(dim), rng.standard_normal((7, dim))])
table = resolvent_convergence_probe(seq, limit, probes, 1.0)
fam = default_family(dim)

print(" n   max resolvent gap   graph distance   sup gap on sphere")
for n, (row, f) in enumerate(zip(table, seq), start=1):
    # the worst unit vector is the last basis vector
    e = np.eye(dim)[-1]
    sup_gap = limit.eval(e) - f.eval(e)
    print(f"{n:2d}   {row.max():17.3e}   {mosco_distance(f, limit, fam).value:14.3e}   {sup_gap:17.1f}")
print(f"truncation bound of the graph distance: {fam.tail_bound:.3e}")
