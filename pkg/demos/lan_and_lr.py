"""Local asymptotics of the L1 estimator in two small experiments.

1. ``sqrt(n) <theta_hat - theta0, probe>`` is compared with its normal limit
   whose variance is the sandwich value.
2. With ``theta0`` on the boundary of a one-sided null, the calibrated
   criterion difference has an atom of mass one half at zero and a
   chi-square(1) positive part.

Run with ``python3 demos/lan_and_lr.py`` (about a minute on one core).
"""

import numpy as np

from moscolan import HalfSpace, HypothesisSpec, Laplace, ModelSpec, WholeSpace, monte_carlo_lan, monte_carlo_lr

spec = ModelSpec(np.array([1.0, -0.5]), Laplace(1.0), 1000)
lan = monte_carlo_lan(spec, np.array([1.0, 1.0]), 200, seed=1)
print(f"LAN: variance ratio {lan.summary['variance_ratio']:.3f}, KS distance {lan.ks_distance:.3f}")

theta0 = np.array([0.0, 0.5])
hyp = HypothesisSpec(WholeSpace(2), HalfSpace([1.0, 0.0], 0.0), theta0=theta0)
lr = monte_carlo_lr(ModelSpec(theta0, Laplace(1.0), 1000), hyp, 200, seed=2)
print(f"LR: mass at zero {lr.extra['mass_at_zero']:.3f} (limit {lr.extra['limit_mass_at_zero']:.3f}), "
      f"KS of the positive part {lr.ks_distance:.3f} against {lr.extra['ks_reference']}")
print(f"LR quantiles: {', '.join(f'{k}={v:.3f}' for k, v in lr.summary.items() if k.startswith('q'))}")
