"""Opportunistic baseline: CLCA with the delay virtual queue swapped out.

The baseline replaces the delay virtual queue by an epsilon-persistent service
queue.  Its persistent arrival is added only while the real queue holds data
(``gated=True``, the default) or every slot (``gated=False``).  Everything else
in the slot loop is shared with CLCA.
"""

import numpy as np

from .scheduler import NEELY, Variant, run_simulation


def update_baseline_queue(Zp, Q, mu_hat_out, D_hat, epsilon, gated=True):
    """``max(Zp - served - dropped, 0) + epsilon * 1{Q > 0}``, with ``Q`` end-of-slot."""
    drained = np.maximum(np.asarray(Zp, dtype=float) - mu_hat_out - D_hat, 0.0)
    if gated:
        return drained + np.where(np.asarray(Q) > 0, epsilon, 0.0)
    return drained + epsilon


def run_baseline_simulation(model, seed=None, T=None, gated=True, substitute_weights=True, **kw):
    variant = NEELY if (gated and substitute_weights) else Variant("neely", gated, substitute_weights)
    return run_simulation(model, seed=seed, T=T, variant=variant, **kw)
