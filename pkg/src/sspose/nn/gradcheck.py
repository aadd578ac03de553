"""Central finite-difference verification of the reverse-mode gradients.

Probes that step across a discrete branch (a ReLU kink, an argmax flip in a
pseudo-label, a confidence-floor crossing) are detected by comparing state
fingerprints of the two side evaluations and reported as skipped rather than
counted: the analytic gradient is one-sided there by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import trace_states

FD_EPS = 1e-5
ABS_FLOOR = 1e-9       # |analytic - numeric| below this counts as exact


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    worst: tuple = ()
    records: list = field(default_factory=list)

    def __str__(self):
        return (f"grad check: max rel err {self.max_rel_error:.3e} over "
                f"{self.n_checked} probes ({self.n_skipped} skipped at kinks)")


def _eval(loss_fn):
    with trace_states() as trace:
        value = loss_fn()
    return float(value.data), trace.hasher.digest()


def grad_check(net, loss_fn, probes: int = 200, eps: float = FD_EPS,
               seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must be deterministic and re-evaluate the full forward pass each
    call (it reads the net's current parameters). Probes are random
    (parameter, element) picks; a probe whose +/-eps evaluations take
    different discrete branches is skipped and replaced while the probe
    budget allows.
    """
    rng = np.random.default_rng(seed)
    params = net.parameters()
    net.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    result = GradCheckResult(0.0, 0, 0)
    budget = probes * 3   # replacements for skipped probes come out of this
    attempts = 0
    while result.n_checked < probes and attempts < budget:
        attempts += 1
        flat = int(rng.integers(total))
        pi = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        offset = flat - int(np.cumsum(sizes)[pi - 1]) if pi > 0 else flat
        p = params[pi]
        base = p.data.flat[offset]
        p.data.flat[offset] = base + eps
        f_plus, state_plus = _eval(loss_fn)
        p.data.flat[offset] = base - eps
        f_minus, state_minus = _eval(loss_fn)
        p.data.flat[offset] = base
        if state_plus != state_minus:
            result.n_skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2 * eps)
        analytic = grads[pi].flat[offset]
        diff = abs(analytic - numeric)
        rel = 0.0 if diff < ABS_FLOOR else diff / max(abs(analytic), abs(numeric), ABS_FLOOR)
        result.records.append((p.name, offset, analytic, numeric, rel))
        if rel > result.max_rel_error:
            result.max_rel_error = rel
            result.worst = (p.name, offset, analytic, numeric)
        result.n_checked += 1
    return result
