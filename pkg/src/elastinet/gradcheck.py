"""Finite-difference validation of the analytic backward rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Parameter, backward

# Relative error uses max(|analytic|, |numeric|, REL_FLOOR) as denominator; the
# floor turns the check into an absolute one for near-zero gradients, where
# central-difference cancellation noise would otherwise dominate the quotient.
REL_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    """Worst relative error per parameter, plus the global maximum."""

    per_param: dict[str, float] = field(default_factory=dict)
    probes: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


def gradcheck(
    loss_fn,
    params: list[Parameter],
    probes_per_param: int = 5,
    step: float = 1e-5,
    seed: int = 0,
    probe_filter=None,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward graph from the current parameter
    values and return a scalar Tensor, deterministically. ``probe_filter``
    (param, row, col) -> bool restricts which entries may be probed, e.g. to
    stay away from the |w| reparameterization kink.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise NumericError("gradcheck: loss is non-finite")
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    for p in params:
        candidates = [
            (r, c)
            for r in range(p.rows)
            for c in range(p.cols)
            if probe_filter is None or probe_filter(p, r, c)
        ]
        if not candidates:
            continue
        worst = 0.0
        n = min(probes_per_param, len(candidates))
        chosen = rng.choice(len(candidates), size=n, replace=False)
        for k in chosen:
            r, c = candidates[int(k)]
            saved = p.data[r, c]
            p.data[r, c] = saved + step
            f_plus = loss_fn().item()
            p.data[r, c] = saved - step
            f_minus = loss_fn().item()
            p.data[r, c] = saved
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"gradcheck: non-finite loss while probing parameter {p.name!r}")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[p.name][r, c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            worst = max(worst, err)
            report.probes += 1
        report.per_param[p.name] = worst

    return report
