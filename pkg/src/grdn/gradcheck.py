"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError
from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    per_param_errors: list = field(default_factory=list)
    max_abs_analytic: float = 0.0  # 0 would mean the check never saw a live gradient

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol and self.max_abs_analytic > 0.0


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    build_loss,
    params,
    eps: float = 1e-5,
    op_name: str = "",
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild a fresh scalar-loss graph from ``params`` on
    every call (the parameters are perturbed in place between calls). With
    ``sample`` set, only that many randomly chosen entries per parameter are
    checked, which keeps large composites tractable.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = build_loss()
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"{op_name or 'grad_check'}: loss is not finite")
    backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    live = max((float(np.abs(a).max()) for a in analytic if a is not None), default=0.0)

    if rng is None:
        rng = np.random.default_rng(0)
    per_param = []
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if sample is not None and sample < n:
            idxs = rng.choice(n, size=sample, replace=False)
        else:
            idxs = range(n)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().data.reshape(()))
            flat[i] = orig - eps
            down = float(build_loss().data.reshape(()))
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"{op_name or 'grad_check'}: non-finite perturbed loss")
            numeric = (up - down) / (2.0 * eps)
            a = 0.0 if an is None else float(an.reshape(-1)[i])
            worst = max(worst, _rel_error(a, numeric))
        per_param.append(worst)
    return GradCheckReport(op_name, max(per_param) if per_param else 0.0, per_param, live)
