"""Central finite-difference verification of analytic gradients.

Always run in double precision: the store being checked should be built
with dtype=np.float64 so the difference quotient is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import Tensor
from .store import ParameterStore, gradients


@dataclass
class GradCheckReport:
    tolerance: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_error < self.tolerance

    def __str__(self) -> str:
        lines = [f"gradcheck: {'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:g})"]
        for name, err in sorted(self.per_parameter.items()):
            lines.append(f"  {name}: max rel err {err:.3e}")
        for name, msg in self.failures.items():
            lines.append(f"  {name}: {msg}")
        return "\n".join(lines)


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    loss_builder: Callable[[], Tensor],
    store: ParameterStore,
    step: float = 1e-3,
    tolerance: float = 1e-4,
    components=("world", "critic", "actor"),
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_builder()`` with central differences.

    ``loss_builder`` must rebuild the graph from the store's current arrays on
    every call (the store is perturbed in place between calls).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    report = GradCheckReport(tolerance=tolerance)
    analytic = gradients(loss_builder(), store, components)
    for name, grad in analytic.items():
        arr = store.array(name)
        numeric = np.zeros_like(grad)
        it = np.nditer(arr, flags=["multi_index"])
        failed = False
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = float(loss_builder().data)
            arr[idx] = orig - step
            down = float(loss_builder().data)
            arr[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                report.failures[name] = f"non-finite loss at index {idx}"
                failed = True
                break
            numeric[idx] = (up - down) / (2.0 * step)
        if not failed:
            report.per_parameter[name] = _rel_err(grad, numeric)
    return report
