"""Named parameter arrays partitioned into model components.

The store owns the persistent arrays (plus per-parameter optimizer slots);
each training step binds them into fresh leaf nodes via :meth:`bind`, so the
graph can be discarded while the arrays live on.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .engine import ContractError, Tensor

COMPONENTS = ("world", "critic", "actor", "critic_ema")


class ParameterStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._arrays: dict[str, np.ndarray] = {}
        self._components: dict[str, str] = {}
        self._opt_state: dict[str, dict] = {}
        self._active: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, component: str) -> None:
        if name in self._arrays:
            raise ContractError(f"duplicate parameter name: {name}")
        if component not in COMPONENTS:
            raise ContractError(f"unknown component {component!r} for {name}")
        self._arrays[name] = np.asarray(array, dtype=self.dtype)
        self._components[name] = component

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def array(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def set_array(self, name: str, value: np.ndarray) -> None:
        self._arrays[name] = np.asarray(value, dtype=self.dtype)

    def component(self, name: str) -> str:
        return self._components[name]

    def names(self, components: Iterable[str] | None = None) -> list[str]:
        if components is None:
            return list(self._arrays)
        wanted = set(components)
        return [n for n, c in self._components.items() if c in wanted]

    def opt_state(self, name: str) -> dict:
        return self._opt_state.setdefault(name, {})

    def bind(self, components: Iterable[str] | None = None, frozen: bool = False) -> Mapping[str, Tensor]:
        """Create leaf nodes over the current arrays.

        ``frozen`` leaves are constants: graphs built on them carry no
        gradient (used for imagination rollouts and the EMA critic). Live
        leaves are registered as the active set that ``gradients`` reads.
        """
        out: dict[str, Tensor] = {}
        for name in self.names(components):
            op = "const" if frozen else "leaf"
            leaf = Tensor(self._arrays[name], op=op)
            out[name] = leaf
            if not frozen:
                self._active[name] = leaf
        return out

    def active_leaves(self) -> Mapping[str, Tensor]:
        return dict(self._active)

    def items(self):
        return self._arrays.items()


def gradients(loss: Tensor, store: ParameterStore, components: Iterable[str]) -> dict[str, np.ndarray]:
    """d(loss)/d(p) for every parameter p of the selected components.

    Parameters that the loss does not reach get an exact-zero gradient;
    parameters outside the selection are not returned at all.
    """
    wanted = set(components)
    active = store.active_leaves()
    for leaf in active.values():
        leaf.grad = None
    reached = loss.backward()
    out: dict[str, np.ndarray] = {}
    for name, leaf in active.items():
        if store.component(name) not in wanted:
            continue
        if id(leaf) in reached and leaf.grad is not None:
            out[name] = leaf.grad
        else:
            out[name] = np.zeros_like(leaf.data)
    return out
