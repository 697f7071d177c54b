"""Reusable network components on top of the autodiff engine.

All forward functions take a mapping of parameter leaf nodes (from
``ParameterStore.bind``) plus a name prefix, so the same code serves live
training graphs and frozen rollout evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import engine as ag
from .autodiff.engine import ContractError, ShapeError, Tensor

RMS_EPS = 1e-6


@dataclass(frozen=True)
class MlpSpec:
    """Widths of a normalized MLP block: in_width, then hidden widths.

    Every layer is linear -> RMS norm (learned scale) -> x*sigmoid(x).
    """

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ContractError(f"invalid MLP widths {self.widths}")

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]


def trunc_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    std = 1.0 / np.sqrt(max(fan_in, 1))
    x = rng.standard_normal(shape)
    return np.clip(x, -2.0, 2.0) * std


def init_mlp(rng, spec: MlpSpec, prefix: str) -> dict[str, np.ndarray]:
    params = {}
    for i, (n_in, n_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        params[f"{prefix}/l{i}/w"] = trunc_normal(rng, (n_in, n_out), n_in)
        params[f"{prefix}/l{i}/b"] = np.zeros(n_out)
        params[f"{prefix}/l{i}/g"] = np.ones(n_out)
    return params


def init_linear(rng, n_in: int, n_out: int, prefix: str, bias: bool = True) -> dict[str, np.ndarray]:
    params = {f"{prefix}/w": trunc_normal(rng, (n_in, n_out), n_in)}
    if bias:
        params[f"{prefix}/b"] = np.zeros(n_out)
    return params


def init_gru(rng, in_width: int, h_width: int, prefix: str) -> dict[str, np.ndarray]:
    gate_bias = np.zeros(2 * h_width)
    gate_bias[h_width:] = -1.0  # update gate biased toward keeping memory
    return {
        f"{prefix}/wg": trunc_normal(rng, (in_width + h_width, 2 * h_width), in_width + h_width),
        f"{prefix}/bg": gate_bias,
        f"{prefix}/wc": trunc_normal(rng, (in_width + h_width, h_width), in_width + h_width),
        f"{prefix}/bc": np.zeros(h_width),
    }


def rms_norm(x: Tensor, scale: Tensor) -> Tensor:
    return ag.rms_norm(x, scale, RMS_EPS)


def linear(params, prefix: str, x: Tensor, bias: bool = True) -> Tensor:
    w = params[f"{prefix}/w"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear {prefix}: input width {x.shape[-1]} != {w.shape[0]}")
    if bias:
        return ag.affine(x, w, params[f"{prefix}/b"])
    return ag.matmul(x, w)


def mlp_forward(params, prefix: str, spec: MlpSpec, x: Tensor) -> Tensor:
    if x.shape[-1] != spec.in_width:
        raise ShapeError(f"mlp {prefix}: input width {x.shape[-1]} != {spec.in_width}")
    for i in range(len(spec.widths) - 1):
        x = ag.dense_act(
            x,
            params[f"{prefix}/l{i}/w"],
            params[f"{prefix}/l{i}/b"],
            params[f"{prefix}/l{i}/g"],
            RMS_EPS,
        )
    return x


def gru_step(params, prefix: str, h: Tensor, x: Tensor) -> Tensor:
    """Gated recurrent update; h' = (1-u)*h + u*candidate."""
    return ag.gru_cell(
        h,
        x,
        params[f"{prefix}/wg"],
        params[f"{prefix}/bg"],
        params[f"{prefix}/wc"],
        params[f"{prefix}/bc"],
    )


# -- categorical groups with unimix ---------------------------------------

@dataclass
class CategoricalGroupParams:
    """Post-unimix categorical parameters for G groups of C classes."""

    logits: Tensor  # (..., G*C) flat
    probs: Tensor  # (..., G*C) flat, every entry >= unimix/C
    groups: int
    classes: int


def unimix(logits: Tensor, groups: int, classes: int, ratio: float = 0.01) -> CategoricalGroupParams:
    probs = ag.unimix_probs(logits, groups, classes, ratio)
    return CategoricalGroupParams(logits=logits, probs=probs, groups=groups, classes=classes)


def sample_onehot(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one-hot samples along the last axis of a probability array."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,))
    idx = (u > cdf).sum(axis=-1)
    idx = np.minimum(idx, probs.shape[-1] - 1)
    return np.eye(probs.shape[-1], dtype=probs.dtype)[idx]


def straight_through_sample(params: CategoricalGroupParams, rng: np.random.Generator) -> Tensor:
    """One-hot forward value; backward flows as if the output were the probs."""
    p = params.probs
    grouped = p.data.reshape(p.data.shape[:-1] + (params.groups, params.classes))
    onehot = sample_onehot(grouped, rng).reshape(p.data.shape)
    return ag.add(p, ag.constant(onehot - p.data))


def mode_onehot(params: CategoricalGroupParams) -> np.ndarray:
    p = params.probs.data
    grouped = p.reshape(p.shape[:-1] + (params.groups, params.classes))
    idx = grouped.argmax(axis=-1)
    return np.eye(params.classes, dtype=p.dtype)[idx].reshape(p.shape)


def categorical_entropy(params: CategoricalGroupParams) -> Tensor:
    p = params.probs
    return ag.mul(ag.reduce_sum(ag.mul(p, ag.log(p)), axis=-1), -1.0)


# -- symlog / two-hot value heads -----------------------------------------

def symlog(x):
    x = np.asarray(x)
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(y):
    y = np.asarray(y)
    return np.sign(y) * np.expm1(np.abs(y))


@dataclass(frozen=True)
class TwoHotSpec:
    """K bins with centers exponentially spaced via symexp of a uniform grid."""

    bins: int = 41
    limit: float = 20.0
    locs: np.ndarray = field(init=False, repr=False)  # uniform grid in symlog space

    def __post_init__(self):
        if self.bins < 3 or self.bins % 2 == 0:
            raise ContractError(f"bin count must be odd and >= 3, got {self.bins}")
        object.__setattr__(self, "locs", np.linspace(-self.limit, self.limit, self.bins))

    @property
    def centers(self) -> np.ndarray:
        return symexp(self.locs)


def two_hot_encode(spec: TwoHotSpec, values: np.ndarray) -> np.ndarray:
    """(...,) values -> (..., K) weights, interpolated in symlog space."""
    values = np.asarray(values, dtype=np.float64)
    y = np.clip(symlog(values), spec.locs[0], spec.locs[-1])
    hi = np.clip(np.searchsorted(spec.locs, y, side="left"), 1, spec.bins - 1)
    lo = hi - 1
    span = spec.locs[hi] - spec.locs[lo]
    w_hi = (y - spec.locs[lo]) / span
    out = np.zeros(values.shape + (spec.bins,))
    np.put_along_axis(out, lo[..., None], (1.0 - w_hi)[..., None], axis=-1)
    hi_cur = np.take_along_axis(out, hi[..., None], axis=-1)
    np.put_along_axis(out, hi[..., None], hi_cur + w_hi[..., None], axis=-1)
    return out


def two_hot_decode(spec: TwoHotSpec, probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs)
    if np.any(probs < -1e-9):
        raise ContractError("two_hot_decode: negative probabilities")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise ContractError(f"two_hot_decode: probabilities sum to {sums} != 1")
    return symexp(probs @ spec.locs)


def project(params, prefix: str, s: Tensor) -> Tensor:
    """Strictly linear (no bias, no activation) map of the state into D dims."""
    return linear(params, prefix, s, bias=False)
