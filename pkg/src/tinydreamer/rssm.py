"""Latent dynamics model: encoder, recurrent core, prior/posterior heads,
reward/continue predictors and the linear projector.

The latent state is s = (h, z): a deterministic recurrent vector h plus a
grouped one-hot categorical sample z. The prior head sees only h; the
posterior head sees h and the observation embedding e.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import engine as ag
from .autodiff.engine import ContractError, Tensor
from .nets import (
    CategoricalGroupParams,
    MlpSpec,
    TwoHotSpec,
    gru_step,
    init_gru,
    init_linear,
    init_mlp,
    linear,
    mlp_forward,
    project,
    straight_through_sample,
    unimix,
)


@dataclass(frozen=True)
class WorldSpec:
    obs_dim: int
    action_dim: int
    deter: int = 128
    groups: int = 8
    classes: int = 8
    embed: int = 128
    hidden: int = 128
    layers: int = 2
    unimix_ratio: float = 0.01
    reward_bins: int = 41
    reward_limit: float = 20.0

    @property
    def z_dim(self) -> int:
        return self.groups * self.classes

    @property
    def state_dim(self) -> int:
        return self.deter + self.z_dim

    @property
    def twohot(self) -> TwoHotSpec:
        return TwoHotSpec(self.reward_bins, self.reward_limit)

    def mlp(self, in_width: int, out_width: int | None = None) -> MlpSpec:
        widths = (in_width,) + (self.hidden,) * (self.layers - 1)
        widths += (out_width if out_width is not None else self.hidden,)
        return MlpSpec(widths)


@dataclass
class LatentState:
    h: Tensor
    z: Tensor  # flat one-hot, (B, G*C)

    def feat(self) -> Tensor:
        return ag.concat([self.h, self.z], axis=-1)

    @property
    def batch(self) -> int:
        return self.h.shape[0]

    def detached(self) -> "LatentState":
        return LatentState(ag.stop_gradient(self.h), ag.stop_gradient(self.z))


@dataclass
class StepOutputs:
    post: CategoricalGroupParams
    prior: CategoricalGroupParams
    e: Tensor
    k: Tensor
    reward_logits: Tensor
    cont_logit: Tensor
    state: LatentState


@dataclass
class SequenceOutputs:
    """Whole-window outputs, flattened timestep-major: row t*B + b."""

    post: CategoricalGroupParams
    prior: CategoricalGroupParams
    e: Tensor  # (T*B, embed)
    k: Tensor  # (T*B, embed)
    reward_logits: Tensor  # (T*B, reward_bins)
    cont_logit: Tensor  # (T*B, 1)
    feats: Tensor  # (T*B, state_dim)
    states: list[LatentState]  # one per timestep
    batch: int
    length: int


def init_world(rng: np.random.Generator, spec: WorldSpec, decoder: bool = False) -> dict[str, np.ndarray]:
    p = {}
    p.update(init_mlp(rng, spec.mlp(spec.obs_dim, spec.embed), "world/enc"))
    p.update(init_gru(rng, spec.state_dim + spec.action_dim, spec.deter, "world/gru"))
    p.update(init_mlp(rng, spec.mlp(spec.deter), "world/prior"))
    p.update(init_linear(rng, spec.hidden, spec.z_dim, "world/prior/head"))
    p.update(init_mlp(rng, spec.mlp(spec.deter + spec.embed), "world/post"))
    p.update(init_linear(rng, spec.hidden, spec.z_dim, "world/post/head"))
    p.update(init_mlp(rng, spec.mlp(spec.state_dim), "world/trunk"))
    p.update(init_linear(rng, spec.hidden, spec.reward_bins, "world/reward"))
    p.update(init_linear(rng, spec.hidden, 1, "world/cont"))
    p.update(init_linear(rng, spec.state_dim, spec.embed, "world/proj", bias=False))
    if decoder:
        p.update(init_mlp(rng, spec.mlp(spec.state_dim), "world/dec"))
        p.update(init_linear(rng, spec.hidden, spec.obs_dim, "world/dec/head"))
    return p


def encode(params, spec: WorldSpec, obs: Tensor) -> Tensor:
    vals = obs.data if isinstance(obs, Tensor) else np.asarray(obs)
    if np.any(vals < 0.0) or np.any(vals > 1.0):
        raise ContractError("observation pixels must lie in [0, 1]")
    if not isinstance(obs, Tensor):
        obs = ag.constant(vals)
    return mlp_forward(params, "world/enc", spec.mlp(spec.obs_dim, spec.embed), obs)


def prior_params(params, spec: WorldSpec, h: Tensor) -> CategoricalGroupParams:
    x = mlp_forward(params, "world/prior", spec.mlp(spec.deter), h)
    logits = linear(params, "world/prior/head", x)
    return unimix(logits, spec.groups, spec.classes, spec.unimix_ratio)


def posterior_params(params, spec: WorldSpec, h: Tensor, e: Tensor) -> CategoricalGroupParams:
    x = mlp_forward(params, "world/post", spec.mlp(spec.deter + spec.embed), ag.concat([h, e], axis=-1))
    logits = linear(params, "world/post/head", x)
    return unimix(logits, spec.groups, spec.classes, spec.unimix_ratio)


def heads(params, spec: WorldSpec, s: Tensor) -> tuple[Tensor, Tensor]:
    trunk = mlp_forward(params, "world/trunk", spec.mlp(spec.state_dim), s)
    return linear(params, "world/reward", trunk), linear(params, "world/cont", trunk)


def decode(params, spec: WorldSpec, s: Tensor) -> Tensor:
    trunk = mlp_forward(params, "world/dec", spec.mlp(spec.state_dim), s)
    return linear(params, "world/dec/head", trunk)


def initial_state(params, spec: WorldSpec, batch: int, rng: np.random.Generator, dtype=np.float32) -> LatentState:
    """h = 0; z sampled from the prior head applied to h = 0."""
    if batch < 1:
        raise ContractError("batch must be >= 1")
    h = ag.constant(np.zeros((batch, spec.deter), dtype=dtype))
    z = straight_through_sample(prior_params(params, spec, h), rng)
    return LatentState(h, z)


def observe_step(
    params,
    spec: WorldSpec,
    prev: LatentState,
    prev_action: np.ndarray | Tensor,
    e: Tensor,
    is_first: np.ndarray,
    rng: np.random.Generator,
    init: LatentState | None = None,
) -> StepOutputs:
    dtype = prev.h.dtype
    if init is None:
        init = initial_state(params, spec, prev.batch, rng, dtype=dtype)
    f = np.asarray(is_first, dtype=dtype).reshape(-1, 1)
    keep = ag.constant(1.0 - f)
    h_prev = ag.add(ag.mul(prev.h, keep), ag.mul(init.h, ag.constant(f)))
    z_prev = ag.add(ag.mul(prev.z, keep), ag.mul(init.z, ag.constant(f)))
    if not isinstance(prev_action, Tensor):
        prev_action = ag.constant(np.asarray(prev_action, dtype=dtype))
    action = ag.mul(prev_action, keep)

    x = ag.concat([h_prev, z_prev, action], axis=-1)
    h = gru_step(params, "world/gru", h_prev, x)
    prior = prior_params(params, spec, h)
    post = posterior_params(params, spec, h, e)
    z = straight_through_sample(post, rng)
    state = LatentState(h, z)
    s = state.feat()
    reward_logits, cont_logit = heads(params, spec, s)
    k = project(params, "world/proj", s)
    return StepOutputs(post, prior, e, k, reward_logits, cont_logit, state)


def imagine_step(
    params, spec: WorldSpec, state: LatentState, action: np.ndarray | Tensor, rng: np.random.Generator
) -> LatentState:
    """Advance with the sequence model and sample z from the prior (no observation)."""
    if not isinstance(action, Tensor):
        action = ag.constant(np.asarray(action, dtype=state.h.dtype))
    x = ag.concat([state.h, state.z, action], axis=-1)
    h = gru_step(params, "world/gru", state.h, x)
    z = straight_through_sample(prior_params(params, spec, h), rng)
    return LatentState(h, z)


def observe_sequence(
    params,
    spec: WorldSpec,
    obs: np.ndarray,  # (B, T, obs_dim)
    action: np.ndarray,  # (B, T, action_dim), row t holds the action before obs t
    is_first: np.ndarray,  # (B, T)
    rng: np.random.Generator,
    dtype=np.float32,
) -> SequenceOutputs:
    B, T = obs.shape[:2]
    if action.shape[:2] != (B, T) or is_first.shape[:2] != (B, T):
        raise ContractError(
            f"inconsistent batch shapes: obs {obs.shape}, action {action.shape}, is_first {is_first.shape}"
        )
    init = initial_state(params, spec, B, rng, dtype=dtype)
    # Only the recurrence is inherently sequential; the encoder runs up front
    # on the whole window and the prior/heads/projection run once on the
    # stacked states afterwards, which keeps the graph small.
    flat_obs = np.asarray(obs, dtype=dtype).transpose(1, 0, 2).reshape(T * B, -1)
    e_all = encode(params, spec, ag.constant(flat_obs))
    state = init
    states: list[LatentState] = []
    post_logits: list[Tensor] = []
    post_probs: list[Tensor] = []
    for t in range(T):
        f = np.asarray(is_first[:, t], dtype=dtype).reshape(-1, 1)
        a = np.asarray(action[:, t], dtype=dtype)
        if np.any(f):
            keep = ag.constant(1.0 - f)
            h_prev = ag.add(ag.mul(state.h, keep), ag.mul(init.h, ag.constant(f)))
            z_prev = ag.add(ag.mul(state.z, keep), ag.mul(init.z, ag.constant(f)))
            act = ag.constant(a * (1.0 - f))
        else:
            h_prev, z_prev, act = state.h, state.z, ag.constant(a)
        x = ag.concat([h_prev, z_prev, act], axis=-1)
        h = gru_step(params, "world/gru", h_prev, x)
        post = posterior_params(params, spec, h, ag.narrow(e_all, 0, t * B, B))
        z = straight_through_sample(post, rng)
        state = LatentState(h, z)
        states.append(state)
        post_logits.append(post.logits)
        post_probs.append(post.probs)

    h_all = ag.concat([s.h for s in states], axis=0)
    z_all = ag.concat([s.z for s in states], axis=0)
    feats = ag.concat([h_all, z_all], axis=-1)
    post_all = CategoricalGroupParams(
        ag.concat(post_logits, axis=0),
        ag.concat(post_probs, axis=0),
        spec.groups,
        spec.classes,
    )
    prior_all = prior_params(params, spec, h_all)
    reward_logits, cont_logit = heads(params, spec, feats)
    k = project(params, "world/proj", feats)
    return SequenceOutputs(
        post_all, prior_all, e_all, k, reward_logits, cont_logit, feats, states, B, T
    )
