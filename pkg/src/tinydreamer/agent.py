"""Actor-critic learning on imagined rollouts.

Rollouts are produced with frozen parameters (the dynamics path carries no
gradient; the policy gradient is pure REINFORCE), then the critic and actor
losses rebuild their heads with live leaves on the recorded states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import engine as ag
from .autodiff.engine import ContractError, Tensor
from .nets import (
    MlpSpec,
    init_linear,
    init_mlp,
    linear,
    mlp_forward,
    mode_onehot,
    sample_onehot,
    symexp,
    two_hot_encode,
    unimix,
)
from .rssm import LatentState, WorldSpec, heads, imagine_step

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ActionSpec:
    dim: int
    discrete: bool


@dataclass
class PolicyOutput:
    action: np.ndarray  # one-hot (discrete) or raw values (continuous)
    log_prob: Tensor
    entropy: Tensor
    probs: Tensor | None = None  # discrete only, post-unimix
    mean: Tensor | None = None  # continuous only
    std: Tensor | None = None


@dataclass
class ImaginedRollout:
    feats: np.ndarray  # (H+1, N, state_dim) imagined states, start included
    actions: np.ndarray  # (H, N, action_dim)
    log_probs: np.ndarray  # (H, N) at sampling time (frozen params)
    entropies: np.ndarray  # (H, N)
    rewards: np.ndarray  # (H, N) predicted reward of the successor state
    conts: np.ndarray  # (H, N) predicted continuation of the successor state
    values: np.ndarray  # (H+1, N) critic values under the current critic

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def weights(self, gamma: float) -> np.ndarray:
        """Cumulative continue-discount weight per imagined step, w_0 = 1."""
        H, N = self.rewards.shape
        w = np.ones((H, N), dtype=self.rewards.dtype)
        for t in range(1, H):
            w[t] = w[t - 1] * gamma * self.conts[t - 1]
        return w


# -- networks -------------------------------------------------------------

def init_actor(rng, wspec: WorldSpec, aspec: ActionSpec) -> dict[str, np.ndarray]:
    p = init_mlp(rng, wspec.mlp(wspec.state_dim), "actor/mlp")
    out = aspec.dim if aspec.discrete else 2 * aspec.dim
    p.update(init_linear(rng, wspec.hidden, out, "actor/head"))
    return p


def init_critic(rng, wspec: WorldSpec, prefix: str = "critic") -> dict[str, np.ndarray]:
    p = init_mlp(rng, wspec.mlp(wspec.state_dim), f"{prefix}/mlp")
    p.update(init_linear(rng, wspec.hidden, wspec.reward_bins, f"{prefix}/head"))
    return p


def critic_logits(params, wspec: WorldSpec, feats: Tensor, prefix: str = "critic") -> Tensor:
    x = mlp_forward(params, f"{prefix}/mlp", wspec.mlp(wspec.state_dim), feats)
    return linear(params, f"{prefix}/head", x)


def critic_values(params, wspec: WorldSpec, feats: Tensor, prefix: str = "critic") -> np.ndarray:
    logits = critic_logits(params, wspec, feats, prefix)
    probs = ag.softmax(logits).data
    return symexp(probs @ wspec.twohot.locs)


def policy_act(
    params,
    wspec: WorldSpec,
    aspec: ActionSpec,
    feats: Tensor,
    mode: str,
    rng: np.random.Generator | None = None,
) -> PolicyOutput:
    """Evaluate the policy on state features; mode is 'sample' or 'mode'."""
    if mode not in ("sample", "mode"):
        raise ContractError(f"unknown policy mode {mode!r}")
    x = mlp_forward(params, "actor/mlp", wspec.mlp(wspec.state_dim), feats)
    raw = linear(params, "actor/head", x)
    if aspec.discrete:
        dist = unimix(raw, 1, aspec.dim, ratio=0.01)
        if mode == "sample":
            action = sample_onehot(dist.probs.data, rng)
        else:
            action = mode_onehot(dist)
        logp = ag.reduce_sum(ag.mul(ag.log(dist.probs), ag.constant(action)), axis=-1)
        entropy = ag.mul(ag.reduce_sum(ag.mul(dist.probs, ag.log(dist.probs)), axis=-1), -1.0)
        return PolicyOutput(action, logp, entropy, probs=dist.probs)
    mean = ag.tanh(ag.narrow(raw, -1, 0, aspec.dim))
    std = ag.add(ag.mul(ag.sigmoid(ag.narrow(raw, -1, aspec.dim, aspec.dim)), 0.9), 0.1)
    if mode == "sample":
        noise = rng.standard_normal(mean.shape).astype(mean.data.dtype)
        action = mean.data + std.data * noise
    else:
        action = mean.data.copy()
    return PolicyOutput(
        action,
        gaussian_log_prob(action, mean, std),
        gaussian_entropy(std),
        mean=mean,
        std=std,
    )


def gaussian_log_prob(action: np.ndarray, mean: Tensor, std: Tensor) -> Tensor:
    delta = ag.div(ag.sub(ag.constant(action), mean), std)
    per_dim = ag.add(ag.mul(ag.square(delta), 0.5), ag.add(ag.log(std), 0.5 * LOG_TWO_PI))
    return ag.mul(ag.reduce_sum(per_dim, axis=-1), -1.0)


def gaussian_entropy(std: Tensor) -> Tensor:
    return ag.reduce_sum(ag.add(ag.log(std), 0.5 * (LOG_TWO_PI + 1.0)), axis=-1)


# -- imagination ----------------------------------------------------------

def imagine_rollout(
    frozen_params,
    wspec: WorldSpec,
    aspec: ActionSpec,
    start: LatentState,
    horizon: int,
    rng: np.random.Generator,
) -> ImaginedRollout:
    """Unroll the learned dynamics under the current policy from detached starts.

    ``frozen_params`` must be a frozen bind of world+critic+actor: the whole
    rollout is constant-valued, so no gradient can reach the world model.
    """
    if horizon < 1:
        raise ContractError("imagination horizon must be >= 1")
    twohot = wspec.twohot
    state = LatentState(ag.stop_gradient(start.h), ag.stop_gradient(start.z))
    feats = [state.feat().data]
    actions, log_probs, entropies, rewards, conts = [], [], [], [], []
    for _ in range(horizon):
        pol = policy_act(frozen_params, wspec, aspec, ag.constant(feats[-1]), "sample", rng)
        state = imagine_step(frozen_params, wspec, state, pol.action, rng)
        s = state.feat()
        reward_logits, cont_logit = heads(frozen_params, wspec, s)
        feats.append(s.data)
        actions.append(pol.action)
        log_probs.append(pol.log_prob.data)
        entropies.append(pol.entropy.data)
        rewards.append(symexp(ag.softmax(reward_logits).data @ twohot.locs))
        conts.append(ag.sigmoid(cont_logit).data[:, 0])
    feats = np.stack(feats)
    values = critic_values(frozen_params, wspec, ag.constant(feats.reshape(-1, feats.shape[-1])))
    values = values.reshape(feats.shape[0], feats.shape[1])
    return ImaginedRollout(
        feats=feats,
        actions=np.stack(actions),
        log_probs=np.stack(log_probs),
        entropies=np.stack(entropies),
        rewards=np.stack(rewards),
        conts=np.stack(conts),
        values=values,
    )


def lambda_returns(
    rewards: np.ndarray,  # (H, ...)
    conts: np.ndarray,  # (H, ...)
    values: np.ndarray,  # (H+1, ...)
    lam: float,
    gamma: float,
) -> np.ndarray:
    """Backward recursion R_t = r_t + gamma*c_t*((1-lam)*v_{t+1} + lam*R_{t+1})."""
    H = rewards.shape[0]
    if conts.shape[0] != H or values.shape[0] != H + 1:
        raise ContractError(
            f"length mismatch: rewards {rewards.shape}, conts {conts.shape}, values {values.shape}"
        )
    if not (0.0 <= lam <= 1.0 and 0.0 < gamma < 1.0):
        raise ContractError(f"invalid lambda={lam} or gamma={gamma}")
    returns = np.empty_like(rewards)
    carry = values[H]
    for t in range(H - 1, -1, -1):
        carry = rewards[t] + gamma * conts[t] * ((1.0 - lam) * values[t + 1] + lam * carry)
        returns[t] = carry
    return returns


# -- losses ---------------------------------------------------------------

def critic_loss(
    params,
    ema_params,
    wspec: WorldSpec,
    feats: np.ndarray,  # (M, state_dim), detached
    returns: np.ndarray,  # (M,), detached
    weights: np.ndarray,  # (M,)
    ema_reg: float = 1.0,
) -> Tensor:
    """Distributional regression of lambda-returns plus the EMA regularizer."""
    twohot = wspec.twohot
    logits = critic_logits(params, wspec, ag.constant(feats))
    logp = ag.log_softmax(logits)
    target = ag.constant(two_hot_encode(twohot, returns).astype(feats.dtype))
    ce = ag.mul(ag.reduce_sum(ag.mul(target, logp), axis=-1), -1.0)
    ema_probs = ag.softmax(critic_logits(ema_params, wspec, ag.constant(feats), "critic_ema"))
    ema_ce = ag.mul(ag.reduce_sum(ag.mul(ag.stop_gradient(ema_probs), logp), axis=-1), -1.0)
    total = ag.add(ce, ag.mul(ema_ce, ema_reg))
    return ag.reduce_mean(ag.mul(total, ag.constant(np.asarray(weights, dtype=feats.dtype))))


def actor_loss(
    params,
    wspec: WorldSpec,
    aspec: ActionSpec,
    feats: np.ndarray,  # (M, state_dim), detached
    actions: np.ndarray,  # (M, action_dim), as taken during the rollout
    advantages: np.ndarray,  # (M,), detached and already normalized
    weights: np.ndarray,  # (M,)
    eta: float = 3e-4,
) -> Tensor:
    """REINFORCE with entropy bonus; only log pi and entropy carry gradient."""
    pol_input = ag.constant(feats)
    x = mlp_forward(params, "actor/mlp", wspec.mlp(wspec.state_dim), pol_input)
    raw = linear(params, "actor/head", x)
    if aspec.discrete:
        dist = unimix(raw, 1, aspec.dim, ratio=0.01)
        logp = ag.reduce_sum(ag.mul(ag.log(dist.probs), ag.constant(actions)), axis=-1)
        entropy = ag.mul(ag.reduce_sum(ag.mul(dist.probs, ag.log(dist.probs)), axis=-1), -1.0)
    else:
        mean = ag.tanh(ag.narrow(raw, -1, 0, aspec.dim))
        std = ag.add(ag.mul(ag.sigmoid(ag.narrow(raw, -1, aspec.dim, aspec.dim)), 0.9), 0.1)
        logp = gaussian_log_prob(actions, mean, std)
        entropy = gaussian_entropy(std)
    adv = ag.constant(np.asarray(advantages, dtype=feats.dtype))
    w = ag.constant(np.asarray(weights, dtype=feats.dtype))
    gain = ag.add(ag.mul(adv, logp), ag.mul(entropy, eta))
    return ag.mul(ag.reduce_mean(ag.mul(gain, w)), -1.0)


# -- return normalization and EMA critic ----------------------------------

@dataclass
class ReturnNormalizer:
    """EMA of the 5th-95th percentile range of returns; denominator max(L, S)."""

    decay: float = 0.99
    limit: float = 1.0
    value: float = 0.0
    initialized: bool = False

    def update(self, returns: np.ndarray) -> float:
        flat = np.asarray(returns, dtype=np.float64).ravel()
        if flat.size == 0:
            raise ContractError("return normalizer needs a nonempty batch")
        span = float(np.percentile(flat, 95) - np.percentile(flat, 5))
        if not self.initialized:
            self.value = span
            self.initialized = True
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * span
        return self.value

    def scale(self) -> float:
        return max(self.limit, self.value)


def update_ema_critic(store, decay: float = 0.98) -> None:
    """ema <- decay*ema + (1-decay)*live, per critic parameter array."""
    for name in store.names(["critic"]):
        ema_name = "critic_ema/" + name.split("/", 1)[1]
        ema = store.array(ema_name)
        live = store.array(name)
        store.set_array(ema_name, decay * ema + (1.0 - decay) * live)
