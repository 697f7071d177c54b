"""World-model losses: redundancy-reduction objective, balanced KL terms with
free bits, reward/continue prediction, the reconstruction baseline, and the
weighted aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import engine as ag
from .autodiff.engine import ContractError, Tensor
from .nets import CategoricalGroupParams, TwoHotSpec, two_hot_encode
from .rssm import SequenceOutputs, WorldSpec, decode

STD_EPS = 1e-5


@dataclass
class BTLossOutput:
    loss: Tensor
    corr: Tensor  # (D, D) cross-correlation matrix
    invariance: Tensor
    redundancy: Tensor


@dataclass
class WorldCoeffs:
    beta_bt: float = 0.05
    alpha: float = 5e-4
    beta_dyn: float = 1.0
    beta_rep: float = 0.1
    free_nats: float = 1.0


@dataclass
class WorldLossBreakdown:
    total: Tensor
    bt: BTLossOutput | None
    dyn: Tensor
    rep: Tensor
    reward: Tensor
    cont: Tensor
    recon: Tensor | None

    def scalars(self) -> dict[str, float]:
        out = {
            "loss/world": float(self.total.data),
            "loss/dyn": float(self.dyn.data),
            "loss/rep": float(self.rep.data),
            "loss/reward": float(self.reward.data),
            "loss/cont": float(self.cont.data),
        }
        if self.bt is not None:
            out["loss/bt"] = float(self.bt.loss.data)
            out["loss/bt_invariance"] = float(self.bt.invariance.data)
            out["loss/bt_redundancy"] = float(self.bt.redundancy.data)
        if self.recon is not None:
            out["loss/recon"] = float(self.recon.data)
        return out


def _standardize(x: Tensor) -> Tensor:
    """Per-feature standardization over the sample axis, unbiased std + eps."""
    mean = ag.reduce_mean(x, axis=0, keepdims=True)
    std = ag.sqrt(ag.variance(x, axis=0, ddof=1, keepdims=True))
    return ag.div(ag.sub(x, mean), ag.add(std, STD_EPS))


def bt_loss(k: Tensor, e: Tensor, alpha: float) -> BTLossOutput:
    """Cross-correlation objective between projections k and embeddings e.

    e is detached (the encoder is only trained through the posterior path);
    the diagonal of C is pulled toward 1, the off-diagonal toward 0.
    """
    n = k.shape[0]
    if n < 2:
        raise ContractError(f"bt_loss needs at least 2 samples, got {n}")
    if k.shape != e.shape:
        raise ContractError(f"bt_loss shape mismatch: {k.shape} vs {e.shape}")
    e = ag.stop_gradient(e if isinstance(e, Tensor) else ag.constant(e))
    k_norm = _standardize(k)
    e_norm = _standardize(e)
    corr = ag.mul(ag.matmul(ag.transpose(k_norm), e_norm), 1.0 / n)
    eye = np.eye(k.shape[1], dtype=k.dtype)
    diag = ag.reduce_sum(ag.mul(corr, ag.constant(eye)), axis=1)
    invariance = ag.reduce_sum(ag.square(ag.sub(1.0, diag)))
    redundancy = ag.reduce_sum(ag.square(ag.mul(corr, ag.constant(1.0 - eye))))
    loss = ag.add(invariance, ag.mul(redundancy, alpha))
    return BTLossOutput(loss, corr, invariance, redundancy)


def kl_categorical(q: CategoricalGroupParams, p: CategoricalGroupParams) -> Tensor:
    """Sum over groups of KL(q_g || p_g), one value per sample."""
    if q.probs.shape != p.probs.shape:
        raise ContractError(f"KL shape mismatch: {q.probs.shape} vs {p.probs.shape}")
    diff = ag.sub(ag.log(q.probs), ag.log(p.probs))
    return ag.reduce_sum(ag.mul(q.probs, diff), axis=-1)


def balanced_kl_losses(
    q: CategoricalGroupParams, p: CategoricalGroupParams, free_nats: float = 1.0
) -> tuple[Tensor, Tensor]:
    """Per-sample (dyn, rep) losses with stop-gradient balancing and free bits.

    dyn trains the prior toward the (frozen) posterior; rep trains the
    posterior toward the (frozen) prior. The clamp is applied per timestep,
    before any batch averaging.
    """
    q_frozen = CategoricalGroupParams(
        ag.stop_gradient(q.logits), ag.stop_gradient(q.probs), q.groups, q.classes
    )
    p_frozen = CategoricalGroupParams(
        ag.stop_gradient(p.logits), ag.stop_gradient(p.probs), p.groups, p.classes
    )
    dyn = ag.clamp_below(kl_categorical(q_frozen, p), free_nats)
    rep = ag.clamp_below(kl_categorical(q, p_frozen), free_nats)
    return dyn, rep


def prediction_loss(
    reward_logits: Tensor,
    cont_logit: Tensor,
    reward: np.ndarray,
    cont: np.ndarray,
    twohot: TwoHotSpec,
) -> tuple[Tensor, Tensor]:
    """Per-sample reward and continue negative log-likelihoods."""
    target = ag.constant(two_hot_encode(twohot, reward).astype(reward_logits.dtype))
    reward_nll = ag.mul(
        ag.reduce_sum(ag.mul(target, ag.log_softmax(reward_logits)), axis=-1), -1.0
    )
    logit = ag.reshape(cont_logit, (-1,))
    c = np.asarray(cont, dtype=logit.dtype)
    # -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    cont_nll = ag.add(
        ag.mul(ag.softplus(ag.mul(logit, -1.0)), ag.constant(c)),
        ag.mul(ag.softplus(logit), ag.constant(1.0 - c)),
    )
    return reward_nll, cont_nll


def recon_loss(params, spec: WorldSpec, s: Tensor, obs: np.ndarray) -> Tensor:
    """Unit-variance Gaussian NLL of pixels (constant dropped): 0.5*||o - o_hat||^2."""
    if "world/dec/head/w" not in params:
        raise ContractError("recon_loss called without a decoder (variant is not 'recon')")
    pred = decode(params, spec, s)
    diff = ag.sub(pred, ag.constant(np.asarray(obs, dtype=pred.dtype)))
    return ag.mul(ag.reduce_sum(ag.square(diff), axis=-1), 0.5)


def world_loss(
    variant: str,
    outputs: SequenceOutputs,
    rewards: np.ndarray,  # (B, T)
    conts: np.ndarray,  # (B, T)
    params,
    spec: WorldSpec,
    coeffs: WorldCoeffs,
    obs: np.ndarray | None = None,  # (B, T, obs_dim), required for variant 'recon'
) -> WorldLossBreakdown:
    if variant not in ("bt", "recon", "none"):
        raise ContractError(f"unknown objective variant {variant!r}")
    B, T = outputs.batch, outputs.length
    # targets flattened timestep-major to match the slab row order
    flat_reward = np.asarray(rewards).T.reshape(-1)
    flat_cont = np.asarray(conts).T.reshape(-1)

    dyn, rep = balanced_kl_losses(outputs.post, outputs.prior, coeffs.free_nats)
    r_nll, c_nll = prediction_loss(
        outputs.reward_logits, outputs.cont_logit, flat_reward, flat_cont, spec.twohot
    )
    dyn_mean = ag.reduce_mean(dyn)
    rep_mean = ag.reduce_mean(rep)
    reward_mean = ag.reduce_mean(r_nll)
    cont_mean = ag.reduce_mean(c_nll)

    total = ag.add(
        ag.add(reward_mean, cont_mean),
        ag.add(ag.mul(dyn_mean, coeffs.beta_dyn), ag.mul(rep_mean, coeffs.beta_rep)),
    )

    bt = None
    recon_mean = None
    if variant == "bt":
        # Computed once over the whole B*T slab, not per timestep.
        bt = bt_loss(outputs.k, outputs.e, coeffs.alpha)
        total = ag.add(total, ag.mul(bt.loss, coeffs.beta_bt))
    elif variant == "recon":
        flat_obs = np.asarray(obs).transpose(1, 0, 2).reshape(T * B, -1)
        recon_mean = ag.reduce_mean(recon_loss(params, spec, outputs.feats, flat_obs))
        total = ag.add(total, recon_mean)

    return WorldLossBreakdown(total, bt, dyn_mean, rep_mean, reward_mean, cont_mean, recon_mean)
