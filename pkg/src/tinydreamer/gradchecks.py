"""Ready-made finite-difference gradient checks.

Each case builds a small double-precision parameter store plus a loss builder
and runs :func:`check_gradients` on it. Cases exist for every differentiable
primitive and for each composite loss. Stop-gradient semantics cannot be
verified by finite differences (the frozen value still moves with the
parameter); those paths are covered by exact-zero routing tests instead, and
the KL cases here place the frozen side's logits outside the checked
component for the same reason.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .agent import ActionSpec, actor_loss, critic_loss, init_actor, init_critic
from .autodiff import GradCheckReport, ParameterStore, check_gradients, engine as ag
from .nets import init_linear, init_mlp, unimix
from .objectives import (
    balanced_kl_losses,
    bt_loss,
    kl_categorical,
    prediction_loss,
    recon_loss,
)
from .rssm import WorldSpec, heads

TINY = WorldSpec(
    obs_dim=9,
    action_dim=2,
    deter=5,
    groups=2,
    classes=3,
    embed=4,
    hidden=6,
    layers=2,
    reward_bins=7,
    reward_limit=5.0,
)

Case = Callable[[np.random.Generator], tuple[ParameterStore, Callable, tuple]]


def _op_case(make_params, forward) -> Case:
    """Scalarize an op's output with a fixed random weight and check it."""

    def setup(rng):
        store = ParameterStore(np.float64)
        make_params(rng, store)
        probe = forward(store.bind(["world"]))
        w = rng.uniform(0.5, 1.5, probe.shape)

        def builder():
            return ag.reduce_sum(ag.mul(forward(store.bind(["world"])), ag.constant(w)))

        return store, builder, ("world",)

    return setup


def _params(*specs):
    """specs: (name, shape, low, high) tuples."""

    def make(rng, store):
        for name, shape, low, high in specs:
            store.add(name, rng.uniform(low, high, shape), "world")

    return make


def _signed_away_from_zero(rng, store):
    mag = rng.uniform(0.2, 1.5, (3, 4))
    store.add("x", mag * rng.choice([-1.0, 1.0], (3, 4)), "world")


OP_CASES: dict[str, Case] = {
    "add": _op_case(
        _params(("x", (3, 4), -1, 1), ("y", (4,), -1, 1)),
        lambda p: ag.add(p["x"], p["y"]),
    ),
    "sub": _op_case(
        _params(("x", (3, 4), -1, 1), ("y", (3, 1), -1, 1)),
        lambda p: ag.sub(p["x"], p["y"]),
    ),
    "mul": _op_case(
        _params(("x", (3, 4), -1, 1), ("y", (3, 4), -1, 1)),
        lambda p: ag.mul(p["x"], p["y"]),
    ),
    "div": _op_case(
        _params(("x", (3, 4), -1, 1), ("y", (3, 4), 0.5, 1.5)),
        lambda p: ag.div(p["x"], p["y"]),
    ),
    "matmul": _op_case(
        _params(("x", (3, 4), -1, 1), ("y", (4, 2), -1, 1)),
        lambda p: ag.matmul(p["x"], p["y"]),
    ),
    "affine": _op_case(
        _params(("x", (3, 4), -1, 1), ("w", (4, 2), -1, 1), ("b", (2,), -1, 1)),
        lambda p: ag.affine(p["x"], p["w"], p["b"]),
    ),
    "rms_norm": _op_case(
        _params(("x", (3, 4), -1.5, 1.5), ("g", (4,), 0.5, 1.5)),
        lambda p: ag.rms_norm(p["x"], p["g"]),
    ),
    "dense_act": _op_case(
        _params(("x", (3, 4), -1, 1), ("w", (4, 5), -1, 1), ("b", (5,), -0.5, 0.5), ("g", (5,), 0.5, 1.5)),
        lambda p: ag.dense_act(p["x"], p["w"], p["b"], p["g"]),
    ),
    "gru_cell": _op_case(
        _params(
            ("h", (3, 5), -1, 1),
            ("x", (3, 4), -1, 1),
            ("wg", (9, 10), -0.5, 0.5),
            ("bg", (10,), -0.5, 0.5),
            ("wc", (9, 5), -0.5, 0.5),
            ("bc", (5,), -0.5, 0.5),
        ),
        lambda p: ag.gru_cell(p["h"], p["x"], p["wg"], p["bg"], p["wc"], p["bc"]),
    ),
    "unimix_probs": _op_case(
        _params(("x", (3, 6), -2, 2)),
        lambda p: ag.unimix_probs(p["x"], 2, 3, 0.01),
    ),
    "transpose": _op_case(
        _params(("x", (3, 4), -1, 1)), lambda p: ag.transpose(p["x"])
    ),
    "reshape": _op_case(
        _params(("x", (3, 4), -1, 1)), lambda p: ag.reshape(p["x"], (2, 6))
    ),
    "concat": _op_case(
        _params(("x", (3, 2), -1, 1), ("y", (3, 3), -1, 1)),
        lambda p: ag.concat([p["x"], p["y"]], axis=1),
    ),
    "narrow": _op_case(
        _params(("x", (3, 5), -1, 1)), lambda p: ag.narrow(p["x"], -1, 1, 3)
    ),
    "reduce_sum": _op_case(
        _params(("x", (3, 4), -1, 1)), lambda p: ag.reduce_sum(p["x"], axis=0)
    ),
    "reduce_mean": _op_case(
        _params(("x", (3, 4), -1, 1)),
        lambda p: ag.reduce_mean(p["x"], axis=1, keepdims=True),
    ),
    "variance": _op_case(
        _params(("x", (5, 3), -1, 1)), lambda p: ag.variance(p["x"], axis=0, ddof=1)
    ),
    "exp": _op_case(_params(("x", (3, 4), -1.5, 1.5)), lambda p: ag.exp(p["x"])),
    "log": _op_case(_params(("x", (3, 4), 0.2, 2.0)), lambda p: ag.log(p["x"])),
    "sqrt": _op_case(_params(("x", (3, 4), 0.2, 2.0)), lambda p: ag.sqrt(p["x"])),
    "square": _op_case(_params(("x", (3, 4), -2, 2)), lambda p: ag.square(p["x"])),
    "absolute": _op_case(_signed_away_from_zero, lambda p: ag.absolute(p["x"])),
    "sign": _op_case(_signed_away_from_zero, lambda p: ag.sign(p["x"])),
    "tanh": _op_case(_params(("x", (3, 4), -2, 2)), lambda p: ag.tanh(p["x"])),
    "sigmoid": _op_case(_params(("x", (3, 4), -3, 3)), lambda p: ag.sigmoid(p["x"])),
    "silu": _op_case(_params(("x", (3, 4), -3, 3)), lambda p: ag.silu(p["x"])),
    "softplus": _op_case(_params(("x", (3, 4), -3, 3)), lambda p: ag.softplus(p["x"])),
    "clamp_below": _op_case(
        _signed_away_from_zero, lambda p: ag.clamp_below(p["x"], 0.0)
    ),
    "softmax": _op_case(_params(("x", (3, 4), -2, 2)), lambda p: ag.softmax(p["x"])),
    "log_softmax": _op_case(
        _params(("x", (3, 4), -2, 2)), lambda p: ag.log_softmax(p["x"])
    ),
}


def _case_bt(rng):
    store = ParameterStore(np.float64)
    store.add("k", rng.standard_normal((8, 5)), "world")
    e = rng.standard_normal((8, 5))

    def builder():
        return bt_loss(store.bind(["world"])["k"], ag.constant(e), 5e-4).loss

    return store, builder, ("world",)


def _kl_case(side: str) -> Case:
    """dyn trains the prior (q frozen); rep trains the posterior (p frozen).

    The frozen side's logits live in an unchecked component because finite
    differences cannot see through a stop-gradient. free_nats adapts to the
    instance so every clamp is active and away from its kink.
    """

    def setup(rng):
        store = ParameterStore(np.float64)
        live, frozen = ("p", "q") if side == "dyn" else ("q", "p")
        store.add(live, rng.standard_normal((4, 6)), "world")
        store.add(frozen, rng.standard_normal((4, 6)), "actor")

        def losses():
            p = store.bind(["world", "actor"])
            q = unimix(p["q"], 2, 3)
            pr = unimix(p["p"], 2, 3)
            return q, pr

        q, pr = losses()
        min_kl = float(np.min(kl_categorical(q, pr).data))
        free = max(min_kl / 2.0, 1e-4)

        def builder():
            q, pr = losses()
            dyn, rep = balanced_kl_losses(q, pr, free)
            return ag.reduce_mean(dyn if side == "dyn" else rep)

        return store, builder, ("world",)

    return setup


def _case_pred(rng):
    store = ParameterStore(np.float64)
    spec = TINY
    p = init_mlp(rng, spec.mlp(spec.state_dim), "world/trunk")
    p.update(init_linear(rng, spec.hidden, spec.reward_bins, "world/reward"))
    p.update(init_linear(rng, spec.hidden, 1, "world/cont"))
    for name, arr in p.items():
        store.add(name, arr, "world")
    s = rng.uniform(-1, 1, (4, spec.state_dim))
    reward = rng.uniform(-3, 3, 4)
    cont = rng.integers(0, 2, 4).astype(np.float64)

    def builder():
        r_logits, c_logit = heads(store.bind(["world"]), spec, ag.constant(s))
        r_nll, c_nll = prediction_loss(r_logits, c_logit, reward, cont, spec.twohot)
        return ag.add(ag.reduce_mean(r_nll), ag.reduce_mean(c_nll))

    return store, builder, ("world",)


def _case_recon(rng):
    store = ParameterStore(np.float64)
    spec = TINY
    p = init_mlp(rng, spec.mlp(spec.state_dim), "world/dec")
    p.update(init_linear(rng, spec.hidden, spec.obs_dim, "world/dec/head"))
    for name, arr in p.items():
        store.add(name, arr, "world")
    s = rng.uniform(-1, 1, (4, spec.state_dim))
    obs = rng.uniform(0, 1, (4, spec.obs_dim))

    def builder():
        return ag.reduce_mean(recon_loss(store.bind(["world"]), spec, ag.constant(s), obs))

    return store, builder, ("world",)


def _case_critic(rng):
    store = ParameterStore(np.float64)
    spec = TINY
    for name, arr in init_critic(rng, spec).items():
        store.add(name, arr, "critic")
    for name, arr in init_critic(rng, spec, "critic_ema").items():
        store.add(name, arr, "critic_ema")
    feats = rng.uniform(-1, 1, (4, spec.state_dim))
    returns = rng.uniform(-3, 3, 4)
    weights = rng.uniform(0.5, 1.0, 4)

    def builder():
        live = store.bind(["critic"])
        ema = store.bind(["critic_ema"], frozen=True)
        return critic_loss(live, ema, spec, feats, returns, weights, ema_reg=1.0)

    return store, builder, ("critic",)


def _actor_case(discrete: bool) -> Case:
    def setup(rng):
        store = ParameterStore(np.float64)
        spec = TINY
        aspec = ActionSpec(spec.action_dim, discrete)
        for name, arr in init_actor(rng, spec, aspec).items():
            store.add(name, arr, "actor")
        feats = rng.uniform(-1, 1, (4, spec.state_dim))
        if discrete:
            actions = np.eye(aspec.dim)[rng.integers(0, aspec.dim, 4)]
        else:
            actions = rng.uniform(-0.9, 0.9, (4, aspec.dim))
        adv = rng.uniform(-1, 1, 4)
        weights = rng.uniform(0.5, 1.0, 4)

        def builder():
            return actor_loss(
                store.bind(["actor"]), spec, aspec, feats, actions, adv, weights, eta=3e-4
            )

        return store, builder, ("actor",)

    return setup


LOSS_CASES: dict[str, Case] = {
    "bt": _case_bt,
    "dyn": _kl_case("dyn"),
    "rep": _kl_case("rep"),
    "pred": _case_pred,
    "recon": _case_recon,
    "critic": _case_critic,
    "actor": _actor_case(True),
    "actor_gauss": _actor_case(False),
}


def available() -> list[str]:
    return ["ops"] + list(LOSS_CASES)


def run_case(name: str, seed: int, step: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    if name in OP_CASES:
        case = OP_CASES[name]
    elif name in LOSS_CASES:
        case = LOSS_CASES[name]
    else:
        raise KeyError(f"unknown gradcheck case {name!r}; known: {available()}")
    store, builder, components = case(np.random.default_rng(seed))
    return check_gradients(builder, store, step=step, tolerance=tolerance, components=components)


def run_module(name: str, instances: int = 3, seed: int = 0) -> dict[str, GradCheckReport]:
    """Run one named module ('ops' covers every primitive) several times."""
    names = list(OP_CASES) if name == "ops" else [name]
    out = {}
    for case_name in names:
        for i in range(instances):
            out[f"{case_name}[{i}]"] = run_case(case_name, seed + i)
    return out
