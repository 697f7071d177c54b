import numpy as np
import pytest

from tinydreamer.agent import (
    ActionSpec,
    ReturnNormalizer,
    critic_loss,
    imagine_rollout,
    init_actor,
    init_critic,
    lambda_returns,
    policy_act,
    update_ema_critic,
)
from tinydreamer.autodiff import ContractError, ParameterStore, engine as ag
from tinydreamer.rssm import WorldSpec, init_world, initial_state

SPEC = WorldSpec(
    obs_dim=16,
    action_dim=3,
    deter=8,
    groups=2,
    classes=4,
    embed=6,
    hidden=8,
    layers=2,
    reward_bins=7,
    reward_limit=5.0,
)


def make_store(seed=0):
    store = ParameterStore(np.float32)
    rng = np.random.default_rng(seed)
    for name, arr in init_world(rng, SPEC).items():
        store.add(name, arr, "world")
    critic = init_critic(rng, SPEC)
    for name, arr in critic.items():
        store.add(name, arr, "critic")
    for name, arr in critic.items():
        store.add("critic_ema/" + name.split("/", 1)[1], arr.copy(), "critic_ema")
    for name, arr in init_actor(rng, SPEC, ActionSpec(3, True)).items():
        store.add(name, arr, "actor")
    return store


def expanded_lambda_returns(rewards, conts, values, lam, gamma):
    """Oracle: expand the weighted sum instead of recursing."""
    H = rewards.shape[0]
    out = np.zeros_like(rewards)
    for t in range(H):
        total = 0.0
        disc = 1.0
        for j in range(t, H):
            bootstrap = (1.0 - lam) * values[j + 1] if j < H - 1 else values[j + 1]
            total += disc * rewards[j] + disc * gamma * conts[j] * bootstrap
            disc *= gamma * conts[j] * lam
        out[t] = total
    return out


def test_lambda_hand_case():
    r = np.array([0.0, 1.0])
    c = np.array([1.0, 1.0])
    v = np.array([0.5, 0.5, 1.0])
    out = lambda_returns(r, c, v, 0.95, 0.9)
    assert out[1] == pytest.approx(1.9, abs=1e-12)
    assert out[0] == pytest.approx(1.647, abs=1e-12)


def test_lambda_degenerate_cases():
    rng = np.random.default_rng(0)
    r = rng.standard_normal(6)
    c = rng.random(6)
    v = rng.standard_normal(7)
    td = lambda_returns(r, c, v, 0.0, 0.9)
    np.testing.assert_allclose(td, r + 0.9 * c * v[1:], atol=1e-12)
    np.testing.assert_array_equal(lambda_returns(r, np.zeros(6), v, 0.95, 0.9), r)


def test_lambda_matches_expanded_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        H = int(rng.integers(1, 21))
        r = rng.standard_normal(H)
        c = rng.random(H)
        v = rng.standard_normal(H + 1)
        lam = float(rng.random())
        gamma = float(rng.uniform(0.5, 0.999))
        got = lambda_returns(r, c, v, lam, gamma)
        want = expanded_lambda_returns(r, c, v, lam, gamma)
        np.testing.assert_allclose(got, want, atol=1e-9)


def test_lambda_rejects_bad_lengths():
    with pytest.raises(ContractError):
        lambda_returns(np.zeros(3), np.zeros(3), np.zeros(3), 0.95, 0.9)


def test_policy_act_discrete():
    store = make_store()
    params = store.bind(frozen=True)
    feats = ag.constant(np.random.default_rng(0).standard_normal((4, SPEC.state_dim)).astype(np.float32))
    pol = policy_act(params, SPEC, ActionSpec(3, True), feats, "sample", np.random.default_rng(1))
    assert pol.action.shape == (4, 3)
    assert np.all(pol.action.sum(axis=-1) == 1.0)
    assert np.all(pol.probs.data >= 0.01 / 3 - 1e-9)  # unimix floor
    mode = policy_act(params, SPEC, ActionSpec(3, True), feats, "mode")
    assert np.all(mode.action.sum(axis=-1) == 1.0)


def test_policy_act_continuous_std_bounds():
    store = ParameterStore(np.float32)
    aspec = ActionSpec(2, False)
    for name, arr in init_actor(np.random.default_rng(0), SPEC, aspec).items():
        store.add(name, arr, "actor")
    params = store.bind(frozen=True)
    feats = ag.constant(np.random.default_rng(2).standard_normal((5, SPEC.state_dim)).astype(np.float32))
    pol = policy_act(params, SPEC, aspec, feats, "sample", np.random.default_rng(3))
    assert np.all(pol.std.data > 0.1 - 1e-6) and np.all(pol.std.data < 1.0 + 1e-6)
    assert np.all(np.abs(pol.mean.data) <= 1.0)


def test_imagine_rollout_counts_and_ranges():
    store = make_store()
    params = store.bind(frozen=True)
    rng = np.random.default_rng(0)
    start = initial_state(params, SPEC, 6, rng)
    roll = imagine_rollout(params, SPEC, ActionSpec(3, True), start, 1, rng)
    assert roll.actions.shape == (1, 6, 3)
    assert roll.feats.shape == (2, 6, SPEC.state_dim)
    assert roll.values.shape == (2, 6)
    assert np.all((roll.conts > 0) & (roll.conts < 1))


def test_rollout_weights_cumulative():
    store = make_store()
    params = store.bind(frozen=True)
    rng = np.random.default_rng(0)
    roll = imagine_rollout(params, SPEC, ActionSpec(3, True), initial_state(params, SPEC, 4, rng), 5, rng)
    w = roll.weights(0.9)
    np.testing.assert_array_equal(w[0], np.ones(4))
    np.testing.assert_allclose(w[2], w[1] * 0.9 * roll.conts[1], atol=1e-7)


def test_critic_loss_replay_weight_reduction():
    store = make_store()
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((8, SPEC.state_dim)).astype(np.float32)
    returns = rng.standard_normal(8).astype(np.float32)
    live = store.bind(["critic"])
    ema = store.bind(["critic_ema"], frozen=True)
    weighted = critic_loss(live, ema, SPEC, feats, returns, np.zeros(8, np.float32))
    assert float(weighted.data) == 0.0  # all-zero weights kill the loss


def test_return_normalizer_updates():
    norm = ReturnNormalizer(decay=0.99, limit=1.0)
    first = norm.update(np.arange(101.0))
    assert first == pytest.approx(90.0, abs=1e-12)  # Per95 - Per5 of 0..100
    second = norm.update(np.zeros(10))
    assert second == pytest.approx(0.99 * 90.0, abs=1e-9)
    assert norm.scale() == max(1.0, norm.value)
    small = ReturnNormalizer()
    small.update(np.zeros(4))
    assert small.scale() == 1.0


def test_update_ema_critic_blend():
    store = make_store()
    for name in store.names(["critic"]):
        store.set_array(name, np.ones_like(store.array(name)))
    for name in store.names(["critic_ema"]):
        store.set_array(name, np.zeros_like(store.array(name)))
    update_ema_critic(store, decay=0.98)
    for name in store.names(["critic_ema"]):
        np.testing.assert_allclose(store.array(name), np.full_like(store.array(name), 0.02), atol=1e-7)
