import numpy as np
import pytest

from tinydreamer.autodiff import ContractError, ParameterStore, engine as ag
from tinydreamer.rssm import (
    LatentState,
    WorldSpec,
    encode,
    imagine_step,
    init_world,
    initial_state,
    observe_sequence,
    observe_step,
)

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


def make_store(decoder=False, seed=0):
    store = ParameterStore(np.float32)
    for name, arr in init_world(np.random.default_rng(seed), SPEC, decoder=decoder).items():
        store.add(name, arr, "world")
    return store


def test_encode_rejects_out_of_range_pixels():
    params = make_store().bind()
    with pytest.raises(ContractError):
        encode(params, SPEC, np.full((1, 16), 1.5))


def test_observe_step_shapes():
    store = make_store()
    params = store.bind()
    rng = np.random.default_rng(0)
    obs = rng.random((4, 16)).astype(np.float32)
    e = encode(params, SPEC, ag.constant(obs))
    state = initial_state(params, SPEC, 4, rng)
    out = observe_step(params, SPEC, state, np.zeros((4, 3), np.float32), e, np.ones(4), rng)
    assert out.state.h.shape == (4, 8)
    assert out.state.z.shape == (4, 8)
    assert out.reward_logits.shape == (4, 7)
    assert out.cont_logit.shape == (4, 1)
    assert out.k.shape == (4, 6)
    grouped = out.state.z.data.reshape(4, 2, 4)
    assert np.all(grouped.sum(-1) == 1.0)


def test_is_first_resets_history():
    store = make_store()
    params = store.bind()
    rng_a = np.random.default_rng(5)
    rng_b = np.random.default_rng(5)
    obs = np.random.default_rng(1).random((2, 16)).astype(np.float32)
    e = encode(params, SPEC, ag.constant(obs))
    init = initial_state(params, SPEC, 2, np.random.default_rng(9))
    garbage = LatentState(
        ag.constant(np.full((2, 8), 3.0, np.float32)),
        ag.constant(init.z.data.copy()),
    )
    action = np.ones((2, 3), np.float32)
    # with is_first=1 the garbage history and the action must be ignored
    out_reset = observe_step(params, SPEC, garbage, action, e, np.ones(2), rng_a, init=init)
    out_clean = observe_step(
        params, SPEC, init, np.zeros((2, 3), np.float32), e, np.zeros(2), rng_b, init=init
    )
    np.testing.assert_array_equal(out_reset.state.h.data, out_clean.state.h.data)


def test_imagine_step_matches_state_layout():
    store = make_store()
    params = store.bind(frozen=True)
    rng = np.random.default_rng(0)
    state = initial_state(params, SPEC, 3, rng)
    nxt = imagine_step(params, SPEC, state, np.zeros((3, 3), np.float32), rng)
    assert nxt.h.shape == (3, 8) and nxt.z.shape == (3, 8)
    assert nxt.feat().shape == (3, SPEC.state_dim)


def test_observe_sequence_length_and_order():
    store = make_store()
    params = store.bind()
    rng = np.random.default_rng(0)
    B, T = 2, 5
    obs = np.random.default_rng(3).random((B, T, 16)).astype(np.float32)
    action = np.zeros((B, T, 3), np.float32)
    is_first = np.zeros((B, T), np.float32)
    is_first[:, 0] = 1.0
    outs = observe_sequence(params, SPEC, obs, action, is_first, rng)
    assert (outs.batch, outs.length) == (B, T)
    assert len(outs.states) == T
    for state in outs.states:
        assert state.h.shape == (B, 8)
    assert outs.e.shape == (T * B, 6)
    assert outs.k.shape == (T * B, 6)
    assert outs.feats.shape == (T * B, SPEC.state_dim)
    assert outs.reward_logits.shape == (T * B, 7)
    assert outs.post.probs.shape == (T * B, 8)
    # slab rows are timestep-major and match the per-timestep states
    for t in range(T):
        np.testing.assert_array_equal(
            outs.feats.data[t * B : (t + 1) * B, :8], outs.states[t].h.data
        )


def test_observe_sequence_rejects_mismatched_batch():
    params = make_store().bind()
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        observe_sequence(
            params,
            SPEC,
            np.zeros((2, 4, 16)),
            np.zeros((2, 3, 3)),
            np.zeros((2, 4)),
            rng,
        )


def test_decoder_params_only_when_requested():
    assert "world/dec/head/w" not in make_store(decoder=False)
    assert "world/dec/head/w" in make_store(decoder=True)
