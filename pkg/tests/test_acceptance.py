"""Acceptance suite: the properties this package promises, at their stated
tolerances. Slow end-to-end learning checks are marked `slow` and excluded
from the default run; select them with `pytest -m slow`.
"""

import time

import numpy as np
import pytest

from tinydreamer import gradchecks
from tinydreamer.agent import ReturnNormalizer, lambda_returns
from tinydreamer.analysis import occlusion_saliency
from tinydreamer.autodiff import ParameterStore, engine as ag, gradients
from tinydreamer.config import RunConfig
from tinydreamer.envs import EnvSpec, make_env
from tinydreamer.nets import (
    TwoHotSpec,
    symexp,
    symlog,
    two_hot_decode,
    two_hot_encode,
    unimix,
)
from tinydreamer.objectives import balanced_kl_losses, bt_loss
from tinydreamer.rssm import WorldSpec, init_world, posterior_params, prior_params, project
from tinydreamer.trainer import Trainer, bench_grad_steps, evaluate_policy, load_params


# -- 1. gradient correctness ------------------------------------------------


def test_all_gradchecks_pass_at_stated_tolerance():
    start = time.perf_counter()
    instances = 20
    for module in gradchecks.available():
        reports = gradchecks.run_module(module, instances=instances, seed=100)
        assert len(reports) >= instances
        for label, report in reports.items():
            assert report.passed, f"{label}: max rel err {report.max_error}"
            assert report.max_error < 1e-4, label
    assert time.perf_counter() - start < 300.0


# -- 2. redundancy-reduction loss vs direct-formula oracle ------------------


def reference_bt(k: np.ndarray, e: np.ndarray, alpha: float) -> float:
    n = k.shape[0]
    kn = (k - k.mean(0)) / (k.std(0, ddof=1) + 1e-5)
    en = (e - e.mean(0)) / (e.std(0, ddof=1) + 1e-5)
    corr = kn.T @ en / n
    off = corr - np.diag(np.diag(corr))
    return float(((1.0 - np.diag(corr)) ** 2).sum() + alpha * (off**2).sum())


def test_bt_matches_direct_formula_oracle():
    rng = np.random.default_rng(7)
    cases = 0
    while cases < 100:
        n = int(rng.choice([8, 16, 64]))
        d = int(rng.choice([1, 4, 16]))
        k = rng.standard_normal((n, d))
        e = rng.standard_normal((n, d))
        out = bt_loss(ag.constant(k), ag.constant(e), 5e-4)
        want = reference_bt(k, e, 5e-4)
        assert abs(float(out.loss.data) - want) < 1e-10
        cases += 1


def test_bt_hand_case_quarter():
    # B*T=2, D=1, k=e=[1,-1]: unbiased std is sqrt(2), so the normalized
    # vectors have squared norm 2/2 ... C = (1/sqrt(2))^2 * 2 / 2 = 0.5 and
    # the loss is (1 - 0.5)^2 = 0.25 (up to the 1e-5 std epsilon).
    k = np.array([[1.0], [-1.0]])
    out = bt_loss(ag.constant(k), ag.constant(k.copy()), 5e-4)
    assert float(out.corr.data[0, 0]) == pytest.approx(0.5, abs=1e-4)
    assert float(out.loss.data) == pytest.approx(0.25, abs=1e-4)
    assert reference_bt(k, k.copy(), 5e-4) == pytest.approx(float(out.loss.data), abs=1e-10)


# -- 3. stop-gradient routing ----------------------------------------------

ROUTE_SPEC = WorldSpec(
    obs_dim=16, action_dim=3, deter=8, groups=2, classes=4, embed=6, hidden=12, layers=2
)


def _world_store(seed=0):
    store = ParameterStore(np.float64)
    rng = np.random.default_rng(seed)
    for name, arr in init_world(rng, ROUTE_SPEC).items():
        store.add(name, arr, "world")
    return store, rng


def _grads_by_prefix(loss, store, prefix):
    grads = gradients(loss, store, ["world"])
    return {n: g for n, g in grads.items() if n.startswith(prefix)}


def test_dyn_loss_ignores_posterior_parameters_exactly():
    store, rng = _world_store(1)
    params = store.bind(["world"])
    h = ag.constant(rng.standard_normal((4, ROUTE_SPEC.deter)))
    e = ag.constant(rng.standard_normal((4, ROUTE_SPEC.embed)))
    q = posterior_params(params, ROUTE_SPEC, h, e)
    p = prior_params(params, ROUTE_SPEC, h)
    dyn, _ = balanced_kl_losses(q, p, free_nats=1e-6)
    grads = _grads_by_prefix(ag.reduce_mean(dyn), store, "world/post")
    assert grads and all(np.all(g == 0.0) for g in grads.values())
    prior_grads = _grads_by_prefix(ag.reduce_mean(dyn), store, "world/prior")
    assert any(np.any(g != 0.0) for g in prior_grads.values())


def test_rep_loss_ignores_prior_parameters_exactly():
    store, rng = _world_store(2)
    params = store.bind(["world"])
    h = ag.constant(rng.standard_normal((4, ROUTE_SPEC.deter)))
    e = ag.constant(rng.standard_normal((4, ROUTE_SPEC.embed)))
    q = posterior_params(params, ROUTE_SPEC, h, e)
    p = prior_params(params, ROUTE_SPEC, h)
    _, rep = balanced_kl_losses(q, p, free_nats=1e-6)
    grads = _grads_by_prefix(ag.reduce_mean(rep), store, "world/prior")
    assert grads and all(np.all(g == 0.0) for g in grads.values())
    post_grads = _grads_by_prefix(ag.reduce_mean(rep), store, "world/post")
    assert any(np.any(g != 0.0) for g in post_grads.values())


def _bt_through_posterior(store, rng, live_embedding: bool):
    from tinydreamer.nets import straight_through_sample
    from tinydreamer.rssm import LatentState, encode

    params = store.bind(["world"])
    obs = rng.uniform(0.0, 1.0, (8, ROUTE_SPEC.obs_dim))
    e = encode(params, ROUTE_SPEC, ag.constant(obs))
    h = ag.constant(rng.standard_normal((8, ROUTE_SPEC.deter)))
    post_input = e if live_embedding else ag.constant(e.data.copy())
    q = posterior_params(params, ROUTE_SPEC, h, post_input)
    z = straight_through_sample(q, np.random.default_rng(0))
    s = LatentState(h, z).feat()
    k = project(params, "world/proj", s)
    return bt_loss(k, e, 5e-4).loss


def test_bt_encoder_gradient_only_through_posterior_path():
    store, rng = _world_store(3)
    # the embedding side of the loss is detached: with the posterior fed a
    # constant copy, no gradient reaches the encoder at all
    loss = _bt_through_posterior(store, np.random.default_rng(10), live_embedding=False)
    enc = _grads_by_prefix(loss, store, "world/enc")
    assert enc and all(np.all(g == 0.0) for g in enc.values())
    # with the live embedding feeding the posterior, the encoder does train
    loss = _bt_through_posterior(store, np.random.default_rng(10), live_embedding=True)
    enc = _grads_by_prefix(loss, store, "world/enc")
    assert any(np.any(g != 0.0) for g in enc.values())


# -- 4. lambda-return equivalence ------------------------------------------


def expanded_lambda_returns(r, c, v, lam, gamma):
    """Sum of lambda-weighted n-step returns; the last one keeps the tail mass."""
    H = r.shape[0]
    out = np.empty_like(r)
    for t in range(H):
        total = np.zeros_like(r[0])
        disc = np.ones_like(r[0])
        acc = np.zeros_like(r[0])
        lam_w = 1.0
        for n in range(t, H):
            total = total + disc * r[n]
            disc = disc * gamma * c[n]
            g_n = total + disc * v[n + 1]
            if n < H - 1:
                acc = acc + (1.0 - lam) * lam_w * g_n
                lam_w = lam_w * lam
            else:
                acc = acc + lam_w * g_n
        out[t] = acc
    return out


def test_lambda_return_matches_expanded_sum_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        H = int(rng.integers(1, 21))
        B = int(rng.integers(1, 4))
        r = rng.standard_normal((H, B))
        c = rng.choice([0.0, 1.0], (H, B), p=[0.2, 0.8])
        v = rng.standard_normal((H + 1, B))
        lam = float(rng.uniform(0, 1))
        gamma = float(rng.uniform(0.8, 0.999))
        got = lambda_returns(r, c, v, lam, gamma)
        want = expanded_lambda_returns(r, c, v, lam, gamma)
        np.testing.assert_allclose(got, want, atol=1e-9, rtol=1e-9)


def test_lambda_return_degenerate_cases_exact():
    rng = np.random.default_rng(12)
    r = rng.standard_normal((6, 3))
    v = rng.standard_normal((7, 3))
    ones = np.ones((6, 3))
    # lam = 0: one-step targets r_t + gamma*c_t*v_{t+1}
    got = lambda_returns(r, ones, v, 0.0, 0.9)
    np.testing.assert_array_equal(got, r + 0.9 * v[1:])
    # c == 0: returns collapse to the immediate rewards
    got = lambda_returns(r, np.zeros((6, 3)), v, 0.95, 0.9)
    np.testing.assert_array_equal(got, r)


def test_lambda_return_hand_instance():
    # r=[0,1], c=[1,1], v=[0.5,0.5,1], gamma=0.9, lam=0.95:
    # R_1 = 1 + 0.9*1 = 1.9
    # R_0 = 0 + 0.9*(0.05*0.5 + 0.95*1.9) = 1.647
    r = np.array([0.0, 1.0])
    c = np.array([1.0, 1.0])
    v = np.array([0.5, 0.5, 1.0])
    got = lambda_returns(r, c, v, 0.95, 0.9)
    assert got[1] == pytest.approx(1.9, abs=1e-12)
    assert got[0] == pytest.approx(1.647, abs=1e-12)


# -- 5. free bits ----------------------------------------------------------


def test_free_bits_floor_and_dead_zone_gradient():
    store = ParameterStore(np.float64)
    rng = np.random.default_rng(13)
    # near-uniform logits: every per-sample KL sits far below one nat
    store.add("q", rng.standard_normal((8, 6)) * 0.01, "world")
    store.add("p", rng.standard_normal((8, 6)) * 0.01, "world")
    params = store.bind(["world"])
    q = unimix(params["q"], 2, 3)
    p = unimix(params["p"], 2, 3)
    dyn, rep = balanced_kl_losses(q, p, free_nats=1.0)
    assert np.all(dyn.data >= 1.0) and np.all(rep.data >= 1.0)
    for loss in (dyn, rep):
        grads = gradients(ag.reduce_mean(loss), store, ["world"])
        assert all(np.all(g == 0.0) for g in grads.values())
    # sharp logits push the KL above the floor: the clamp passes through
    store.set_array("q", rng.standard_normal((8, 6)) * 6.0)
    params = store.bind(["world"])
    q = unimix(params["q"], 2, 3)
    p = unimix(params["p"], 2, 3)
    dyn, rep = balanced_kl_losses(q, p, free_nats=1.0)
    assert np.any(dyn.data > 1.0)
    grads = gradients(ag.reduce_mean(rep), store, ["world"])
    assert any(np.any(g != 0.0) for g in grads.values())


# -- 6. correlation bound --------------------------------------------------


def test_correlation_entries_bounded_and_finite():
    rng = np.random.default_rng(14)
    for case in range(1000):
        n = int(rng.choice([8, 16, 32]))
        d = int(rng.choice([2, 4, 8]))
        k = rng.standard_normal((n, d)) * float(rng.uniform(0.1, 10.0))
        e = rng.standard_normal((n, d)) * float(rng.uniform(0.1, 10.0))
        if case % 7 == 0:
            e = k + 0.01 * rng.standard_normal((n, d))  # near-collinear
        out = bt_loss(ag.constant(k), ag.constant(e), 5e-4)
        corr = out.corr.data
        assert np.all(np.isfinite(corr))
        assert np.all(np.abs(corr) <= (n - 1) / n + 1e-6)
        assert np.isfinite(float(out.loss.data))


# -- 7. two-hot/symlog round trips and percentile oracle --------------------


def test_twohot_symlog_round_trips():
    spec = TwoHotSpec(bins=41, limit=20.0)
    rng = np.random.default_rng(15)
    values = np.concatenate(
        [rng.uniform(-20.0, 20.0, 500), np.array([-20.0, -1.0, 0.0, 1.0, 20.0])]
    )
    decoded = two_hot_decode(spec, two_hot_encode(spec, values))
    np.testing.assert_allclose(decoded, values, atol=1e-6)
    x = rng.uniform(-1e6, 1e6, 1000)
    np.testing.assert_allclose(symexp(symlog(x)), x, rtol=1e-12)
    np.testing.assert_allclose(symlog(symexp(x / 1e5)), x / 1e5, rtol=1e-12)


def test_percentile_normalizer_matches_sort_oracle():
    rng = np.random.default_rng(16)
    for _ in range(50):
        # 21 samples put the 5th and 95th percentiles on integer order
        # statistics, so the linear-interpolation definition is exact
        returns = rng.standard_normal(21)
        ordered = np.sort(returns)
        want = ordered[19] - ordered[1]
        norm = ReturnNormalizer(decay=0.99, limit=1.0)
        got = norm.update(returns)
        assert got == want
        assert norm.scale() == max(1.0, want)


# -- 8/9/12 shared training helper -----------------------------------------

# Desk-scale config: single-episode windows (batch_size 1) keep the window's
# static scenery out of the standardized slab, so the redundancy-reduction
# objective has to encode the agent's own motion. The recency-limited replay
# keeps positive rewards dense once the policy starts reaching the target.
LEARN_CONFIG = RunConfig(
    env="grid-reach/standard:8",
    objective="bt",
    total_steps=100_000,
    prefill=1000,
    train_ratio=0.29,
    batch_size=1,
    batch_length=64,
    horizon=10,
    deter=64,
    groups=8,
    classes=8,
    embed=64,
    hidden=64,
    lr=1e-3,
    eta=3e-4,
    replay_capacity=15_000,
    eval_interval=2000,
    eval_episodes=10,
    log_interval=1_000_000,
    checkpoint_interval=1_000_000,
)

_train_cache: dict = {}


def _train_agent(env: str, objective: str, seed: int, total_steps: int, tmp_root):
    key = (env, objective, seed, total_steps)
    if key not in _train_cache:
        out = tmp_root / f"{env.replace('/', '_').replace(':', '_')}-{objective}-s{seed}"
        cfg = LEARN_CONFIG.replace(
            env=env, objective=objective, seed=seed, total_steps=total_steps
        )
        trainer = Trainer(cfg, str(out))
        start = time.perf_counter()
        best = {"rate": 0.0}

        def on_eval(step, stats):
            best["rate"] = max(best["rate"], stats["success_rate"])
            return stats["success_rate"] >= 0.9

        trainer.train(on_eval=on_eval)
        trainer.save_checkpoint(out / "checkpoint")
        elapsed = time.perf_counter() - start
        stats = evaluate_policy(
            trainer.store, cfg, EnvSpec.parse(cfg.env), episodes=20, seed=seed + 1000
        )
        final = max(best["rate"], stats["success_rate"])
        _train_cache[key] = {
            "out": out,
            "elapsed": elapsed,
            "success": final,
            "env_steps": trainer.env_steps,
        }
    return _train_cache[key]


@pytest.fixture(scope="session")
def train_root(tmp_path_factory):
    return tmp_path_factory.mktemp("agents")


# -- 8. desk-scale learning -------------------------------------------------


@pytest.mark.slow
def test_learns_small_grid_within_budget(train_root):
    results = [
        _train_agent("grid-reach/standard:8", "bt", seed, 100_000, train_root)
        for seed in (0, 1, 2)
    ]
    for r in results:
        assert r["elapsed"] <= 1800.0, f"seed took {r['elapsed']:.0f}s"
        assert r["env_steps"] <= 100_000
    rates = sorted(r["success"] for r in results)
    assert rates[1] >= 0.9, f"median success {rates[1]} from {rates}"


# -- 9. subtle-variant representation gap -----------------------------------

SUBTLE_STEPS = 60_000


@pytest.mark.slow
def test_subtle_variant_objective_gap(train_root):
    bt = [
        _train_agent("grid-reach/subtle", "bt", seed, SUBTLE_STEPS, train_root)
        for seed in (0, 1, 2)
    ]
    none = [
        _train_agent("grid-reach/subtle", "none", seed, SUBTLE_STEPS, train_root)
        for seed in (0, 1, 2)
    ]
    bt_med = sorted(r["success"] for r in bt)[1]
    none_med = sorted(r["success"] for r in none)[1]
    assert bt_med - none_med >= 0.2, f"bt {bt_med} vs none {none_med}"


# -- 10. decoder-free speed -------------------------------------------------


def test_bt_gradient_step_faster_than_recon(tiny_config):
    cfg = tiny_config.replace(batch_size=4, batch_length=8, horizon=3)
    bt = bench_grad_steps(cfg.replace(objective="bt"), steps=200, warmup=3)
    recon = bench_grad_steps(cfg.replace(objective="recon"), steps=200, warmup=3)
    assert bt["steps"] >= 200 and recon["steps"] >= 200
    assert bt["mean_step_seconds"] < recon["mean_step_seconds"]


# -- 11. determinism and resume ---------------------------------------------


def test_first_100_gradient_step_losses_reproduce_bitwise(tiny_config, tmp_path):
    cfg = tiny_config.replace(total_steps=64 + 400, seed=5)  # 100 grad steps
    a = Trainer(cfg, str(tmp_path / "a"))
    a.train()
    b = Trainer(cfg, str(tmp_path / "b"))
    b.train()
    assert a.grad_steps >= 100 and b.grad_steps >= 100
    assert a.world_loss_log[:100] == b.world_loss_log[:100]


def test_resume_matches_uninterrupted_losses_bitwise(tiny_config, tmp_path):
    cfg = tiny_config.replace(total_steps=400, seed=6)
    full = Trainer(cfg, str(tmp_path / "full"))
    full.train()

    part = Trainer(cfg, str(tmp_path / "part"))
    part.train(total_steps=200)
    part.save_checkpoint(tmp_path / "part" / "checkpoint")
    cut = len(part.world_loss_log)
    resumed = Trainer.load_checkpoint(str(tmp_path / "part" / "checkpoint"), str(tmp_path / "part"))
    resumed.train(total_steps=400)
    assert full.world_loss_log[cut:] == resumed.world_loss_log
    assert full.world_loss_log[:cut] == part.world_loss_log


# -- 12. saliency sanity ----------------------------------------------------


@pytest.mark.slow
def test_trained_subtle_agent_attends_to_target(train_root):
    from tinydreamer.trainer import build_specs

    r = _train_agent("grid-reach/subtle", "bt", 0, SUBTLE_STEPS, train_root)
    store, cfg = load_params(str(r["out"] / "checkpoint"))
    frozen = store.bind(frozen=True)
    env_spec, wspec, aspec = build_specs(cfg)
    env = make_env(env_spec, seed=4242)
    n = env_spec.size
    patch = 3
    hits = 0
    for episode in range(20):
        obs = env.reset()
        smap = occlusion_saliency(frozen, wspec, aspec, obs, patch=patch, stride=1)
        top = np.unravel_index(np.argmax(smap.scores), smap.scores.shape)
        tr, tc = env.target
        r0, c0 = top[0], top[1]
        hits += int(r0 <= tr < r0 + patch and c0 <= tc < c0 + patch)
        # background-only occlusions at matching fill are exactly zero
        frame = obs.reshape(n, n)
        for i in range(0, n - patch + 1, patch):
            for j in range(0, n - patch + 1, patch):
                if np.all(frame[i : i + patch, j : j + patch] == 0.0):
                    assert smap.scores[i, j] == 0.0
    assert hits >= 12, f"target covered in {hits}/20 frames"
