"""Training orchestration: env interaction, gradient steps, eval, checkpoints.

The loop is single-threaded and fully deterministic given (config, seed):
every random draw comes from a named generator spawned from the config seed,
and checkpoints capture parameters, optimizer state, replay contents, env
state and all generator states, so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .agent import (
    ActionSpec,
    ReturnNormalizer,
    actor_loss,
    critic_loss,
    critic_values,
    imagine_rollout,
    init_actor,
    init_critic,
    lambda_returns,
    policy_act,
    update_ema_critic,
)
from .autodiff import ParameterStore, engine as ag, gradients
from .config import RunConfig
from .envs import EnvSpec, make_env
from .metrics import MetricsWriter
from .objectives import WorldCoeffs, world_loss
from .optim import LaProp
from .replay import ReplayBuffer, ReplayNotReady
from .rssm import LatentState, WorldSpec, encode, init_world, observe_sequence, observe_step


class TrainingAborted(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending batch starts."""


RNG_NAMES = ("init", "act", "train", "rollout", "replay")


def build_specs(config: RunConfig) -> tuple[EnvSpec, WorldSpec, ActionSpec]:
    env_spec = EnvSpec.parse(config.env)
    wspec = WorldSpec(
        obs_dim=env_spec.obs_dim,
        action_dim=env_spec.action_dim,
        deter=config.deter,
        groups=config.groups,
        classes=config.classes,
        embed=config.embed,
        hidden=config.hidden,
        layers=config.layers,
        unimix_ratio=config.unimix,
        reward_bins=config.reward_bins,
        reward_limit=config.reward_limit,
    )
    aspec = ActionSpec(env_spec.action_dim, env_spec.discrete)
    return env_spec, wspec, aspec


def init_store(config: RunConfig, rng: np.random.Generator) -> ParameterStore:
    _, wspec, aspec = build_specs(config)
    store = ParameterStore(np.float32)
    for name, arr in init_world(rng, wspec, decoder=config.objective == "recon").items():
        store.add(name, arr, "world")
    critic = init_critic(rng, wspec)
    for name, arr in critic.items():
        store.add(name, arr, "critic")
    for name, arr in critic.items():
        store.add("critic_ema/" + name.split("/", 1)[1], arr.copy(), "critic_ema")
    for name, arr in init_actor(rng, wspec, aspec).items():
        store.add(name, arr, "actor")
    return store


def expected_shapes(config: RunConfig) -> dict[str, tuple]:
    rng = np.random.default_rng(0)
    return {"param/" + n: a.shape for n, a in init_store(config, rng).items()}


class Trainer:
    def __init__(self, config: RunConfig, out_dir: str | Path | None = None):
        config.validate()
        self.config = config
        self.env_spec, self.wspec, self.aspec = build_specs(config)
        self.coeffs = WorldCoeffs(
            config.beta_bt, config.alpha, config.beta_dyn, config.beta_rep, config.free_nats
        )
        seq = np.random.SeedSequence(config.seed)
        self.rngs = dict(zip(RNG_NAMES, map(np.random.default_rng, seq.spawn(len(RNG_NAMES)))))
        self.store = init_store(config, self.rngs["init"])
        self.opt_world = self._make_opt("world")
        self.opt_critic = self._make_opt("critic")
        self.opt_actor = self._make_opt("actor")
        self.normalizer = ReturnNormalizer(config.retnorm_decay, config.retnorm_limit)
        capacity = min(config.replay_capacity, config.total_steps + 1)
        self.replay = ReplayBuffer(capacity, self.env_spec.obs_dim, self.env_spec.action_dim)
        self.env = make_env(self.env_spec, seed=config.seed)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.metrics = MetricsWriter(self.out_dir / "metrics.jsonl") if self.out_dir else None

        self.env_steps = 0
        self.grad_steps = 0
        self.train_debt = 0.0
        self.world_loss_log: list[float] = []  # first steps only, for determinism checks
        self._last_scalars: dict[str, float] = {}
        self._episode_return = 0.0
        self._episode_success = False
        self._recent_returns: list[float] = []
        self._recent_successes: list[float] = []
        self._needs_reset = True
        self._is_first = True
        self._obs = np.zeros(self.env_spec.obs_dim, dtype=np.float32)
        self._prev_action = np.zeros(self.env_spec.action_dim, dtype=np.float32)
        self._act_h = np.zeros((1, self.wspec.deter), dtype=np.float32)
        self._act_z = np.zeros((1, self.wspec.z_dim), dtype=np.float32)

    def _make_opt(self, component: str) -> LaProp:
        c = self.config
        return LaProp(self.store, component, c.lr, c.beta1, c.beta2, c.laprop_eps, c.agc_clip)

    # -- environment interaction ------------------------------------------

    def _random_action(self) -> np.ndarray:
        rng = self.rngs["act"]
        if self.aspec.discrete:
            a = np.zeros(self.aspec.dim, dtype=np.float32)
            a[rng.integers(self.aspec.dim)] = 1.0
            return a
        return rng.uniform(-1.0, 1.0, self.aspec.dim).astype(np.float32)

    def env_step(self) -> None:
        """Advance the environment by one step (or perform a pending reset)."""
        if self._needs_reset:
            obs = self.env.reset()
            self.replay.add_step(obs, np.zeros(self.aspec.dim), 0.0, 1.0, 1.0)
            self._obs = obs
            self._prev_action = np.zeros(self.aspec.dim, dtype=np.float32)
            self._needs_reset = False
            self._is_first = True
            self._episode_return = 0.0
            self._episode_success = False
            self.env_steps += 1
            return

        frozen = self.store.bind(["world", "actor"], frozen=True)
        e = encode(frozen, self.wspec, ag.constant(self._obs[None].astype(np.float32)))
        step = observe_step(
            frozen,
            self.wspec,
            LatentState(ag.constant(self._act_h), ag.constant(self._act_z)),
            self._prev_action[None],
            e,
            np.array([1.0 if self._is_first else 0.0]),
            self.rngs["act"],
        )
        if self.env_steps < self.config.prefill:
            action = self._random_action()
        else:
            pol = policy_act(frozen, self.wspec, self.aspec, step.state.feat(), "sample", self.rngs["act"])
            action = pol.action[0].astype(np.float32)
        result = self.env.step(action)
        self.replay.add_step(result.obs, action, result.reward, result.cont, 0.0)
        self.env_steps += 1
        self._episode_return += result.reward
        self._episode_success = self._episode_success or result.info.get("success", False)
        self._obs = result.obs
        self._prev_action = action
        self._act_h = step.state.h.data
        self._act_z = step.state.z.data
        self._is_first = False
        if result.cont == 0.0:
            self._needs_reset = True
            self._recent_returns.append(self._episode_return)
            self._recent_successes.append(1.0 if self._episode_success else 0.0)
            del self._recent_returns[:-20], self._recent_successes[:-20]

    # -- gradient step -----------------------------------------------------

    def train_step(self) -> dict[str, float]:
        cfg = self.config
        batch = self.replay.sample_batch(cfg.batch_size, cfg.batch_length, self.rngs["replay"])

        # world model
        live_w = self.store.bind(["world"])
        outs = observe_sequence(
            live_w, self.wspec, batch.obs, batch.action, batch.is_first, self.rngs["train"]
        )
        breakdown = world_loss(
            cfg.objective, outs, batch.reward, batch.cont, live_w, self.wspec, self.coeffs, obs=batch.obs
        )
        scalars = breakdown.scalars()
        if not all(np.isfinite(v) for v in scalars.values()):
            raise TrainingAborted(
                f"non-finite world loss at grad step {self.grad_steps}: {scalars}; "
                f"batch window starts {batch.starts.tolist()}"
            )
        grads_w = gradients(breakdown.total, self.store, ["world"])
        scalars["grad_norm/world"] = _global_norm(grads_w)
        self.opt_world.step(grads_w)

        # imagination from every (detached) posterior state
        start_h = np.concatenate([s.h.data for s in outs.states], axis=0)
        start_z = np.concatenate([s.z.data for s in outs.states], axis=0)
        frozen = self.store.bind(frozen=True)
        roll = imagine_rollout(
            frozen,
            self.wspec,
            self.aspec,
            LatentState(ag.constant(start_h), ag.constant(start_z)),
            cfg.horizon,
            self.rngs["rollout"],
        )
        returns = lambda_returns(roll.rewards, roll.conts, roll.values, cfg.return_lambda, cfg.gamma)
        weights = roll.weights(cfg.gamma)
        H = cfg.horizon
        flat_feats = roll.feats[:H].reshape(-1, self.wspec.state_dim)
        flat_returns = returns.reshape(-1)
        flat_weights = weights.reshape(-1)

        # replay-trajectory critic targets (env rewards, critic bootstrap)
        rep_feats = outs.feats.data.reshape(outs.length, outs.batch, -1)  # (T, B, s)
        T = rep_feats.shape[0]
        rep_values = critic_values(
            frozen, self.wspec, ag.constant(rep_feats.reshape(-1, self.wspec.state_dim))
        ).reshape(T, -1)
        rep_returns = lambda_returns(
            batch.reward.T[1:], batch.cont.T[1:], rep_values, cfg.return_lambda, cfg.gamma
        )

        # critic
        live_c = self.store.bind(["critic"])
        ema = self.store.bind(["critic_ema"], frozen=True)
        loss_imag = critic_loss(
            live_c, ema, self.wspec, flat_feats, flat_returns, flat_weights, cfg.critic_ema_reg
        )
        loss_rep = critic_loss(
            live_c,
            ema,
            self.wspec,
            rep_feats[:-1].reshape(-1, self.wspec.state_dim),
            rep_returns.reshape(-1),
            np.ones(rep_returns.size, dtype=np.float32),
            cfg.critic_ema_reg,
        )
        total_critic = ag.add(
            ag.mul(loss_imag, cfg.beta_val), ag.mul(loss_rep, cfg.beta_repval)
        )
        scalars["loss/critic"] = float(total_critic.data)
        if not np.isfinite(scalars["loss/critic"]):
            raise TrainingAborted(
                f"non-finite critic loss at grad step {self.grad_steps}; "
                f"batch window starts {batch.starts.tolist()}"
            )
        grads_c = gradients(total_critic, self.store, ["critic"])
        scalars["grad_norm/critic"] = _global_norm(grads_c)
        self.opt_critic.step(grads_c)
        update_ema_critic(self.store, cfg.critic_ema_decay)

        # actor
        self.normalizer.update(returns)
        adv = (returns - roll.values[:H]) / self.normalizer.scale()
        live_a = self.store.bind(["actor"])
        loss_actor = actor_loss(
            live_a,
            self.wspec,
            self.aspec,
            flat_feats,
            roll.actions.reshape(-1, self.aspec.dim),
            adv.reshape(-1),
            flat_weights,
            cfg.eta,
        )
        scalars["loss/actor"] = float(loss_actor.data)
        if not np.isfinite(scalars["loss/actor"]):
            raise TrainingAborted(
                f"non-finite actor loss at grad step {self.grad_steps}; "
                f"batch window starts {batch.starts.tolist()}"
            )
        grads_a = gradients(loss_actor, self.store, ["actor"])
        scalars["grad_norm/actor"] = _global_norm(grads_a)
        self.opt_actor.step(grads_a)

        scalars["return_norm"] = self.normalizer.value
        scalars["policy_entropy"] = float(roll.entropies.mean())
        self.grad_steps += 1
        if len(self.world_loss_log) < 200:
            self.world_loss_log.append(scalars["loss/world"])
        self._last_scalars = scalars
        return scalars

    # -- main loop ---------------------------------------------------------

    def train(self, total_steps: int | None = None, on_eval=None) -> None:
        cfg = self.config
        total = total_steps if total_steps is not None else cfg.total_steps
        last_time = time.perf_counter()
        while self.env_steps < total:
            self.env_step()
            if self.env_steps >= cfg.prefill:
                self.train_debt += cfg.train_ratio
                while self.train_debt >= 1.0:
                    self.train_debt -= 1.0
                    try:
                        self.train_step()
                    except ReplayNotReady:
                        break
            if self.metrics and self.env_steps % cfg.log_interval == 0:
                now = time.perf_counter()
                record = {
                    "step": self.env_steps,
                    "grad_steps": self.grad_steps,
                    "episode_return": _mean(self._recent_returns),
                    "episode_success": _mean(self._recent_successes),
                    "wall_time_per_step": (now - last_time) / cfg.log_interval,
                    **self._last_scalars,
                }
                last_time = now
                self.metrics.write(record)
            if self.env_steps % cfg.eval_interval == 0:
                stats = self.evaluate()
                if self.metrics:
                    self.metrics.write({"step": self.env_steps, **{f"eval/{k}": v for k, v in stats.items()}})
                if on_eval is not None and on_eval(self.env_steps, stats):
                    break
            if self.out_dir and self.env_steps % cfg.checkpoint_interval == 0:
                self.save_checkpoint(self.out_dir / "checkpoint")
        if self.out_dir:
            self.save_checkpoint(self.out_dir / "checkpoint")

    def evaluate(self, episodes: int | None = None, seed: int | None = None) -> dict:
        episodes = episodes if episodes is not None else self.config.eval_episodes
        seed = seed if seed is not None else self.config.seed + 999
        return evaluate_policy(self.store, self.config, self.env_spec, episodes, seed)

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        arrays: dict[str, np.ndarray] = {}
        for name, arr in self.store.items():
            arrays["param/" + name] = arr
        for name in self.store.names():
            state = self.store.opt_state(name)
            if state:
                arrays[f"opt/{name}/m"] = state["m"]
                arrays[f"opt/{name}/v"] = state["v"]
                arrays[f"opt/{name}/t"] = np.array([state["t"]], dtype=np.int64)
        for key, arr in self.replay.state_arrays().items():
            arrays["replay/" + key] = arr
        arrays["act/h"] = self._act_h
        arrays["act/z"] = self._act_z
        arrays["act/obs"] = self._obs
        arrays["act/prev_action"] = self._prev_action
        meta = {
            "config": self.config.to_dict(),
            "env_steps": self.env_steps,
            "grad_steps": self.grad_steps,
            "train_debt": self.train_debt,
            "needs_reset": self._needs_reset,
            "is_first": self._is_first,
            "episode_return": self._episode_return,
            "episode_success": self._episode_success,
            "recent_returns": self._recent_returns,
            "recent_successes": self._recent_successes,
            "normalizer": {
                "value": self.normalizer.value,
                "initialized": self.normalizer.initialized,
            },
            "opt_skipped": {
                "world": self.opt_world.skipped,
                "critic": self.opt_critic.skipped,
                "actor": self.opt_actor.skipped,
            },
            "rng": {name: rng.bit_generator.state for name, rng in self.rngs.items()},
            "env": self.env.get_state(),
        }
        ckpt.save(path, arrays, meta)

    @classmethod
    def load_checkpoint(cls, path: str | Path, out_dir: str | Path | None = None) -> "Trainer":
        arrays, meta = ckpt.load(path)
        config = RunConfig.from_dict(meta["config"])
        ckpt.validate_shapes(arrays, expected_shapes(config))
        trainer = cls(config, out_dir)
        for name in trainer.store.names():
            trainer.store.set_array(name, arrays["param/" + name])
            if f"opt/{name}/m" in arrays:
                state = trainer.store.opt_state(name)
                state["m"] = arrays[f"opt/{name}/m"]
                state["v"] = arrays[f"opt/{name}/v"]
                state["t"] = int(arrays[f"opt/{name}/t"][0])
        trainer.replay.load_state_arrays(
            {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("replay/")}
        )
        trainer._act_h = arrays["act/h"]
        trainer._act_z = arrays["act/z"]
        trainer._obs = arrays["act/obs"]
        trainer._prev_action = arrays["act/prev_action"]
        trainer.env_steps = meta["env_steps"]
        trainer.grad_steps = meta["grad_steps"]
        trainer.train_debt = meta["train_debt"]
        trainer._needs_reset = meta["needs_reset"]
        trainer._is_first = meta["is_first"]
        trainer._episode_return = meta["episode_return"]
        trainer._episode_success = meta["episode_success"]
        trainer._recent_returns = list(meta["recent_returns"])
        trainer._recent_successes = list(meta["recent_successes"])
        trainer.normalizer.value = meta["normalizer"]["value"]
        trainer.normalizer.initialized = meta["normalizer"]["initialized"]
        trainer.opt_world.skipped = meta["opt_skipped"]["world"]
        trainer.opt_critic.skipped = meta["opt_skipped"]["critic"]
        trainer.opt_actor.skipped = meta["opt_skipped"]["actor"]
        for name, state in meta["rng"].items():
            trainer.rngs[name].bit_generator.state = state
        trainer.env.set_state(meta["env"])
        return trainer


def load_params(path: str | Path) -> tuple[ParameterStore, RunConfig]:
    """Load just the parameters and config from a checkpoint (no replay)."""
    arrays, meta = ckpt.load(path)
    config = RunConfig.from_dict(meta["config"])
    ckpt.validate_shapes(arrays, expected_shapes(config))
    store = init_store(config, np.random.default_rng(0))
    for name in store.names():
        store.set_array(name, arrays["param/" + name])
    return store, config


def bench_grad_steps(config: RunConfig, steps: int = 200, warmup: int = 5) -> dict:
    """Mean wall time per gradient step after a random-policy replay fill."""
    trainer = Trainer(config, None)
    need = max(2 * config.batch_size * config.batch_length, config.batch_length + 1)
    while trainer.replay.total < need:
        if trainer._needs_reset:
            obs = trainer.env.reset()
            trainer.replay.add_step(obs, np.zeros(trainer.aspec.dim), 0.0, 1.0, 1.0)
            trainer._needs_reset = False
        else:
            action = trainer._random_action()
            result = trainer.env.step(action)
            trainer.replay.add_step(result.obs, action, result.reward, result.cont, 0.0)
            trainer._needs_reset = result.cont == 0.0
    for _ in range(warmup):
        trainer.train_step()
    start = time.perf_counter()
    for _ in range(steps):
        trainer.train_step()
    elapsed = time.perf_counter() - start
    return {
        "objective": config.objective,
        "steps": steps,
        "mean_step_seconds": elapsed / steps,
        "total_seconds": elapsed,
    }


def evaluate_policy(
    store: ParameterStore,
    config: RunConfig,
    env_spec: EnvSpec,
    episodes: int = 10,
    seed: int = 0,
) -> dict:
    """Mode-action rollouts in a fresh environment; aggregate statistics."""
    _, wspec, aspec = build_specs(config)
    if env_spec.obs_dim != wspec.obs_dim or env_spec.action_dim != aspec.dim:
        raise ValueError(
            f"checkpoint/env mismatch: model expects obs {wspec.obs_dim}/action {aspec.dim}, "
            f"env provides obs {env_spec.obs_dim}/action {env_spec.action_dim}"
        )
    frozen = store.bind(["world", "actor"], frozen=True)
    rng = np.random.default_rng(seed)
    env = make_env(env_spec, seed=seed)
    returns, successes = [], []
    for _ in range(episodes):
        obs = env.reset()
        h = np.zeros((1, wspec.deter), dtype=np.float32)
        z = np.zeros((1, wspec.z_dim), dtype=np.float32)
        prev_action = np.zeros(aspec.dim, dtype=np.float32)
        is_first = 1.0
        ep_return = 0.0
        success = False
        while True:
            e = encode(frozen, wspec, ag.constant(obs[None].astype(np.float32)))
            step = observe_step(
                frozen,
                wspec,
                LatentState(ag.constant(h), ag.constant(z)),
                prev_action[None],
                e,
                np.array([is_first]),
                rng,
            )
            pol = policy_act(frozen, wspec, aspec, step.state.feat(), "mode")
            result = env.step(pol.action[0])
            ep_return += result.reward
            success = success or result.info.get("success", False)
            h, z = step.state.h.data, step.state.z.data
            prev_action = pol.action[0].astype(np.float32)
            obs = result.obs
            is_first = 0.0
            if result.cont == 0.0:
                break
        returns.append(ep_return)
        successes.append(1.0 if success else 0.0)
    returns = np.asarray(returns)
    return {
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "success_rate": float(np.mean(successes)),
        "episodes": episodes,
    }


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
