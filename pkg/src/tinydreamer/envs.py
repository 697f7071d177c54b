"""Desk-scale pixel control environments.

Two tasks (discrete grid movement and continuous point control), each with a
"subtle" variant that shrinks the rendered target to a single dim pixel so
that representation precision, not control, is the bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NAMES = ("grid-reach", "point-reach")
VARIANTS = ("standard", "subtle")


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str = "grid-reach"
    variant: str = "standard"
    size: int = 16
    limit: int = 100

    def __post_init__(self):
        if self.name not in NAMES:
            raise EnvError(f"unknown env {self.name!r}")
        if self.variant not in VARIANTS:
            raise EnvError(f"unknown variant {self.variant!r}")
        if self.size < 8:
            raise EnvError(f"frame size must be >= 8, got {self.size}")

    @property
    def obs_dim(self) -> int:
        return self.size * self.size

    @property
    def action_dim(self) -> int:
        return 5 if self.name == "grid-reach" else 2

    @property
    def discrete(self) -> bool:
        return self.name == "grid-reach"

    @staticmethod
    def parse(text: str) -> "EnvSpec":
        """Parse a 'name/variant' selector with an optional frame size.

        Examples: 'grid-reach/subtle', 'grid-reach/standard:8'.
        """
        parts = text.split("/")
        if len(parts) != 2:
            raise EnvError(f"expected 'name/variant[:size]', got {text!r}")
        variant, _, size = parts[1].partition(":")
        if size:
            try:
                n = int(size)
            except ValueError:
                raise EnvError(f"invalid frame size {size!r} in {text!r}") from None
            return EnvSpec(name=parts[0], variant=variant, size=n)
        return EnvSpec(name=parts[0], variant=variant)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    cont: float
    info: dict = field(default_factory=dict)


AGENT_INTENSITY = 0.5
TARGET_INTENSITY = 1.0
SUBTLE_INTENSITY = 0.3

GRID_MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]])  # stay/up/down/left/right


class GridReach:
    """Move one cell per step toward a target cell; sparse terminal reward."""

    def __init__(self, spec: EnvSpec, seed: int = 0):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._active = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        n = self.spec.size
        cells = self._rng.choice(n * n, size=2, replace=False)
        self.agent = np.array([cells[0] // n, cells[0] % n])
        self.target = np.array([cells[1] // n, cells[1] % n])
        self.steps = 0
        self._active = True
        return self.render()

    def step(self, action) -> StepResult:
        if not self._active:
            raise EnvError("step called on a finished episode; call reset first")
        idx = int(np.argmax(action)) if np.ndim(action) > 0 else int(action)
        n = self.spec.size
        self.agent = np.clip(self.agent + GRID_MOVES[idx], 0, n - 1)
        self.steps += 1
        success = bool(np.array_equal(self.agent, self.target))
        done = success or self.steps >= self.spec.limit
        if done:
            self._active = False
        reward = 1.0 if success else 0.0
        return StepResult(
            self.render(), reward, 0.0 if done else 1.0, {"success": success, "step": self.steps}
        )

    def get_state(self) -> dict:
        return {
            "agent": self.agent.tolist(),
            "target": self.target.tolist(),
            "steps": self.steps,
            "active": self._active,
            "rng": self._rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.agent = np.array(state["agent"])
        self.target = np.array(state["target"])
        self.steps = state["steps"]
        self._active = state["active"]
        self._rng.bit_generator.state = state["rng"]

    def render(self) -> np.ndarray:
        n = self.spec.size
        frame = np.zeros((n, n), dtype=np.float32)
        tr, tc = self.target
        if self.spec.variant == "standard":
            r0, r1 = max(tr - 1, 0), min(tr + 2, n)
            c0, c1 = max(tc - 1, 0), min(tc + 2, n)
            frame[r0:r1, c0:c1] = TARGET_INTENSITY
        else:
            frame[tr, tc] = SUBTLE_INTENSITY
        ar, ac = self.agent
        frame[ar, ac] = max(frame[ar, ac], AGENT_INTENSITY)
        return frame.reshape(-1)


class PointReach:
    """Continuous 2-d acceleration control toward a fixed target position."""

    DAMPING = 0.9
    ACCEL = 0.05

    def __init__(self, spec: EnvSpec, seed: int = 0):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._active = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        n = self.spec.size
        while True:
            self.pos = self._rng.random(2)
            self.target = self._rng.random(2)
            if np.linalg.norm(self.pos - self.target) > 3.0 / n:
                break
        self.vel = np.zeros(2)
        self.steps = 0
        self._active = True
        return self.render()

    def step(self, action) -> StepResult:
        if not self._active:
            raise EnvError("step called on a finished episode; call reset first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        self.vel = self.DAMPING * self.vel + self.ACCEL * a
        self.pos = np.clip(self.pos + self.vel, 0.0, 1.0)
        self.steps += 1
        n = self.spec.size
        success = bool(np.linalg.norm(self.pos - self.target) <= 1.5 / n)
        done = success or self.steps >= self.spec.limit
        if done:
            self._active = False
        reward = 1.0 if success else 0.0
        return StepResult(
            self.render(), reward, 0.0 if done else 1.0, {"success": success, "step": self.steps}
        )

    def get_state(self) -> dict:
        return {
            "pos": self.pos.tolist(),
            "vel": self.vel.tolist(),
            "target": self.target.tolist(),
            "steps": self.steps,
            "active": self._active,
            "rng": self._rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.pos = np.array(state["pos"])
        self.vel = np.array(state["vel"])
        self.target = np.array(state["target"])
        self.steps = state["steps"]
        self._active = state["active"]
        self._rng.bit_generator.state = state["rng"]

    def render(self) -> np.ndarray:
        n = self.spec.size
        centers = (np.arange(n) + 0.5) / n
        yy, xx = np.meshgrid(centers, centers, indexing="ij")
        frame = np.zeros((n, n), dtype=np.float32)
        if self.spec.variant == "standard":
            t_mask = np.hypot(yy - self.target[1], xx - self.target[0]) <= 2.0 / n
            frame[t_mask] = TARGET_INTENSITY
        else:
            ti = min(int(self.target[1] * n), n - 1)
            tj = min(int(self.target[0] * n), n - 1)
            frame[ti, tj] = SUBTLE_INTENSITY
        a_mask = np.hypot(yy - self.pos[1], xx - self.pos[0]) <= 2.0 / n
        frame[a_mask] = np.maximum(frame[a_mask], AGENT_INTENSITY)
        return frame.reshape(-1)


def make_env(spec: EnvSpec, seed: int = 0):
    if spec.name == "grid-reach":
        return GridReach(spec, seed)
    return PointReach(spec, seed)
