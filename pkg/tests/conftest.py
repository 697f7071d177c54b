import pytest

from tinydreamer.config import RunConfig


@pytest.fixture
def tiny_config():
    """A config small enough for second-scale training in tests."""
    return RunConfig(
        env="grid-reach/standard",
        total_steps=240,
        prefill=64,
        train_ratio=0.25,
        eval_interval=1_000_000,
        eval_episodes=2,
        checkpoint_interval=1_000_000,
        log_interval=1_000_000,
        batch_size=4,
        batch_length=16,
        deter=32,
        embed=32,
        hidden=32,
        horizon=5,
        seed=0,
    )
