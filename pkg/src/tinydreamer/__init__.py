"""A decoder-free world-model RL engine with a redundancy-reduction
representation objective, written on a small numpy autodiff core.
"""

__version__ = "0.1.0"

_LAZY = {
    "RunConfig": ("tinydreamer.config", "RunConfig"),
    "Trainer": ("tinydreamer.trainer", "Trainer"),
    "evaluate_policy": ("tinydreamer.trainer", "evaluate_policy"),
    "load_params": ("tinydreamer.trainer", "load_params"),
    "EnvSpec": ("tinydreamer.envs", "EnvSpec"),
    "make_env": ("tinydreamer.envs", "make_env"),
    "WorldSpec": ("tinydreamer.rssm", "WorldSpec"),
}


def __getattr__(name):
    # keep `import tinydreamer` light so the CLI can pin thread limits first
    if name in _LAZY:
        import importlib

        module, attr = _LAZY[name]
        return getattr(importlib.import_module(module), attr)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_LAZY))
