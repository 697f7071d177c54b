"""Post-hoc analysis: occlusion saliency over policy distributions, and
plot-ready aggregation of metrics streams.

Saliency is computed mode-free: the first-frame latent state uses the mode of
the prior and posterior instead of samples, so scores are deterministic given
the checkpoint and the frame, and occluding pure background with a matching
fill scores exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import ActionSpec
from .autodiff import engine as ag
from .metrics import read_metrics
from .nets import gru_step, linear, mlp_forward, mode_onehot, unimix
from .rssm import WorldSpec, encode, posterior_params, prior_params


class AnalysisError(ValueError):
    pass


@dataclass
class SaliencyMap:
    scores: np.ndarray  # (G, G) with G = ceil(n / stride)
    patch: int
    stride: int
    fill: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise AnalysisError("saliency scores must be finite")
        if np.any(self.scores < 0):
            raise AnalysisError("saliency scores must be nonnegative")


def policy_distribution(
    params, wspec: WorldSpec, aspec: ActionSpec, obs: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None]:
    """Deterministic first-frame policy distribution for one observation.

    Builds the latent state as a reset step (zero history, zero action) with
    mode categoricals throughout. Returns (probs, None) for a discrete policy
    and (mean, std) for a continuous one.
    """
    obs = np.asarray(obs, dtype=np.float32).reshape(1, -1)
    e = encode(params, wspec, ag.constant(obs))
    h0 = ag.constant(np.zeros((1, wspec.deter), dtype=np.float32))
    z0 = ag.constant(mode_onehot(prior_params(params, wspec, h0)))
    action0 = ag.constant(np.zeros((1, wspec.action_dim), dtype=np.float32))
    x = ag.concat([h0, z0, action0], axis=-1)
    h = gru_step(params, "world/gru", h0, x)
    z = ag.constant(mode_onehot(posterior_params(params, wspec, h, e)))
    feats = ag.concat([h, z], axis=-1)
    trunk = mlp_forward(params, "actor/mlp", wspec.mlp(wspec.state_dim), feats)
    raw = linear(params, "actor/head", trunk)
    if aspec.discrete:
        dist = unimix(raw, 1, aspec.dim, ratio=0.01)
        return dist.probs.data[0].astype(np.float64), None
    mean = np.tanh(raw.data[0, : aspec.dim]).astype(np.float64)
    std = 0.1 + 0.9 / (1.0 + np.exp(-raw.data[0, aspec.dim :])).astype(np.float64)
    return mean, std


def _divergence(ref, occ, discrete: bool) -> float:
    if discrete:
        p, q = ref[0], occ[0]
        return float(np.sum(p * (np.log(p) - np.log(q))))
    m1, s1 = ref
    m2, s2 = occ
    # symmetric KL of diagonal Gaussians
    kl12 = np.sum(np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5)
    kl21 = np.sum(np.log(s1 / s2) + (s2**2 + (m2 - m1) ** 2) / (2 * s1**2) - 0.5)
    return float(kl12 + kl21)


def occlusion_saliency(
    params,
    wspec: WorldSpec,
    aspec: ActionSpec,
    obs: np.ndarray,
    patch: int = 3,
    stride: int = 1,
    fill: float = 0.0,
) -> SaliencyMap:
    """Score each patch placement by how much occluding it moves the policy."""
    n = int(round(math.sqrt(wspec.obs_dim)))
    if n * n != wspec.obs_dim:
        raise AnalysisError(f"observation of size {wspec.obs_dim} is not a square frame")
    if patch > n:
        raise AnalysisError(f"patch {patch} exceeds frame size {n}")
    if patch < 1 or stride < 1:
        raise AnalysisError("patch and stride must be positive")
    frame = np.asarray(obs, dtype=np.float32).reshape(n, n)
    ref = policy_distribution(params, wspec, aspec, frame.reshape(-1))
    side = math.ceil(n / stride)
    scores = np.zeros((side, side))
    for i, r in enumerate(range(0, n, stride)):
        for j, c in enumerate(range(0, n, stride)):
            window = frame[r : r + patch, c : c + patch]
            if np.all(window == fill):
                continue  # identical input, divergence is zero by construction
            occluded = frame.copy()
            occluded[r : r + patch, c : c + patch] = fill
            occ = policy_distribution(params, wspec, aspec, occluded.reshape(-1))
            scores[i, j] = max(_divergence(ref, occ, aspec.discrete), 0.0)
    return SaliencyMap(scores, patch, stride, fill)


def save_saliency(smap: SaliencyMap, path: str | Path) -> None:
    """Write the score grid as tab-delimited text plus a portable graymap."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"# occlusion saliency: patch={smap.patch} stride={smap.stride} fill={smap.fill}\n"
    rows = "\n".join("\t".join(f"{v:.8g}" for v in row) for row in smap.scores)
    path.write_text(header + rows + "\n")
    top = smap.scores.max()
    gray = np.zeros_like(smap.scores) if top == 0 else smap.scores / top
    levels = np.round(gray * 255).astype(int)
    pgm_rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
    side = smap.scores.shape[0]
    path.with_suffix(".pgm").write_text(f"P2\n{side} {side}\n255\n{pgm_rows}\n")


def export_curves(paths, key: str) -> dict[str, np.ndarray]:
    """Align metrics streams on a shared step grid and aggregate.

    The step grid is the sorted union of all steps at which any run reported
    ``key``; each run is carried forward from its last reported value (runs
    contribute only from their first report onward).
    """
    paths = list(paths)
    if not paths:
        raise AnalysisError("need at least one metrics stream")
    runs = []
    for p in paths:
        series = [(r["step"], float(r[key])) for r in read_metrics(p) if key in r]
        if not series:
            raise AnalysisError(f"no records with key {key!r} in {p}")
        runs.append(sorted(series))
    steps = np.array(sorted({s for run in runs for s, _ in run}))
    aligned = np.full((len(runs), steps.size), np.nan)
    for i, run in enumerate(runs):
        run_steps = np.array([s for s, _ in run])
        run_vals = np.array([v for _, v in run])
        idx = np.searchsorted(run_steps, steps, side="right") - 1
        valid = idx >= 0
        aligned[i, valid] = run_vals[idx[valid]]
    return {
        "step": steps,
        "mean": np.nanmean(aligned, axis=0),
        "median": np.nanmedian(aligned, axis=0),
        "std": np.nanstd(aligned, axis=0),
    }


def write_curves(table: dict[str, np.ndarray], path: str | Path, key: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# aggregated learning curves for {key!r}; "
        "runs aligned by step with last-value carry-forward",
        "step\tmean\tmedian\tstd",
    ]
    for i in range(table["step"].size):
        lines.append(
            f"{int(table['step'][i])}\t{table['mean'][i]:.8g}"
            f"\t{table['median'][i]:.8g}\t{table['std'][i]:.8g}"
        )
    path.write_text("\n".join(lines) + "\n")
